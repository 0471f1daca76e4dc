//! Bounded concurrent popularity tracker: a multi-bit clock over the most
//! recently read keys.
//!
//! Each tracked key carries one packed byte: the top two bits hold the
//! clock value (0..=3), the bottom six bits a fingerprint of the record
//! version (low six bits of a hash of the seqno). A first read inserts the
//! key at clock 1; a re-read of the same version promotes it to 3; a read
//! of a newer version resets it to 1. Eviction runs off the read path: a
//! clock hand sweeps the table, decrementing live entries and removing the
//! ones that reach 0. Every mutation pushes a delta into the shared
//! [`ClockHistogram`](crate::mapper::ClockHistogram).

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{BuildHasher, BuildHasherDefault, Hash, Hasher};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::mapper::ClockHistogram;

const SHARDS: usize = 128;
const CLOCK_MAX: u8 = 3;
const FP_MASK: u8 = 0x3f;

/// Outcome of a `track_read`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockTransition {
    /// Key was not tracked; inserted at clock 1.
    Inserted,
    /// Key was tracked at the same version; clock set to 3.
    Promoted,
    /// Key was tracked at an older version; treated as new (clock 1).
    ResetAsNew,
}

fn pack(clock: u8, fp: u8) -> u8 {
    (clock << 6) | (fp & FP_MASK)
}

fn unpack(v: u8) -> (u8, u8) {
    (v >> 6, v & FP_MASK)
}

/// Low six bits of a 64-bit mix of the record seqno.
pub fn version_fingerprint(seqno: u64) -> u8 {
    // splitmix64 finalizer
    let mut z = seqno.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) as u8 & FP_MASK
}

#[derive(Debug, Default, Clone, Copy, serde::Serialize)]
pub struct TrackerStats {
    pub inserts: u64,
    pub promotions: u64,
    pub resets: u64,
    pub lookups: u64,
    pub evictions: u64,
}

pub struct Tracker {
    // fixed-seed hashers throughout: shard assignment and in-shard sweep
    // order must not vary between engine instances, or identical traces
    // diverge in eviction timing and SST scores
    shards: Vec<Mutex<HashMap<Box<[u8]>, u8, BuildHasherDefault<DefaultHasher>>>>,
    hasher: BuildHasherDefault<DefaultHasher>,
    capacity: usize,
    tracked: AtomicUsize,
    /// Clock hand: next shard to visit, persists across eviction passes.
    hand: AtomicUsize,
    histogram: Arc<ClockHistogram>,
    inserts: AtomicU64,
    promotions: AtomicU64,
    resets: AtomicU64,
    lookups: AtomicU64,
    evictions: AtomicU64,
}

impl Tracker {
    pub fn new(capacity: usize, histogram: Arc<ClockHistogram>) -> Tracker {
        Tracker {
            shards: (0..SHARDS).map(|_| Mutex::new(HashMap::default())).collect(),
            hasher: BuildHasherDefault::<DefaultHasher>::default(),
            capacity,
            tracked: AtomicUsize::new(0),
            hand: AtomicUsize::new(0),
            histogram,
            inserts: AtomicU64::new(0),
            promotions: AtomicU64::new(0),
            resets: AtomicU64::new(0),
            lookups: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        }
    }

    fn shard_of(&self, key: &[u8]) -> usize {
        let mut h = self.hasher.build_hasher();
        key.hash(&mut h);
        (h.finish() % SHARDS as u64) as usize
    }

    /// Record a successful point read of `key` at version `seqno`.
    /// Never evicts; over-capacity is tolerated until the background pass
    /// catches up.
    pub fn track_read(&self, key: &[u8], seqno: u64) -> ClockTransition {
        let fp = version_fingerprint(seqno);
        let mut shard = self.shards[self.shard_of(key)].lock().unwrap();
        match shard.get_mut(key) {
            None => {
                shard.insert(key.into(), pack(1, fp));
                self.tracked.fetch_add(1, Ordering::Relaxed);
                self.histogram.apply_delta(None, Some(1));
                self.inserts.fetch_add(1, Ordering::Relaxed);
                ClockTransition::Inserted
            }
            Some(entry) => {
                let (clock, old_fp) = unpack(*entry);
                if old_fp == fp {
                    *entry = pack(CLOCK_MAX, fp);
                    self.histogram.apply_delta(Some(clock), Some(CLOCK_MAX));
                    self.promotions.fetch_add(1, Ordering::Relaxed);
                    ClockTransition::Promoted
                } else {
                    *entry = pack(1, fp);
                    self.histogram.apply_delta(Some(clock), Some(1));
                    self.resets.fetch_add(1, Ordering::Relaxed);
                    ClockTransition::ResetAsNew
                }
            }
        }
    }

    /// Read-only probe; never mutates clock bits.
    pub fn lookup(&self, key: &[u8]) -> Option<(u8, u8)> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        let shard = self.shards[self.shard_of(key)].lock().unwrap();
        shard.get(key).map(|v| unpack(*v))
    }

    /// Clock value of `key`, if tracked.
    pub fn clock_of(&self, key: &[u8]) -> Option<u8> {
        self.lookup(key).map(|(clock, _)| clock)
    }

    /// One eviction pass: advance the hand over the table, removing
    /// clock-0 entries (up to `target_count`) and decrementing the rest.
    /// Sweeps at most one full cycle. Returns the number evicted.
    pub fn run_eviction_pass(&self, target_count: usize) -> usize {
        let mut evicted = 0;
        for _ in 0..SHARDS {
            if evicted >= target_count {
                break;
            }
            let idx = self.hand.fetch_add(1, Ordering::Relaxed) % SHARDS;
            let mut shard = self.shards[idx].lock().unwrap();
            let before = shard.len();
            shard.retain(|_, entry| {
                let (clock, fp) = unpack(*entry);
                if clock == 0 {
                    if evicted < target_count {
                        evicted += 1;
                        self.histogram.apply_delta(Some(0), None);
                        return false;
                    }
                    return true;
                }
                self.histogram.apply_delta(Some(clock), Some(clock - 1));
                *entry = pack(clock - 1, fp);
                true
            });
            let removed = before - shard.len();
            if removed > 0 {
                self.tracked.fetch_sub(removed, Ordering::Relaxed);
                self.evictions.fetch_add(removed as u64, Ordering::Relaxed);
            }
        }
        evicted
    }

    /// Background maintenance entry point: when over capacity, run passes
    /// until the table is back to 95% of capacity. Returns total evicted.
    pub fn maybe_evict(&self) -> usize {
        let low = self.capacity - self.capacity / 20;
        let mut total = 0;
        // clock values cap at 3, so a handful of sweeps suffices
        for _ in 0..8 {
            let count = self.tracked_count();
            if count <= low.max(1) {
                break;
            }
            total += self.run_eviction_pass(count - low);
        }
        total
    }

    pub fn tracked_count(&self) -> usize {
        self.tracked.load(Ordering::Relaxed)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn stats(&self) -> TrackerStats {
        TrackerStats {
            inserts: self.inserts.load(Ordering::Relaxed),
            promotions: self.promotions.load(Ordering::Relaxed),
            resets: self.resets.load(Ordering::Relaxed),
            lookups: self.lookups.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracker(capacity: usize) -> (Arc<ClockHistogram>, Tracker) {
        let h = Arc::new(ClockHistogram::new());
        (h.clone(), Tracker::new(capacity, h))
    }

    #[test]
    fn clock_semantics() {
        let (_, t) = tracker(100);
        assert_eq!(t.track_read(b"k", 7), ClockTransition::Inserted);
        assert_eq!(t.clock_of(b"k"), Some(1));

        assert_eq!(t.track_read(b"k", 7), ClockTransition::Promoted);
        assert_eq!(t.clock_of(b"k"), Some(3));

        // key updated: new seqno means new fingerprint, treated as new
        let mut new_seq = 8;
        while version_fingerprint(new_seq) == version_fingerprint(7) {
            new_seq += 1;
        }
        assert_eq!(t.track_read(b"k", new_seq), ClockTransition::ResetAsNew);
        let (clock, fp) = t.lookup(b"k").unwrap();
        assert_eq!(clock, 1);
        assert_eq!(fp, version_fingerprint(new_seq));
    }

    #[test]
    fn lookup_untracked_absent() {
        let (_, t) = tracker(10);
        assert_eq!(t.lookup(b"nope"), None);
        t.track_read(b"yes", 1);
        assert_eq!(t.lookup(b"yes"), Some((1, version_fingerprint(1))));
    }

    #[test]
    fn single_clock0_entry_evicted() {
        let (_, t) = tracker(10);
        t.track_read(b"a", 1); // clock 1
        assert_eq!(t.run_eviction_pass(1), 0); // decremented to 0
        assert_eq!(t.clock_of(b"a"), Some(0));
        assert_eq!(t.run_eviction_pass(1), 1);
        assert_eq!(t.lookup(b"a"), None);
        assert_eq!(t.tracked_count(), 0);
    }

    #[test]
    fn clock3_needs_three_decrements_then_removal() {
        let (_, t) = tracker(10);
        t.track_read(b"a", 1);
        t.track_read(b"a", 1); // clock 3
        for expected in [2, 1, 0] {
            assert_eq!(t.run_eviction_pass(1), 0);
            assert_eq!(t.clock_of(b"a"), Some(expected));
        }
        assert_eq!(t.run_eviction_pass(1), 1);
        assert_eq!(t.lookup(b"a"), None);
    }

    #[test]
    fn histogram_conservation() {
        let (h, t) = tracker(1000);
        for i in 0..500u64 {
            t.track_read(format!("key{i}").as_bytes(), i);
        }
        for i in 0..200u64 {
            t.track_read(format!("key{i}").as_bytes(), i);
        }
        t.run_eviction_pass(50);
        assert_eq!(h.total() as usize, t.tracked_count());
    }

    #[test]
    fn steady_state_count_within_capacity_slack() {
        let capacity = 500;
        let (h, t) = tracker(capacity);
        // sustained one-time reads of many distinct keys with background
        // maintenance interleaved
        for i in 0..10_000u64 {
            t.track_read(format!("one-shot-{i}").as_bytes(), i);
            if t.tracked_count() > capacity {
                t.maybe_evict();
            }
        }
        t.maybe_evict();
        let bound = capacity + capacity / 20;
        assert!(
            t.tracked_count() <= bound,
            "tracked {} > {}",
            t.tracked_count(),
            bound
        );
        assert_eq!(h.total() as usize, t.tracked_count());
    }

    #[test]
    fn hot_set_has_higher_mean_clock_than_cold() {
        let (_, t) = tracker(10_000);
        let hot: Vec<String> = (0..50).map(|i| format!("hot{i}")).collect();
        let cold: Vec<String> = (0..500).map(|i| format!("cold{i}")).collect();
        for round in 0..20 {
            for k in &hot {
                t.track_read(k.as_bytes(), 1);
            }
            if round % 4 == 0 {
                for k in &cold {
                    t.track_read(k.as_bytes(), 1);
                }
            }
            t.run_eviction_pass(10);
        }
        let mean = |keys: &[String]| -> f64 {
            let sum: u64 = keys
                .iter()
                .filter_map(|k| t.clock_of(k.as_bytes()).map(u64::from))
                .sum();
            sum as f64 / keys.len() as f64
        };
        assert!(mean(&hot) > mean(&cold), "hot {} cold {}", mean(&hot), mean(&cold));
    }

    #[test]
    fn concurrent_eviction_and_reads_yield_sane_values() {
        use std::sync::atomic::AtomicBool;
        let (h, t) = tracker(2_000);
        let t = Arc::new(t);
        let stop = Arc::new(AtomicBool::new(false));

        let evictor = {
            let t = t.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    t.maybe_evict();
                }
            })
        };
        let mut readers = Vec::new();
        for r in 0..4 {
            let t = t.clone();
            readers.push(std::thread::spawn(move || {
                for i in 0..20_000u64 {
                    let key = format!("k{}", (i * 7 + r) % 3_000);
                    t.track_read(key.as_bytes(), i % 16);
                    if let Some((clock, _)) = t.lookup(key.as_bytes()) {
                        assert!(clock <= 3);
                    }
                }
            }));
        }
        for r in readers {
            r.join().unwrap();
        }
        stop.store(true, Ordering::Relaxed);
        evictor.join().unwrap();
        t.maybe_evict();
        assert_eq!(h.total() as usize, t.tracked_count());
    }

    #[test]
    fn track_read_stays_off_the_slow_path() {
        // expected O(1): no full-table work on the read path, asserted as a
        // generous per-op wall bound over a warm table
        let (_, t) = tracker(100_000);
        for i in 0..50_000u64 {
            t.track_read(format!("warm{i}").as_bytes(), i);
        }
        let start = std::time::Instant::now();
        let n = 50_000u64;
        for i in 0..n {
            t.track_read(format!("warm{}", i % 50_000).as_bytes(), i);
        }
        let per_op = start.elapsed().as_nanos() as f64 / n as f64;
        assert!(per_op < 50_000.0, "track_read took {per_op} ns/op");
    }
}
