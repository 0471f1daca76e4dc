//! Read-aware compaction: popularity-scored victim selection and the
//! pinned-compaction merge.
//!
//! The merge is a standard streaming k-way merge over sorted inputs from
//! two adjacent levels, ordered by (key asc, seqno desc) so the newest
//! version of a key is seen first and older versions are dropped. Each
//! surviving record is then routed: keys satisfying the pin policy stay in
//! (or rise to) the upper level, everything else is compacted down. Both
//! output streams stay sorted, so the streaming property is preserved.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use crate::engine::manifest::TableMeta;
use crate::engine::record::Record;
use crate::error::Result;
use crate::mapper::PinPolicy;
use crate::tracker::Tracker;

/// Exponent boosting popular keys' contribution to the SST score.
pub const SCORE_WEIGHT: u32 = 3;

/// Contribution of untracked keys.
pub const UNTRACKED_SCORE: i64 = -1;

/// SST popularity score: sum of per-key clock values raised to `n`;
/// untracked keys contribute -1. With n=3 the contributions are
/// {-1, 0, 1, 8, 27}.
pub fn compute_score<I>(clocks: I, n: u32) -> i64
where
    I: IntoIterator<Item = Option<u8>>,
{
    clocks
        .into_iter()
        .map(|c| match c {
            None => UNTRACKED_SCORE,
            Some(c) => (c as i64).pow(n),
        })
        .sum()
}

/// Compaction victim: the file with the lowest popularity score; ties go
/// to the oldest (lowest) file id.
pub fn select_compaction_file(files: &[TableMeta]) -> Option<&TableMeta> {
    files.iter().min_by_key(|t| (t.score, t.file_id))
}

/// Routing constraints for one pinned-compaction job.
#[derive(Debug, Clone)]
pub struct MergeLimits {
    /// Remaining byte budget for pinned (upper-level) output. Once the
    /// budget is exhausted, pinning stops for the rest of the stream so
    /// the upper level's target size is respected.
    pub upper_budget_bytes: u64,
    /// True when the lower output level is the tree bottom: surviving
    /// tombstones are garbage-collected instead of written.
    pub drop_tombstones: bool,
    /// Keys may only be pinned strictly between these bounds (exclusive,
    /// `None` = unbounded). The caller passes the neighboring upper-level
    /// files' boundary keys so upper-level outputs stay disjoint from the
    /// files not participating in the job.
    pub pin_after: Option<Vec<u8>>,
    pub pin_before: Option<Vec<u8>>,
}

impl MergeLimits {
    fn pinnable(&self, key: &[u8]) -> bool {
        if let Some(lo) = &self.pin_after {
            if key <= lo.as_slice() {
                return false;
            }
        }
        if let Some(hi) = &self.pin_before {
            if key >= hi.as_slice() {
                return false;
            }
        }
        true
    }
}

/// Counters reported per job.
#[derive(Debug, Default, Clone, Copy)]
pub struct MergeOutcome {
    /// Live records examined after deduplication.
    pub live_records: u64,
    /// Records routed to the upper output.
    pub pinned: u64,
    /// Pinned records that originated in the lower level (up-compactions).
    pub up_moved: u64,
    /// Older versions dropped by the merge.
    pub superseded: u64,
    /// Tombstones garbage-collected at the bottom level.
    pub tombstones_dropped: u64,
}

struct HeapEntry {
    record: Record,
    stream: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.record.key == other.record.key && self.record.seqno == other.record.seqno
    }
}
impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the smallest key (and within
        // a key, the highest seqno) surfaces first.
        other
            .record
            .key
            .cmp(&self.record.key)
            .then(self.record.seqno.cmp(&other.record.seqno))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Streaming pinned merge.
///
/// `inputs` are sorted record streams; the first `upper_count` of them come
/// from the upper level L_{i-1}, the rest from L_i. Surviving records are
/// handed to `emit_upper` (pinned) or `emit_lower` in key order.
#[allow(clippy::too_many_arguments)]
pub fn pinned_merge<I>(
    inputs: Vec<I>,
    upper_count: usize,
    policy: PinPolicy,
    tracker: Option<&Tracker>,
    rng: &mut impl Rng,
    mut limits: MergeLimits,
    mut emit_upper: impl FnMut(Record) -> Result<()>,
    mut emit_lower: impl FnMut(Record) -> Result<()>,
) -> Result<MergeOutcome>
where
    I: Iterator<Item = Result<Record>>,
{
    let mut outcome = MergeOutcome::default();
    let mut streams: Vec<I> = inputs;
    let mut heap = BinaryHeap::new();
    for (i, s) in streams.iter_mut().enumerate() {
        if let Some(r) = s.next() {
            heap.push(HeapEntry {
                record: r?,
                stream: i,
            });
        }
    }

    let mut pinning_open = limits.upper_budget_bytes > 0;
    let mut last_key: Option<Vec<u8>> = None;

    while let Some(entry) = heap.pop() {
        let HeapEntry { record, stream } = entry;
        if let Some(r) = streams[stream].next() {
            heap.push(HeapEntry {
                record: r?,
                stream,
            });
        }

        if last_key.as_deref() == Some(record.key.as_slice()) {
            // older version of a key already emitted; the newer one from
            // the upper stream (or higher seqno) wins
            outcome.superseded += 1;
            continue;
        }
        last_key = Some(record.key.clone());
        outcome.live_records += 1;

        if record.is_tombstone() {
            if limits.drop_tombstones {
                outcome.tombstones_dropped += 1;
            } else {
                emit_lower(record)?;
            }
            continue;
        }

        let mut pin = false;
        if pinning_open && limits.pinnable(&record.key) {
            let clock = tracker.and_then(|t| t.clock_of(&record.key));
            if policy.should_pin(clock, rng) {
                let size = record.encoded_size() as u64;
                if size <= limits.upper_budget_bytes {
                    limits.upper_budget_bytes -= size;
                    pin = true;
                } else {
                    // upper level is at its target size; stop pinning for
                    // the remainder of this job's stream
                    pinning_open = false;
                }
            }
        }

        if pin {
            outcome.pinned += 1;
            if stream >= upper_count {
                outcome.up_moved += 1;
            }
            emit_upper(record)?;
        } else {
            emit_lower(record)?;
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::{ClockHistogram, PinPolicy};
    use crate::tracker::Tracker;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn meta(file_id: u64, score: i64) -> TableMeta {
        TableMeta {
            file_id,
            level: 1,
            min_key: vec![0],
            max_key: vec![255],
            size_bytes: 1,
            entry_count: 1,
            score,
            tier: 0,
        }
    }

    #[test]
    fn score_formula() {
        assert_eq!(compute_score(Vec::<Option<u8>>::new(), SCORE_WEIGHT), 0);
        assert_eq!(
            compute_score(vec![Some(3), None, None, None], SCORE_WEIGHT),
            24
        );
        assert_eq!(compute_score(vec![None; 7], SCORE_WEIGHT), -7);
        assert_eq!(
            compute_score(vec![Some(0), Some(1), Some(2), Some(3)], SCORE_WEIGHT),
            0 + 1 + 8 + 27
        );
    }

    #[test]
    fn victim_selection() {
        let files = vec![meta(1, 24), meta(2, -5), meta(3, 0)];
        assert_eq!(select_compaction_file(&files).unwrap().file_id, 2);
        let single = vec![meta(9, 100)];
        assert_eq!(select_compaction_file(&single).unwrap().file_id, 9);
        let tied = vec![meta(7, -5), meta(4, -5)];
        assert_eq!(select_compaction_file(&tied).unwrap().file_id, 4);
        assert!(select_compaction_file(&[]).is_none());
    }

    #[test]
    fn selection_matches_bruteforce_over_random_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            use rand::Rng;
            let n = rng.random_range(1..40);
            let files: Vec<TableMeta> = (0..n)
                .map(|_| meta(rng.random_range(0..20), rng.random_range(-50..50)))
                .collect();
            let expect = files
                .iter()
                .map(|t| (t.score, t.file_id))
                .min()
                .unwrap();
            let got = select_compaction_file(&files).unwrap();
            assert_eq!((got.score, got.file_id), expect);
        }
    }

    fn unlimited() -> MergeLimits {
        MergeLimits {
            upper_budget_bytes: u64::MAX,
            drop_tombstones: false,
            pin_after: None,
            pin_before: None,
        }
    }

    fn run_merge(
        inputs: Vec<Vec<Record>>,
        upper_count: usize,
        policy: PinPolicy,
        tracker: Option<&Tracker>,
        limits: MergeLimits,
    ) -> (Vec<Record>, Vec<Record>, MergeOutcome) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        let outcome = pinned_merge(
            inputs
                .into_iter()
                .map(|v| v.into_iter().map(Ok))
                .collect::<Vec<_>>(),
            upper_count,
            policy,
            tracker,
            &mut rng,
            limits,
            |r| {
                upper.push(r);
                Ok(())
            },
            |r| {
                lower.push(r);
                Ok(())
            },
        )
        .unwrap();
        (upper, lower, outcome)
    }

    /// The worked pinning scenario: upper file holds key 40 (popular),
    /// lower files hold 35 and 65 (popular) among cold keys. 40 is
    /// retained in the upper level, 35 and 65 are compacted up, the rest
    /// goes down.
    #[test]
    fn pinned_compaction_retains_and_raises_popular_keys() {
        let hist = Arc::new(ClockHistogram::new());
        let tracker = Tracker::new(1000, hist);
        for key in [b"k35".as_slice(), b"k40", b"k65"] {
            tracker.track_read(key, 5);
            tracker.track_read(key, 5); // clock 3
        }
        // pin only clock 3
        let policy = PinPolicy {
            boundary: 3,
            boundary_prob: 1.0,
        };
        let upper = vec![
            Record::put("k10", 20, "u"),
            Record::put("k40", 21, "u"),
            Record::put("k50", 22, "u"),
        ];
        let lower = vec![
            Record::put("k20", 3, "l"),
            Record::put("k35", 4, "l"),
            Record::put("k60", 5, "l"),
            Record::put("k65", 6, "l"),
        ];
        let (up, down, outcome) =
            run_merge(vec![upper, lower], 1, policy, Some(&tracker), unlimited());
        let keys = |v: &[Record]| {
            v.iter()
                .map(|r| String::from_utf8(r.key.clone()).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(keys(&up), vec!["k35", "k40", "k65"]);
        assert_eq!(keys(&down), vec!["k10", "k20", "k50", "k60"]);
        assert_eq!(outcome.pinned, 3);
        assert_eq!(outcome.up_moved, 2);
        // both streams sorted
        assert!(up.windows(2).all(|w| w[0].key < w[1].key));
        assert!(down.windows(2).all(|w| w[0].key < w[1].key));
    }

    #[test]
    fn pin_nothing_reduces_to_classic_compaction() {
        let upper = vec![Record::put("a", 10, "new"), Record::put("c", 11, "x")];
        let lower = vec![Record::put("a", 2, "old"), Record::put("b", 3, "y")];
        let (up, down, outcome) =
            run_merge(vec![upper, lower], 1, PinPolicy::pin_nothing(), None, unlimited());
        assert!(up.is_empty());
        assert_eq!(down.len(), 3);
        // duplicate key "a": the upper (newer) record survives
        assert_eq!(down[0].seqno, 10);
        assert_eq!(down[0].value, b"new");
        assert_eq!(outcome.superseded, 1);
    }

    #[test]
    fn duplicate_pinned_key_keeps_upper_version() {
        let hist = Arc::new(ClockHistogram::new());
        let tracker = Tracker::new(100, hist);
        tracker.track_read(b"dup", 9);
        tracker.track_read(b"dup", 9);
        let policy = PinPolicy {
            boundary: 2,
            boundary_prob: 1.0,
        };
        let upper = vec![Record::put("dup", 50, "newer")];
        let lower = vec![Record::put("dup", 7, "older")];
        let (up, down, _) = run_merge(vec![upper, lower], 1, policy, Some(&tracker), unlimited());
        assert_eq!(down.len(), 0);
        assert_eq!(up.len(), 1);
        assert_eq!(up[0].seqno, 50);
        assert_eq!(up[0].value, b"newer");
    }

    #[test]
    fn tombstones_survive_unless_bottom() {
        let upper = vec![Record::tombstone("k", 10)];
        let lower = vec![Record::put("k", 2, "v")];
        let (_, down, outcome) =
            run_merge(vec![upper.clone(), lower.clone()], 1, PinPolicy::pin_nothing(), None, unlimited());
        assert_eq!(down.len(), 1);
        assert!(down[0].is_tombstone());
        assert_eq!(outcome.tombstones_dropped, 0);

        let bottom = MergeLimits {
            drop_tombstones: true,
            ..unlimited()
        };
        let (_, down, outcome) =
            run_merge(vec![upper, lower], 1, PinPolicy::pin_nothing(), None, bottom);
        assert!(down.is_empty());
        assert_eq!(outcome.tombstones_dropped, 1);
    }

    #[test]
    fn budget_exhaustion_stops_pinning_for_rest_of_stream() {
        let hist = Arc::new(ClockHistogram::new());
        let tracker = Tracker::new(100, hist);
        for k in [b"a".as_slice(), b"b", b"c"] {
            tracker.track_read(k, 1);
            tracker.track_read(k, 1);
        }
        let policy = PinPolicy {
            boundary: 2,
            boundary_prob: 1.0,
        };
        let rec = |k: &str| Record::put(k, 5, "0123456789");
        let one = rec("a").encoded_size() as u64;
        let limits = MergeLimits {
            upper_budget_bytes: one, // room for exactly one record
            ..unlimited()
        };
        let (up, down, _) = run_merge(
            vec![vec![rec("a"), rec("b"), rec("c")]],
            1,
            policy,
            Some(&tracker),
            limits,
        );
        assert_eq!(up.len(), 1);
        assert_eq!(up[0].key, b"a");
        assert_eq!(down.len(), 2);
    }

    #[test]
    fn pin_range_restricts_up_moves() {
        let hist = Arc::new(ClockHistogram::new());
        let tracker = Tracker::new(100, hist);
        for k in [b"b".as_slice(), b"x"] {
            tracker.track_read(k, 1);
            tracker.track_read(k, 1);
        }
        let policy = PinPolicy {
            boundary: 2,
            boundary_prob: 1.0,
        };
        let limits = MergeLimits {
            pin_after: Some(b"a".to_vec()),
            pin_before: Some(b"m".to_vec()),
            ..unlimited()
        };
        let lower = vec![Record::put("b", 1, "v"), Record::put("x", 2, "v")];
        let (up, down, _) = run_merge(vec![vec![], lower], 1, policy, Some(&tracker), limits);
        assert_eq!(up.len(), 1);
        assert_eq!(up[0].key, b"b");
        assert_eq!(down.len(), 1);
        assert_eq!(down[0].key, b"x");
    }

    #[test]
    fn no_record_loss_in_random_merges() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            // build two disjoint-seqno sorted runs over a small key space
            let mut seq = 0u64;
            let mut make_run = |n: usize, rng: &mut ChaCha8Rng| {
                let mut keys: Vec<u8> = (0..n).map(|_| rng.random_range(0..30)).collect();
                keys.sort_unstable();
                keys.dedup();
                keys.iter()
                    .map(|k| {
                        seq += 1;
                        Record::put(vec![*k], seq, vec![*k])
                    })
                    .collect::<Vec<_>>()
            };
            let lower = make_run(20, &mut rng);
            let upper = make_run(10, &mut rng);
            let input_live: std::collections::BTreeMap<Vec<u8>, u64> = lower
                .iter()
                .chain(upper.iter())
                .fold(std::collections::BTreeMap::new(), |mut m, r| {
                    let e = m.entry(r.key.clone()).or_insert(r.seqno);
                    *e = (*e).max(r.seqno);
                    m
                });
            let (up, down, _) = run_merge(
                vec![upper, lower],
                1,
                PinPolicy::pin_nothing(),
                None,
                unlimited(),
            );
            let mut output: std::collections::BTreeMap<Vec<u8>, u64> =
                std::collections::BTreeMap::new();
            for r in up.iter().chain(down.iter()) {
                assert!(output.insert(r.key.clone(), r.seqno).is_none());
            }
            assert_eq!(output, input_live);
        }
    }
}
