//! The LSM engine: memtable, leveled SSTs on simulated storage tiers, and
//! the read-aware compaction driver.
//!
//! Writes append to the memtable and flush to L0. Point reads consult the
//! memtable, then every covering L0 file (newest seqno wins), then one
//! file per deeper level, and feed the popularity tracker on success.
//! Compaction picks the most overflowing level, asks the placer for the
//! least-popular victim file, and runs a pinned merge that keeps popular
//! keys in the upper level within that level's byte budget.

pub mod block_cache;
pub mod bloom;
pub mod manifest;
pub mod memtable;
pub mod record;
pub mod sstable;
pub mod stats;

use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Options;
use crate::error::{Error, Result};
use crate::mapper::{derive_policy, ClockHistogram, PinPolicy, CLOCK_VALUES};
use crate::placer::{self, MergeLimits};
use crate::tiers::{TierSet, WearEntry};
use crate::tracker::{Tracker, TrackerStats};

use block_cache::{BlockCache, CacheStats};
use manifest::{Levels, ManifestLog, TableMeta, VersionEdit};
use memtable::Memtable;
use record::{Record, RecordKind};
use sstable::{SstBuilder, SstGet, SstReader};
use stats::{ServedFrom, Stats, StatsSnapshot};

/// A scheduled (but not yet executed) compaction. The input files are
/// marked busy until the job is run; callers that schedule a job must run
/// it.
#[derive(Debug, Clone)]
pub struct CompactionJob {
    pub job_id: u64,
    /// Upper input level; outputs go to `level` (pinned) and `level + 1`.
    pub level: usize,
    pub upper: Vec<TableMeta>,
    pub lower: Vec<TableMeta>,
    pub policy: PinPolicy,
    /// Byte budget for pinned output at the upper level.
    pub upper_budget_bytes: u64,
    pin_after: Option<Vec<u8>>,
    pin_before: Option<Vec<u8>>,
}

/// Per-job record appended to the compaction log.
#[derive(Debug, Clone, Serialize)]
pub struct CompactionEvent {
    pub job_id: u64,
    pub level: usize,
    pub input_upper: Vec<u64>,
    pub input_lower: Vec<u64>,
    pub victim_score: i64,
    pub policy: PinPolicy,
    pub upper_budget_bytes: u64,
    pub pinned: u64,
    pub up_moved: u64,
    pub superseded: u64,
    pub tombstones_dropped: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub output_upper: Vec<u64>,
    pub output_lower: Vec<u64>,
}

struct TreeState {
    levels: Levels,
    readers: HashMap<u64, Arc<SstReader>>,
    /// Files participating in an in-flight compaction.
    busy: HashSet<u64>,
}

struct Inner {
    opts: Options,
    dir: PathBuf,
    tiers: TierSet,
    tracker: Tracker,
    histogram: Arc<ClockHistogram>,
    cache: Mutex<BlockCache>,
    mem: Mutex<Memtable>,
    tree: RwLock<TreeState>,
    manifest: Mutex<ManifestLog>,
    next_seqno: AtomicU64,
    next_file_id: AtomicU64,
    next_job_id: AtomicU64,
    stats: Stats,
    watch: RwLock<HashSet<Vec<u8>>>,
    events: Mutex<Vec<CompactionEvent>>,
    closed: AtomicBool,
    work_mutex: Mutex<()>,
    work_cv: Condvar,
    bg_error: Mutex<Option<Error>>,
}

pub struct Engine {
    inner: Arc<Inner>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Most files a read-aware job may take from its upper level.
const MAX_VICTIM_WINDOW: usize = 8;

/// Pick the next compaction: the most overflowing level wins (ties to the
/// shallower level). Within that level, read-aware mode merges a window of
/// cold key-adjacent files seeded at the lowest-score file; classic mode
/// (pinning disabled) takes the single oldest file. L0 compacts all of its
/// files at once and is skipped while any L0 file is busy. The bottom
/// level never compacts.
fn plan_job(
    levels: &Levels,
    opts: &Options,
    busy: &HashSet<u64>,
) -> Option<(usize, Vec<TableMeta>, Vec<TableMeta>)> {
    let last = opts.level_count - 1;
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for level in 0..last {
        if level == 0 {
            let n = levels.levels[0].len();
            if n >= opts.l0_compaction_trigger {
                candidates.push((n as f64 / opts.l0_compaction_trigger as f64, 0));
            }
        } else {
            let bytes = levels.level_bytes(level);
            let target = opts.level_target_bytes(level);
            if bytes > target {
                candidates.push((bytes as f64 / target as f64, level));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

    for (_, level) in candidates {
        if level == 0 {
            let files = &levels.levels[0];
            if files.iter().any(|f| busy.contains(&f.file_id)) {
                continue; // one L0 job at a time
            }
            let min = files.iter().map(|f| f.min_key.clone()).min().unwrap();
            let max = files.iter().map(|f| f.max_key.clone()).max().unwrap();
            let lower: Vec<TableMeta> = levels.levels[1]
                .iter()
                .filter(|f| f.overlaps(&min, &max))
                .cloned()
                .collect();
            if lower.iter().any(|f| busy.contains(&f.file_id)) {
                continue;
            }
            return Some((0, files.clone(), lower));
        }
        let mut files: Vec<&TableMeta> = levels.levels[level]
            .iter()
            .filter(|f| !busy.contains(&f.file_id))
            .collect();
        if opts.pinning_enabled {
            // read-aware: the coldest file seeds the merge and the window
            // widens over its colder key-adjacent neighbors while the level
            // remains over target, so a single job resolves an overflow
            // that one-file victims would spread across several triggers
            files.sort_by_key(|f| (f.score, f.file_id));
            let mut by_key: Vec<&TableMeta> = levels.levels[level].iter().collect();
            by_key.sort_by(|a, b| a.min_key.cmp(&b.min_key));
            let bytes = levels.level_bytes(level);
            let target = opts.level_target_bytes(level);
            // aim below target so the next inflow does not re-trigger at once
            let goal = bytes.saturating_sub(target - target / 4);
            for seed in files {
                let pos = by_key
                    .iter()
                    .position(|f| f.file_id == seed.file_id)
                    .expect("seed file present at its level");
                let (mut lo, mut hi) = (pos, pos);
                let mut taken = seed.size_bytes;
                while taken < goal && hi - lo + 1 < MAX_VICTIM_WINDOW {
                    let left = (lo > 0 && !busy.contains(&by_key[lo - 1].file_id))
                        .then(|| by_key[lo - 1]);
                    let right = by_key
                        .get(hi + 1)
                        .filter(|f| !busy.contains(&f.file_id))
                        .copied();
                    let take_left = match (left, right) {
                        (Some(l), Some(r)) => (l.score, l.file_id) <= (r.score, r.file_id),
                        (Some(_), None) => true,
                        (None, Some(_)) => false,
                        (None, None) => break,
                    };
                    if take_left {
                        lo -= 1;
                        taken += by_key[lo].size_bytes;
                    } else {
                        hi += 1;
                        taken += by_key[hi].size_bytes;
                    }
                }
                let upper: Vec<TableMeta> =
                    by_key[lo..=hi].iter().map(|f| (*f).clone()).collect();
                let lower: Vec<TableMeta> = levels.levels[level + 1]
                    .iter()
                    .filter(|f| f.overlaps(&upper[0].min_key, &upper[upper.len() - 1].max_key))
                    .cloned()
                    .collect();
                if lower.iter().any(|f| busy.contains(&f.file_id)) {
                    continue;
                }
                return Some((level, upper, lower));
            }
            continue;
        }
        // classic leveled baseline: oldest file first
        files.sort_by_key(|f| f.file_id);
        for victim in files {
            let lower: Vec<TableMeta> = levels.levels[level + 1]
                .iter()
                .filter(|f| f.overlaps(&victim.min_key, &victim.max_key))
                .cloned()
                .collect();
            if lower.iter().any(|f| busy.contains(&f.file_id)) {
                continue;
            }
            return Some((level, vec![victim.clone()], lower));
        }
    }
    None
}

/// Exclusive key bounds inside which this job may place upper-level
/// output: the gap between the victim window's neighbors at its level. L0
/// files may overlap, so an L0 job is unbounded.
fn pin_range(
    levels: &Levels,
    level: usize,
    upper: &[TableMeta],
) -> (Option<Vec<u8>>, Option<Vec<u8>>) {
    if level == 0 {
        return (None, None);
    }
    let win_min = upper.iter().map(|f| &f.min_key).min().unwrap();
    let win_max = upper.iter().map(|f| &f.max_key).max().unwrap();
    let ids: HashSet<u64> = upper.iter().map(|f| f.file_id).collect();
    let mut after: Option<Vec<u8>> = None;
    let mut before: Option<Vec<u8>> = None;
    for f in &levels.levels[level] {
        if ids.contains(&f.file_id) {
            continue;
        }
        if f.max_key < *win_min {
            if after.as_ref().is_none_or(|a| *a < f.max_key) {
                after = Some(f.max_key.clone());
            }
        } else if f.min_key > *win_max && before.as_ref().is_none_or(|b| *b > f.min_key) {
            before = Some(f.min_key.clone());
        }
    }
    (after, before)
}

/// Chunks a sorted record stream into SST files at one level.
struct OutputAcc<'a> {
    eng: &'a Inner,
    level: usize,
    tier: usize,
    builder: Option<SstBuilder>,
    results: Vec<(TableMeta, Arc<SstReader>)>,
}

impl<'a> OutputAcc<'a> {
    fn new(eng: &'a Inner, level: usize) -> OutputAcc<'a> {
        OutputAcc {
            eng,
            level,
            tier: eng.opts.tier_of_level(level),
            builder: None,
            results: Vec::new(),
        }
    }

    fn push(&mut self, rec: Record) -> Result<()> {
        let b = self.builder.get_or_insert_with(|| {
            SstBuilder::new(self.eng.opts.block_size, self.eng.opts.bloom_bits_per_key)
        });
        b.add(&rec);
        if b.estimated_bytes() >= self.eng.opts.max_file_bytes {
            self.cut()?;
        }
        Ok(())
    }

    fn cut(&mut self) -> Result<()> {
        let Some(b) = self.builder.take() else {
            return Ok(());
        };
        if b.is_empty() {
            return Ok(());
        }
        let out = self.eng.write_sst(b, self.level, self.tier)?;
        self.results.push(out);
        Ok(())
    }

    /// Error path: remove any files already written.
    fn discard(&mut self) {
        self.builder = None;
        for (meta, _) in self.results.drain(..) {
            let _ = self.eng.tiers.remove_file(self.tier, &meta.file_name());
        }
    }

    fn bytes(&self) -> u64 {
        self.results.iter().map(|(m, _)| m.size_bytes).sum()
    }

    fn ids(&self) -> Vec<u64> {
        self.results.iter().map(|(m, _)| m.file_id).collect()
    }
}

/// Heap entry for read-path merges: smallest key first, newest seqno first
/// within a key.
struct ScanEntry {
    record: Record,
    stream: usize,
}

impl PartialEq for ScanEntry {
    fn eq(&self, other: &Self) -> bool {
        self.record.key == other.record.key && self.record.seqno == other.record.seqno
    }
}
impl Eq for ScanEntry {}
impl Ord for ScanEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .record
            .key
            .cmp(&self.record.key)
            .then(self.record.seqno.cmp(&other.record.seqno))
    }
}
impl PartialOrd for ScanEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Inner {
    fn check_key(&self, key: &[u8]) -> Result<()> {
        if key.is_empty() {
            return Err(Error::EmptyKey);
        }
        if key.len() > self.opts.key_cap_bytes {
            return Err(Error::KeyTooLarge {
                got: key.len(),
                cap: self.opts.key_cap_bytes,
            });
        }
        Ok(())
    }

    fn check_open(&self) -> Result<()> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(Error::EngineClosed);
        }
        Ok(())
    }

    fn check_bg(&self) -> Result<()> {
        if let Some(e) = self.bg_error.lock().unwrap().take() {
            return Err(e);
        }
        Ok(())
    }

    fn write(&self, key: &[u8], kind: RecordKind, value: &[u8]) -> Result<()> {
        self.check_open()?;
        self.check_key(key)?;
        self.check_bg()?;
        let flushed = {
            let mut mem = self.mem.lock().unwrap();
            let seqno = self.next_seqno.fetch_add(1, Ordering::SeqCst) + 1;
            mem.insert(key.to_vec(), seqno, kind, value.to_vec());
            match kind {
                RecordKind::Put => self.stats.puts.fetch_add(1, Ordering::Relaxed),
                RecordKind::Tombstone => self.stats.deletes.fetch_add(1, Ordering::Relaxed),
            };
            if mem.bytes() as u64 >= self.opts.memtable_bytes {
                self.flush_locked(&mut mem)?;
                true
            } else {
                false
            }
        };
        if flushed {
            self.after_flush()?;
        }
        Ok(())
    }

    /// Flush the memtable (caller holds its lock) into a new L0 SST and
    /// publish it atomically.
    fn flush_locked(&self, mem: &mut Memtable) -> Result<bool> {
        if mem.is_empty() {
            return Ok(false);
        }
        let mut b = SstBuilder::new(self.opts.block_size, self.opts.bloom_bits_per_key);
        for rec in mem.to_records() {
            b.add(&rec);
        }
        let tier = self.opts.tier_of_level(0);
        let (meta, reader) = self.write_sst(b, 0, tier)?;
        let edit = VersionEdit {
            added: vec![meta.clone()],
            removed: vec![],
            last_seqno: Some(self.next_seqno.load(Ordering::SeqCst)),
        };
        {
            let mut tree = self.tree.write().unwrap();
            tree.levels.apply(&edit);
            tree.readers.insert(meta.file_id, reader);
            self.manifest.lock().unwrap().append(&edit)?;
        }
        *mem = Memtable::new();
        self.stats.flushes.fetch_add(1, Ordering::Relaxed);
        Ok(true)
    }

    /// Build, score, and persist one SST; returns its metadata and an open
    /// reader.
    fn write_sst(
        &self,
        b: SstBuilder,
        level: usize,
        tier: usize,
    ) -> Result<(TableMeta, Arc<SstReader>)> {
        let score = placer::compute_score(
            b.keys().iter().map(|k| self.tracker.clock_of(k)),
            placer::SCORE_WEIGHT,
        );
        let file_id = self.next_file_id.fetch_add(1, Ordering::SeqCst) + 1;
        let (bytes, entry_count, min_key, max_key) = b.finish();
        let name = format!("{file_id}.sst");
        let path = self.tiers.write_file(tier, &name, &bytes)?;
        let reader = SstReader::open(file_id, tier, path, &self.tiers)?;
        self.stats.record_level_write(level, bytes.len() as u64);
        let meta = TableMeta {
            file_id,
            level,
            min_key,
            max_key,
            size_bytes: bytes.len() as u64,
            entry_count,
            score,
            tier,
        };
        Ok((meta, Arc::new(reader)))
    }

    fn after_flush(&self) -> Result<()> {
        if self.opts.background_compaction {
            self.work_cv.notify_all();
            let mut stalled = false;
            loop {
                let n = self.tree.read().unwrap().levels.levels[0].len();
                if n < self.opts.l0_stall_trigger || self.closed.load(Ordering::SeqCst) {
                    break;
                }
                if !stalled {
                    self.stats.write_stalls.fetch_add(1, Ordering::Relaxed);
                    stalled = true;
                }
                self.check_bg()?;
                std::thread::sleep(Duration::from_micros(200));
            }
        } else {
            while self.compact_once()? {}
        }
        Ok(())
    }

    fn plan(&self) -> Option<CompactionJob> {
        let mut tree = self.tree.write().unwrap();
        let (level, upper, lower) = plan_job(&tree.levels, &self.opts, &tree.busy)?;
        for f in upper.iter().chain(lower.iter()) {
            tree.busy.insert(f.file_id);
        }
        let (pin_after, pin_before) = pin_range(&tree.levels, level, &upper);
        let upper_in: u64 = upper.iter().map(|f| f.size_bytes).sum();
        let cur = tree.levels.level_bytes(level);
        // Cap pinned output below the level target: filling it exactly to
        // target would re-arm the byte trigger on the next inflow and turn
        // every flush into a compaction storm.
        let target = self.opts.level_target_bytes(level);
        let upper_budget_bytes =
            (target - target / 4).saturating_sub(cur.saturating_sub(upper_in));
        // L0 is triggered by file count, so pinned output kept there would
        // re-arm the trigger and recompact the same keys; L0 jobs compact
        // everything down and pinning starts at L1.
        let policy = if self.opts.pinning_enabled && level >= 1 {
            derive_policy(&self.histogram.snapshot(), self.opts.pinning_threshold)
        } else {
            PinPolicy::pin_nothing()
        };
        let job_id = self.next_job_id.fetch_add(1, Ordering::SeqCst) + 1;
        Some(CompactionJob {
            job_id,
            level,
            upper,
            lower,
            policy,
            upper_budget_bytes,
            pin_after,
            pin_before,
        })
    }

    fn compact_once(&self) -> Result<bool> {
        match self.plan() {
            Some(job) => {
                self.run_job(job)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn run_job(&self, job: CompactionJob) -> Result<()> {
        let res = self.run_job_inner(&job);
        if res.is_err() {
            let mut tree = self.tree.write().unwrap();
            for f in job.upper.iter().chain(job.lower.iter()) {
                tree.busy.remove(&f.file_id);
            }
        }
        res
    }

    fn run_job_inner(&self, job: &CompactionJob) -> Result<()> {
        let inputs: Vec<Arc<SstReader>> = {
            let tree = self.tree.read().unwrap();
            job.upper
                .iter()
                .chain(job.lower.iter())
                .map(|m| tree.readers.get(&m.file_id).expect("manifest file open").clone())
                .collect()
        };
        let mut upper_out = OutputAcc::new(self, job.level);
        let mut lower_out = OutputAcc::new(self, job.level + 1);
        let limits = MergeLimits {
            upper_budget_bytes: job.upper_budget_bytes,
            drop_tombstones: job.level + 1 == self.opts.level_count - 1,
            pin_after: job.pin_after.clone(),
            pin_before: job.pin_before.clone(),
        };
        // seeded per job: identical inputs replay to identical outputs
        let mut rng = ChaCha8Rng::seed_from_u64(mix(job.job_id));

        let merged = (|| -> Result<placer::MergeOutcome> {
            let mut iters = Vec::with_capacity(inputs.len());
            for r in &inputs {
                // compactions stream whole files and bypass the block cache
                iters.push(r.iter(&self.tiers, None)?);
            }
            let outcome = placer::pinned_merge(
                iters,
                job.upper.len(),
                job.policy,
                Some(&self.tracker),
                &mut rng,
                limits,
                |r| upper_out.push(r),
                |r| lower_out.push(r),
            )?;
            upper_out.cut()?;
            lower_out.cut()?;
            Ok(outcome)
        })();
        let outcome = match merged {
            Ok(o) => o,
            Err(e) => {
                upper_out.discard();
                lower_out.discard();
                return Err(e);
            }
        };

        let added: Vec<TableMeta> = upper_out
            .results
            .iter()
            .chain(lower_out.results.iter())
            .map(|(m, _)| m.clone())
            .collect();
        let removed: Vec<(usize, u64)> = job
            .upper
            .iter()
            .map(|f| (job.level, f.file_id))
            .chain(job.lower.iter().map(|f| (job.level + 1, f.file_id)))
            .collect();
        let event = CompactionEvent {
            job_id: job.job_id,
            level: job.level,
            input_upper: job.upper.iter().map(|f| f.file_id).collect(),
            input_lower: job.lower.iter().map(|f| f.file_id).collect(),
            victim_score: job.upper.iter().map(|f| f.score).min().unwrap_or(0),
            policy: job.policy,
            upper_budget_bytes: job.upper_budget_bytes,
            pinned: outcome.pinned,
            up_moved: outcome.up_moved,
            superseded: outcome.superseded,
            tombstones_dropped: outcome.tombstones_dropped,
            bytes_read: job
                .upper
                .iter()
                .chain(job.lower.iter())
                .map(|f| f.size_bytes)
                .sum(),
            bytes_written: upper_out.bytes() + lower_out.bytes(),
            output_upper: upper_out.ids(),
            output_lower: lower_out.ids(),
        };
        let edit = VersionEdit {
            added,
            removed,
            last_seqno: None,
        };
        {
            let mut tree = self.tree.write().unwrap();
            tree.levels.apply(&edit);
            for (meta, reader) in upper_out.results.drain(..).chain(lower_out.results.drain(..)) {
                tree.readers.insert(meta.file_id, reader);
            }
            for f in job.upper.iter().chain(job.lower.iter()) {
                tree.busy.remove(&f.file_id);
                tree.readers.remove(&f.file_id);
            }
            self.manifest.lock().unwrap().append(&edit)?;
        }
        {
            let mut cache = self.cache.lock().unwrap();
            for f in job.upper.iter().chain(job.lower.iter()) {
                cache.evict_file(f.file_id);
            }
        }
        for f in job.upper.iter().chain(job.lower.iter()) {
            self.tiers.remove_file(f.tier, &f.file_name())?;
        }
        self.stats.compactions.fetch_add(1, Ordering::Relaxed);
        self.stats
            .compaction_bytes_read
            .fetch_add(event.bytes_read, Ordering::Relaxed);
        self.stats
            .compaction_bytes_written
            .fetch_add(event.bytes_written, Ordering::Relaxed);
        self.stats.pinned_keys.fetch_add(outcome.pinned, Ordering::Relaxed);
        self.stats
            .up_moved_keys
            .fetch_add(outcome.up_moved, Ordering::Relaxed);
        self.events.lock().unwrap().push(event);
        Ok(())
    }

    fn watched(&self, key: &[u8]) -> bool {
        let watch = self.watch.read().unwrap();
        !watch.is_empty() && watch.contains(key)
    }

    fn note_read(&self, key: &[u8], seqno: u64) {
        self.tracker.track_read(key, seqno);
        if self.tracker.tracked_count() > self.tracker.capacity() {
            self.tracker.maybe_evict();
        }
    }

    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        self.check_open()?;
        self.check_key(key)?;
        self.stats.gets.fetch_add(1, Ordering::Relaxed);
        let watched = self.watched(key);

        {
            let mem = self.mem.lock().unwrap();
            if let Some(e) = mem.get(key) {
                return match e.kind {
                    RecordKind::Tombstone => {
                        self.stats.not_found.fetch_add(1, Ordering::Relaxed);
                        Ok(None)
                    }
                    RecordKind::Put => {
                        let (seqno, value) = (e.seqno, e.value.clone());
                        drop(mem);
                        self.note_read(key, seqno);
                        self.stats.record_read(ServedFrom::Memtable, watched);
                        Ok(Some(value))
                    }
                };
            }
        }

        // snapshot candidate files, then probe without holding the tree lock
        let mut l0: Vec<Arc<SstReader>> = Vec::new();
        let mut deeper: Vec<(usize, Arc<SstReader>)> = Vec::new();
        {
            let tree = self.tree.read().unwrap();
            for f in &tree.levels.levels[0] {
                if f.covers(key) {
                    l0.push(tree.readers[&f.file_id].clone());
                }
            }
            for level in 1..self.opts.level_count {
                let files = &tree.levels.levels[level];
                let pos = files.partition_point(|f| f.min_key.as_slice() <= key);
                if pos > 0 && files[pos - 1].covers(key) {
                    deeper.push((level, tree.readers[&files[pos - 1].file_id].clone()));
                }
            }
        }

        // L0 files overlap: every covering file is probed, newest wins
        let mut found: Option<(usize, SstGet)> = None;
        for r in &l0 {
            if let Some(g) = r.get(key, &self.tiers, Some(&self.cache))? {
                if found.as_ref().is_none_or(|(_, b)| g.seqno > b.seqno) {
                    found = Some((0, g));
                }
            }
        }
        if found.is_none() {
            for (level, r) in &deeper {
                if let Some(g) = r.get(key, &self.tiers, Some(&self.cache))? {
                    found = Some((*level, g));
                    break;
                }
            }
        }

        match found {
            None => {
                self.stats.not_found.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
            Some((_, g)) if g.kind == RecordKind::Tombstone => {
                self.stats.not_found.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
            Some((level, g)) => {
                self.note_read(key, g.seqno);
                let served = if g.from_cache {
                    ServedFrom::BlockCache
                } else {
                    ServedFrom::Level(level)
                };
                self.stats.record_read(served, watched);
                Ok(Some(g.value))
            }
        }
    }

    fn scan(&self, start: &[u8], count: usize) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.check_open()?;
        self.stats.scans.fetch_add(1, Ordering::Relaxed);
        if count == 0 {
            return Ok(Vec::new());
        }

        let mem_records: Vec<Record> = self.mem.lock().unwrap().range_from(start).collect();
        let readers: Vec<Arc<SstReader>> = {
            let tree = self.tree.read().unwrap();
            tree.levels
                .all_files()
                .filter(|f| f.max_key.as_slice() >= start)
                .map(|f| tree.readers[&f.file_id].clone())
                .collect()
        };

        let mut streams: Vec<Box<dyn Iterator<Item = Result<Record>> + '_>> = Vec::new();
        streams.push(Box::new(mem_records.into_iter().map(Ok)));
        for r in &readers {
            streams.push(Box::new(r.iter_from(start, &self.tiers, Some(&self.cache))?));
        }

        let mut heap = BinaryHeap::new();
        for (i, s) in streams.iter_mut().enumerate() {
            if let Some(r) = s.next() {
                heap.push(ScanEntry {
                    record: r?,
                    stream: i,
                });
            }
        }
        // count may be usize::MAX for an unbounded scan
        let mut out = Vec::with_capacity(count.min(1024));
        let mut last: Option<Vec<u8>> = None;
        while let Some(ScanEntry { record, stream }) = heap.pop() {
            if let Some(r) = streams[stream].next() {
                heap.push(ScanEntry {
                    record: r?,
                    stream,
                });
            }
            if last.as_deref() == Some(record.key.as_slice()) {
                continue; // older version
            }
            last = Some(record.key.clone());
            if record.is_tombstone() {
                continue;
            }
            if self.opts.track_scans {
                self.note_read(&record.key, record.seqno);
            }
            out.push((record.key, record.value));
            if out.len() >= count {
                break;
            }
        }
        Ok(out)
    }

    fn heatmap_csv(&self) -> String {
        let s = self.stats.snapshot();
        let mut out = String::from("bucket,tier,reads,watched_reads,bytes_written\n");
        out.push_str(&format!(
            "memtable,-,{},{},0\n",
            s.reads_memtable, s.watch_memtable
        ));
        out.push_str(&format!(
            "blockcache,-,{},{},0\n",
            s.reads_blockcache, s.watch_blockcache
        ));
        for level in 0..self.opts.level_count {
            let tier = &self.opts.tiers[self.opts.tier_of_level(level)].name;
            out.push_str(&format!(
                "L{level},{tier},{},{},{}\n",
                s.reads_level[level], s.watch_level[level], s.writes_level_bytes[level]
            ));
        }
        out
    }

    fn iostat_csv(&self) -> String {
        let mut out =
            String::from("tier,read_ops,bytes_read,write_ops,bytes_written,resident_bytes,wear\n");
        for (i, entry) in self.tiers.wear_ledger().iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.9}\n",
                entry.tier,
                self.tiers.read_ops(i),
                self.tiers.bytes_read(i),
                self.tiers.write_ops(i),
                entry.bytes_written,
                entry.resident_bytes,
                entry.wear
            ));
        }
        out
    }
}

fn worker_loop(inner: &Inner) {
    while !inner.closed.load(Ordering::SeqCst) {
        match inner.compact_once() {
            Ok(true) => continue,
            Ok(false) => {
                let guard = inner.work_mutex.lock().unwrap();
                let _ = inner
                    .work_cv
                    .wait_timeout(guard, Duration::from_millis(2))
                    .unwrap();
            }
            Err(e) => {
                let mut slot = inner.bg_error.lock().unwrap();
                if slot.is_none() {
                    *slot = Some(e);
                }
            }
        }
    }
}

impl Engine {
    pub fn open(dir: impl AsRef<Path>, opts: Options) -> Result<Engine> {
        opts.validate()?;
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let tiers = TierSet::open(&dir, &opts)?;
        let (manifest, levels, max_file_id, last_seqno) =
            ManifestLog::open(&dir, opts.level_count)?;
        let mut readers = HashMap::new();
        for meta in levels.all_files() {
            let path = tiers.path_for(meta.tier, &meta.file_name());
            let reader = SstReader::open(meta.file_id, meta.tier, path, &tiers)?;
            readers.insert(meta.file_id, Arc::new(reader));
        }
        let histogram = Arc::new(ClockHistogram::new());
        let tracker = Tracker::new(opts.tracker_capacity.max(1), histogram.clone());
        let stats = Stats::new(opts.level_count);
        let cache = Mutex::new(BlockCache::new(opts.cache_bytes));
        let background = opts.background_compaction;
        let worker_count = opts.compaction_workers.max(1);
        let inner = Arc::new(Inner {
            opts,
            dir,
            tiers,
            tracker,
            histogram,
            cache,
            mem: Mutex::new(Memtable::new()),
            tree: RwLock::new(TreeState {
                levels,
                readers,
                busy: HashSet::new(),
            }),
            manifest: Mutex::new(manifest),
            next_seqno: AtomicU64::new(last_seqno),
            next_file_id: AtomicU64::new(max_file_id),
            next_job_id: AtomicU64::new(0),
            stats,
            watch: RwLock::new(HashSet::new()),
            events: Mutex::new(Vec::new()),
            closed: AtomicBool::new(false),
            work_mutex: Mutex::new(()),
            work_cv: Condvar::new(),
            bg_error: Mutex::new(None),
        });
        let mut workers = Vec::new();
        if background {
            for _ in 0..worker_count {
                let inner = inner.clone();
                workers.push(std::thread::spawn(move || worker_loop(&inner)));
            }
        }
        Ok(Engine {
            inner,
            workers: Mutex::new(workers),
        })
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.inner.write(key, RecordKind::Put, value)
    }

    pub fn delete(&self, key: &[u8]) -> Result<()> {
        self.inner.write(key, RecordKind::Tombstone, &[])
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        self.inner.get(key)
    }

    /// Up to `count` live key-value pairs with key >= `start`, ascending.
    pub fn scan(&self, start: &[u8], count: usize) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.inner.scan(start, count)
    }

    /// Force-flush the memtable to L0. Returns false if it was empty.
    pub fn flush_memtable(&self) -> Result<bool> {
        self.inner.check_open()?;
        let mut mem = self.inner.mem.lock().unwrap();
        self.inner.flush_locked(&mut mem)
    }

    /// Schedule the next compaction, if any level is overflowing. The
    /// returned job's input files are reserved; pass it to
    /// [`Engine::run_compaction`].
    pub fn maybe_schedule_compaction(&self) -> Option<CompactionJob> {
        self.inner.plan()
    }

    pub fn run_compaction(&self, job: CompactionJob) -> Result<()> {
        self.inner.run_job(job)
    }

    /// Run one scheduled compaction inline; false when nothing to do.
    pub fn compact_once(&self) -> Result<bool> {
        self.inner.compact_once()
    }

    /// Compact until no level is over its trigger. Returns jobs run.
    pub fn compact_until_quiescent(&self) -> Result<u64> {
        let mut n = 0;
        while self.inner.compact_once()? {
            n += 1;
        }
        Ok(n)
    }

    /// Register keys whose reads are attributed separately in the heatmap.
    pub fn watch_keys<I, K>(&self, keys: I)
    where
        I: IntoIterator<Item = K>,
        K: Into<Vec<u8>>,
    {
        let mut watch = self.inner.watch.write().unwrap();
        watch.clear();
        watch.extend(keys.into_iter().map(Into::into));
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.inner.stats.snapshot()
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.inner.cache.lock().unwrap().stats()
    }

    pub fn tracker_stats(&self) -> TrackerStats {
        self.inner.tracker.stats()
    }

    pub fn tracked_count(&self) -> usize {
        self.inner.tracker.tracked_count()
    }

    pub fn clock_of(&self, key: &[u8]) -> Option<u8> {
        self.inner.tracker.clock_of(key)
    }

    pub fn clock_histogram(&self) -> [u64; CLOCK_VALUES] {
        self.inner.histogram.snapshot()
    }

    /// The pin policy a compaction scheduled right now would use.
    pub fn current_pin_policy(&self) -> PinPolicy {
        if self.inner.opts.pinning_enabled {
            derive_policy(
                &self.inner.histogram.snapshot(),
                self.inner.opts.pinning_threshold,
            )
        } else {
            PinPolicy::pin_nothing()
        }
    }

    pub fn wear_ledger(&self) -> Vec<WearEntry> {
        self.inner.tiers.wear_ledger()
    }

    pub fn compaction_events(&self) -> Vec<CompactionEvent> {
        self.inner.events.lock().unwrap().clone()
    }

    pub fn levels(&self) -> Vec<Vec<TableMeta>> {
        self.inner.tree.read().unwrap().levels.levels.clone()
    }

    pub fn level_bytes(&self, level: usize) -> u64 {
        self.inner.tree.read().unwrap().levels.level_bytes(level)
    }

    pub fn memtable_len(&self) -> usize {
        self.inner.mem.lock().unwrap().len()
    }

    pub fn last_seqno(&self) -> u64 {
        self.inner.next_seqno.load(Ordering::SeqCst)
    }

    pub fn options(&self) -> &Options {
        &self.inner.opts
    }

    pub fn dir(&self) -> &Path {
        &self.inner.dir
    }

    pub fn heatmap_csv(&self) -> String {
        self.inner.heatmap_csv()
    }

    pub fn iostat_csv(&self) -> String {
        self.inner.iostat_csv()
    }

    /// Stop background work and flush the memtable. Subsequent operations
    /// fail with [`Error::EngineClosed`]. Idempotent.
    pub fn close(&self) -> Result<()> {
        if self.inner.closed.swap(true, Ordering::SeqCst) {
            return Ok(());
        }
        self.inner.work_cv.notify_all();
        for h in self.workers.lock().unwrap().drain(..) {
            let _ = h.join();
        }
        let mut mem = self.inner.mem.lock().unwrap();
        self.inner.flush_locked(&mut mem)?;
        Ok(())
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        let _ = self.close();
    }
}
