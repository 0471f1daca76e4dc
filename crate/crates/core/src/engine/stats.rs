//! Engine instrumentation: read-serving buckets, per-level write volume,
//! compaction counters, and the popular-key read heatmap.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

/// Where a successful point read was served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServedFrom {
    Memtable,
    BlockCache,
    Level(usize),
}

pub struct Stats {
    level_count: usize,
    pub gets: AtomicU64,
    pub not_found: AtomicU64,
    reads_memtable: AtomicU64,
    reads_blockcache: AtomicU64,
    reads_level: Vec<AtomicU64>,
    watch_memtable: AtomicU64,
    watch_blockcache: AtomicU64,
    watch_level: Vec<AtomicU64>,
    writes_level_bytes: Vec<AtomicU64>,
    writes_level_files: Vec<AtomicU64>,
    pub puts: AtomicU64,
    pub deletes: AtomicU64,
    pub scans: AtomicU64,
    pub flushes: AtomicU64,
    pub compactions: AtomicU64,
    pub compaction_bytes_read: AtomicU64,
    pub compaction_bytes_written: AtomicU64,
    pub pinned_keys: AtomicU64,
    pub up_moved_keys: AtomicU64,
    pub write_stalls: AtomicU64,
}

impl Stats {
    pub fn new(level_count: usize) -> Stats {
        let counters = |_| AtomicU64::new(0);
        Stats {
            level_count,
            gets: AtomicU64::new(0),
            not_found: AtomicU64::new(0),
            reads_memtable: AtomicU64::new(0),
            reads_blockcache: AtomicU64::new(0),
            reads_level: (0..level_count).map(counters).collect(),
            watch_memtable: AtomicU64::new(0),
            watch_blockcache: AtomicU64::new(0),
            watch_level: (0..level_count).map(counters).collect(),
            writes_level_bytes: (0..level_count).map(counters).collect(),
            writes_level_files: (0..level_count).map(counters).collect(),
            puts: AtomicU64::new(0),
            deletes: AtomicU64::new(0),
            scans: AtomicU64::new(0),
            flushes: AtomicU64::new(0),
            compactions: AtomicU64::new(0),
            compaction_bytes_read: AtomicU64::new(0),
            compaction_bytes_written: AtomicU64::new(0),
            pinned_keys: AtomicU64::new(0),
            up_moved_keys: AtomicU64::new(0),
            write_stalls: AtomicU64::new(0),
        }
    }

    pub fn record_read(&self, served: ServedFrom, watched: bool) {
        match served {
            ServedFrom::Memtable => {
                self.reads_memtable.fetch_add(1, Ordering::Relaxed);
                if watched {
                    self.watch_memtable.fetch_add(1, Ordering::Relaxed);
                }
            }
            ServedFrom::BlockCache => {
                self.reads_blockcache.fetch_add(1, Ordering::Relaxed);
                if watched {
                    self.watch_blockcache.fetch_add(1, Ordering::Relaxed);
                }
            }
            ServedFrom::Level(l) => {
                self.reads_level[l].fetch_add(1, Ordering::Relaxed);
                if watched {
                    self.watch_level[l].fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }

    pub fn record_level_write(&self, level: usize, bytes: u64) {
        self.writes_level_bytes[level].fetch_add(bytes, Ordering::Relaxed);
        self.writes_level_files[level].fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        let load = |v: &[AtomicU64]| v.iter().map(|a| a.load(Ordering::Relaxed)).collect();
        StatsSnapshot {
            level_count: self.level_count,
            gets: self.gets.load(Ordering::Relaxed),
            not_found: self.not_found.load(Ordering::Relaxed),
            reads_memtable: self.reads_memtable.load(Ordering::Relaxed),
            reads_blockcache: self.reads_blockcache.load(Ordering::Relaxed),
            reads_level: load(&self.reads_level),
            watch_memtable: self.watch_memtable.load(Ordering::Relaxed),
            watch_blockcache: self.watch_blockcache.load(Ordering::Relaxed),
            watch_level: load(&self.watch_level),
            writes_level_bytes: load(&self.writes_level_bytes),
            writes_level_files: load(&self.writes_level_files),
            puts: self.puts.load(Ordering::Relaxed),
            deletes: self.deletes.load(Ordering::Relaxed),
            scans: self.scans.load(Ordering::Relaxed),
            flushes: self.flushes.load(Ordering::Relaxed),
            compactions: self.compactions.load(Ordering::Relaxed),
            compaction_bytes_read: self.compaction_bytes_read.load(Ordering::Relaxed),
            compaction_bytes_written: self.compaction_bytes_written.load(Ordering::Relaxed),
            pinned_keys: self.pinned_keys.load(Ordering::Relaxed),
            up_moved_keys: self.up_moved_keys.load(Ordering::Relaxed),
            write_stalls: self.write_stalls.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsSnapshot {
    pub level_count: usize,
    pub gets: u64,
    pub not_found: u64,
    pub reads_memtable: u64,
    pub reads_blockcache: u64,
    pub reads_level: Vec<u64>,
    pub watch_memtable: u64,
    pub watch_blockcache: u64,
    pub watch_level: Vec<u64>,
    pub writes_level_bytes: Vec<u64>,
    pub writes_level_files: Vec<u64>,
    pub puts: u64,
    pub deletes: u64,
    pub scans: u64,
    pub flushes: u64,
    pub compactions: u64,
    pub compaction_bytes_read: u64,
    pub compaction_bytes_written: u64,
    pub pinned_keys: u64,
    pub up_moved_keys: u64,
    pub write_stalls: u64,
}

impl StatsSnapshot {
    /// Successful reads across all serving buckets.
    pub fn reads_served(&self) -> u64 {
        self.reads_memtable + self.reads_blockcache + self.reads_level.iter().sum::<u64>()
    }
}
