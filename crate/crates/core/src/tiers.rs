//! Simulated heterogeneous storage tiers.
//!
//! Each tier is a directory on the local disk plus an injected latency
//! model: reads cost `read_latency_us` per 4 KB, writes cost
//! `write_latency_us` per 64 MB, both scaled linearly with I/O size.
//! Writes are also charged against a per-tier endurance ledger.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::Options;
use crate::error::{Error, Result};

const READ_UNIT: u64 = 4 << 10;
const WRITE_UNIT: u64 = 64 << 20;

/// Environment variable disabling latency injection regardless of config.
pub const NO_INJECT_ENV: &str = "TIERKV_NO_INJECT";

/// A storage technology: latency, cost, and endurance parameters.
#[derive(Debug, Clone, Serialize)]
pub struct TierSpec {
    pub name: String,
    /// Letter used in level-to-tier mapping strings ("NNNTQ").
    pub letter: char,
    /// Average 4 KB random read latency, microseconds.
    pub read_latency_us: f64,
    /// Average write latency per 64 MB unit, microseconds.
    pub write_latency_us: f64,
    /// Dollars per GB.
    pub cost_per_gb: f64,
    /// Endurance in program/erase cycles.
    pub pe_cycles: u64,
    /// Simulated device capacity in bytes.
    pub capacity_bytes: u64,
}

impl TierSpec {
    /// The three-technology table the defaults are built from: Optane SSD
    /// (NVM) and two flash generations (TLC, QLC). Capacities follow the
    /// 1:9:90 split.
    pub fn default_table() -> Vec<TierSpec> {
        vec![
            TierSpec {
                name: "NVM".into(),
                letter: 'N',
                read_latency_us: 26.0,
                write_latency_us: 121.0,
                cost_per_gb: 1.3,
                pe_cycles: 18_000,
                capacity_bytes: 2 << 30,
            },
            TierSpec {
                name: "TLC".into(),
                letter: 'T',
                read_latency_us: 195.0,
                write_latency_us: 216.0,
                cost_per_gb: 0.4,
                pe_cycles: 540,
                capacity_bytes: 18 << 30,
            },
            TierSpec {
                name: "QLC".into(),
                letter: 'Q',
                read_latency_us: 391.0,
                write_latency_us: 456.0,
                cost_per_gb: 0.1,
                pe_cycles: 200,
                capacity_bytes: 180 << 30,
            },
        ]
    }

    pub fn custom(name: &str, letter: char) -> TierSpec {
        TierSpec {
            name: name.into(),
            letter,
            read_latency_us: 100.0,
            write_latency_us: 200.0,
            cost_per_gb: 0.5,
            pe_cycles: 1_000,
            capacity_bytes: 16 << 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.read_latency_us <= 0.0
            || self.write_latency_us <= 0.0
            || self.cost_per_gb <= 0.0
            || self.pe_cycles == 0
            || self.capacity_bytes == 0
        {
            return Err(Error::InvalidConfig(format!(
                "tier {:?}: latencies, cost, endurance, capacity must be > 0",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Default)]
struct TierCounters {
    resident_bytes: AtomicU64,
    bytes_written: AtomicU64,
    bytes_read: AtomicU64,
    read_ops: AtomicU64,
    write_ops: AtomicU64,
}

/// Snapshot of one tier's endurance accounting.
#[derive(Debug, Clone, Serialize)]
pub struct WearEntry {
    pub tier: String,
    pub resident_bytes: u64,
    pub bytes_written: u64,
    pub capacity_bytes: u64,
    pub pe_cycles: u64,
    /// bytes written / (capacity * P/E cycles); fraction of lifetime spent.
    pub wear: f64,
}

/// Runtime tier state: directories, counters, and the latency injector.
pub struct TierSet {
    specs: Vec<TierSpec>,
    dirs: Vec<PathBuf>,
    counters: Vec<TierCounters>,
    inject: bool,
}

impl TierSet {
    pub fn open(base: &Path, opts: &Options) -> Result<TierSet> {
        let mut dirs = Vec::new();
        let mut counters = Vec::new();
        for spec in &opts.tiers {
            let dir = base.join(&spec.name);
            std::fs::create_dir_all(&dir)?;
            let mut resident = 0u64;
            for entry in std::fs::read_dir(&dir)? {
                resident += entry?.metadata()?.len();
            }
            let c = TierCounters::default();
            c.resident_bytes.store(resident, Ordering::Relaxed);
            dirs.push(dir);
            counters.push(c);
        }
        let inject = opts.latency_injection && std::env::var_os(NO_INJECT_ENV).is_none();
        Ok(TierSet {
            specs: opts.tiers.clone(),
            dirs,
            counters,
            inject,
        })
    }

    pub fn specs(&self) -> &[TierSpec] {
        &self.specs
    }

    pub fn dir(&self, tier: usize) -> &Path {
        &self.dirs[tier]
    }

    pub fn path_for(&self, tier: usize, file_name: &str) -> PathBuf {
        self.dirs[tier].join(file_name)
    }

    pub fn injection_enabled(&self) -> bool {
        self.inject
    }

    /// Read `buf.len()` bytes at `offset`, charging the tier's read latency
    /// (linear in whole 4 KB units).
    pub fn read_at(&self, tier: usize, file: &File, offset: u64, buf: &mut [u8]) -> Result<()> {
        if self.inject {
            let units = (buf.len() as u64).div_ceil(READ_UNIT).max(1);
            inject_delay(self.specs[tier].read_latency_us * units as f64);
        }
        file.read_exact_at(buf, offset)?;
        let c = &self.counters[tier];
        c.read_ops.fetch_add(1, Ordering::Relaxed);
        c.bytes_read.fetch_add(buf.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    /// Persist `bytes` as a new file on `tier`, charging write latency and
    /// the endurance ledger. Fails if the tier is out of simulated capacity.
    pub fn write_file(&self, tier: usize, file_name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let len = bytes.len() as u64;
        let spec = &self.specs[tier];
        let c = &self.counters[tier];
        let resident = c.resident_bytes.load(Ordering::Relaxed);
        if resident + len > spec.capacity_bytes {
            return Err(Error::TierCapacityExceeded {
                tier: spec.name.clone(),
                needed: len,
                available: spec.capacity_bytes.saturating_sub(resident),
            });
        }
        if self.inject {
            inject_delay(spec.write_latency_us * len as f64 / WRITE_UNIT as f64);
        }
        let path = self.path_for(tier, file_name);
        let tmp = self.path_for(tier, &format!("{file_name}.tmp"));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &path)?;
        c.resident_bytes.fetch_add(len, Ordering::Relaxed);
        c.bytes_written.fetch_add(len, Ordering::Relaxed);
        c.write_ops.fetch_add(1, Ordering::Relaxed);
        Ok(path)
    }

    pub fn remove_file(&self, tier: usize, file_name: &str) -> Result<()> {
        let path = self.path_for(tier, file_name);
        let len = std::fs::metadata(&path)?.len();
        std::fs::remove_file(&path)?;
        self.counters[tier]
            .resident_bytes
            .fetch_sub(len, Ordering::Relaxed);
        Ok(())
    }

    pub fn resident_bytes(&self, tier: usize) -> u64 {
        self.counters[tier].resident_bytes.load(Ordering::Relaxed)
    }

    pub fn read_ops(&self, tier: usize) -> u64 {
        self.counters[tier].read_ops.load(Ordering::Relaxed)
    }

    pub fn write_ops(&self, tier: usize) -> u64 {
        self.counters[tier].write_ops.load(Ordering::Relaxed)
    }

    pub fn bytes_read(&self, tier: usize) -> u64 {
        self.counters[tier].bytes_read.load(Ordering::Relaxed)
    }

    pub fn bytes_written(&self, tier: usize) -> u64 {
        self.counters[tier].bytes_written.load(Ordering::Relaxed)
    }

    pub fn wear_ledger(&self) -> Vec<WearEntry> {
        self.specs
            .iter()
            .zip(&self.counters)
            .map(|(spec, c)| {
                let written = c.bytes_written.load(Ordering::Relaxed);
                WearEntry {
                    tier: spec.name.clone(),
                    resident_bytes: c.resident_bytes.load(Ordering::Relaxed),
                    bytes_written: written,
                    capacity_bytes: spec.capacity_bytes,
                    pe_cycles: spec.pe_cycles,
                    wear: written as f64 / (spec.capacity_bytes as f64 * spec.pe_cycles as f64),
                }
            })
            .collect()
    }
}

/// Wait for `us` microseconds. Plain `thread::sleep` overshoots short
/// waits by the kernel timer slack (~50us), which would swamp the 26us
/// NVM figure; sleep the bulk and spin the remainder.
fn inject_delay(us: f64) {
    let target = Duration::from_nanos((us * 1000.0) as u64);
    let start = Instant::now();
    if target > Duration::from_micros(500) {
        std::thread::sleep(target - Duration::from_micros(300));
    }
    while start.elapsed() < target {
        std::hint::spin_loop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn injected_opts() -> Options {
        Options {
            latency_injection: true,
            ..Options::default()
        }
    }

    #[test]
    fn write_accounting_and_wear() {
        let dir = tempdir().unwrap();
        let mut opts = Options::default();
        for t in &mut opts.tiers {
            t.capacity_bytes = 1 << 20;
        }
        let tiers = TierSet::open(dir.path(), &opts).unwrap();
        tiers.write_file(0, "1.sst", &[7u8; 1000]).unwrap();
        tiers.write_file(0, "2.sst", &[7u8; 500]).unwrap();
        assert_eq!(tiers.resident_bytes(0), 1500);
        let ledger = tiers.wear_ledger();
        assert_eq!(ledger[0].bytes_written, 1500);
        let expected = 1500.0 / ((1u64 << 20) as f64 * 18_000.0);
        assert!((ledger[0].wear - expected).abs() < 1e-12);

        tiers.remove_file(0, "1.sst").unwrap();
        assert_eq!(tiers.resident_bytes(0), 500);
        // wear is cumulative, deletion does not lower it
        assert_eq!(tiers.wear_ledger()[0].bytes_written, 1500);
    }

    #[test]
    fn capacity_exceeded_rejected() {
        let dir = tempdir().unwrap();
        let mut opts = Options::default();
        opts.tiers[0].capacity_bytes = 100;
        let tiers = TierSet::open(dir.path(), &opts).unwrap();
        let err = tiers.write_file(0, "big.sst", &[0u8; 200]).unwrap_err();
        assert!(matches!(err, Error::TierCapacityExceeded { .. }));
    }

    #[test]
    fn read_latency_injection_scales_with_size() {
        let dir = tempdir().unwrap();
        let tiers = TierSet::open(dir.path(), &injected_opts()).unwrap();
        if !tiers.injection_enabled() {
            return; // TIERKV_NO_INJECT set in the environment
        }
        let q = 2; // QLC: 391us per 4 KB
        tiers.write_file(q, "x.sst", &vec![1u8; 8192]).unwrap();
        let file = File::open(tiers.path_for(q, "x.sst")).unwrap();

        let mut buf4 = [0u8; 4096];
        let t = Instant::now();
        tiers.read_at(q, &file, 0, &mut buf4).unwrap();
        let one = t.elapsed();
        assert!(one >= Duration::from_micros(391), "got {one:?}");

        let mut buf8 = [0u8; 8192];
        let t = Instant::now();
        tiers.read_at(q, &file, 0, &mut buf8).unwrap();
        let two = t.elapsed();
        assert!(two >= Duration::from_micros(782), "got {two:?}");
    }

    #[test]
    fn nvm_vs_qlc_write_delay_ratio() {
        // delay model is pure arithmetic: 121:456 per equal size
        let n = &TierSpec::default_table()[0];
        let q = &TierSpec::default_table()[2];
        let size = 1u64 << 20;
        let dn = n.write_latency_us * size as f64 / WRITE_UNIT as f64;
        let dq = q.write_latency_us * size as f64 / WRITE_UNIT as f64;
        assert!((dn / dq - 121.0 / 456.0).abs() < 1e-12);
    }
}
