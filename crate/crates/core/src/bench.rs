//! YCSB-style workload generator and metrics harness.
//!
//! A [`WorkloadSpec`] describes the key space, operation mix, and key
//! distribution (scrambled zipfian, uniform, or latest). Generation is
//! fully deterministic: operation choice and key choice draw from
//! separately seeded streams, so the same spec replays the same trace.
//! `run` executes the trace against an engine, excludes the warm-up
//! prefix from latency accounting, and emits a JSON-serializable
//! [`MetricsReport`]; `compare` runs the identical trace with pinned
//! compaction enabled and disabled side by side.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::Serialize;

use crate::config::Options;
use crate::engine::block_cache::BlockKind;
use crate::engine::stats::StatsSnapshot;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::tiers::WearEntry;
use crate::tracker::TrackerStats;

pub const DEFAULT_ZIPF_THETA: f64 = 0.99;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum KeyDistribution {
    /// Zipfian over the loaded key space, ranks scrambled so popular keys
    /// spread across the key range.
    Zipfian { theta: f64 },
    Uniform,
    /// Skewed toward the most recently inserted keys.
    Latest { theta: f64 },
}

/// One benchmark workload definition.
#[derive(Debug, Clone, Serialize)]
pub struct WorkloadSpec {
    pub name: String,
    /// Keys inserted by the load phase.
    pub record_count: u64,
    /// Operations executed by the run phase.
    pub operation_count: u64,
    pub value_bytes: usize,
    pub read_proportion: f64,
    pub update_proportion: f64,
    pub insert_proportion: f64,
    pub scan_proportion: f64,
    /// Read-modify-write proportion.
    pub rmw_proportion: f64,
    pub scan_max_len: usize,
    pub distribution: KeyDistribution,
    pub seed: u64,
    /// Leading fraction of operations excluded from latency metrics.
    pub warmup_fraction: f64,
    /// Number of analytically most-popular keys registered as the
    /// engine's watch set (zipfian only; 0 disables).
    pub watch_top_k: usize,
}

impl Default for WorkloadSpec {
    fn default() -> WorkloadSpec {
        WorkloadSpec {
            name: "custom".into(),
            record_count: 10_000,
            operation_count: 10_000,
            value_bytes: 100,
            read_proportion: 1.0,
            update_proportion: 0.0,
            insert_proportion: 0.0,
            scan_proportion: 0.0,
            rmw_proportion: 0.0,
            scan_max_len: 100,
            distribution: KeyDistribution::Zipfian {
                theta: DEFAULT_ZIPF_THETA,
            },
            seed: 42,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            watch_top_k: 64,
        }
    }
}

impl WorkloadSpec {
    /// The six standard mixes. Letters follow the usual naming:
    /// A update-heavy, B read-mostly, C read-only, D read-latest,
    /// E scan-heavy, F read-modify-write.
    pub fn preset(name: &str) -> Result<WorkloadSpec> {
        let mut spec = WorkloadSpec {
            name: name.to_lowercase(),
            read_proportion: 0.0,
            ..WorkloadSpec::default()
        };
        match spec.name.as_str() {
            "a" | "ycsb-a" => {
                spec.read_proportion = 0.5;
                spec.update_proportion = 0.5;
            }
            "b" | "ycsb-b" => {
                spec.read_proportion = 0.95;
                spec.update_proportion = 0.05;
            }
            "c" | "ycsb-c" => {
                spec.read_proportion = 1.0;
            }
            "d" | "ycsb-d" => {
                spec.read_proportion = 0.95;
                spec.insert_proportion = 0.05;
                spec.distribution = KeyDistribution::Latest {
                    theta: DEFAULT_ZIPF_THETA,
                };
            }
            "e" | "ycsb-e" => {
                spec.scan_proportion = 0.95;
                spec.insert_proportion = 0.05;
            }
            "f" | "ycsb-f" => {
                spec.read_proportion = 0.5;
                spec.rmw_proportion = 0.5;
            }
            other => {
                return Err(Error::InvalidSpec(format!("unknown preset {other:?}")));
            }
        }
        Ok(spec)
    }

    /// Parse a `key=value` workload file. `workload=<preset>` selects a
    /// base mix; other keys override it.
    pub fn parse(text: &str) -> Result<WorkloadSpec> {
        let mut spec = WorkloadSpec::default();
        let mut theta: Option<f64> = None;
        let mut dist: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidSpec(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<u64> {
                v.parse()
                    .map_err(|_| Error::InvalidSpec(format!("expected integer, got {v:?}")))
            };
            let frac = |v: &str| -> Result<f64> {
                let f: f64 = v
                    .parse()
                    .map_err(|_| Error::InvalidSpec(format!("expected number, got {v:?}")))?;
                Ok(f)
            };
            match key {
                "workload" => {
                    let name = spec.name.clone();
                    spec = WorkloadSpec::preset(value)?;
                    if name != "custom" {
                        spec.name = name;
                    }
                }
                "name" => spec.name = value.to_string(),
                "record_count" => spec.record_count = num(value)?,
                "operation_count" => spec.operation_count = num(value)?,
                "value_bytes" => spec.value_bytes = num(value)? as usize,
                "read_proportion" => spec.read_proportion = frac(value)?,
                "update_proportion" => spec.update_proportion = frac(value)?,
                "insert_proportion" => spec.insert_proportion = frac(value)?,
                "scan_proportion" => spec.scan_proportion = frac(value)?,
                "rmw_proportion" => spec.rmw_proportion = frac(value)?,
                "scan_max_len" => spec.scan_max_len = num(value)? as usize,
                "distribution" => dist = Some(value.to_string()),
                "theta" => theta = Some(frac(value)?),
                "seed" => spec.seed = num(value)?,
                "warmup_fraction" => spec.warmup_fraction = frac(value)?,
                "watch_top_k" => spec.watch_top_k = num(value)? as usize,
                other => return Err(Error::InvalidSpec(format!("unknown key {other:?}"))),
            }
        }
        if let Some(d) = dist {
            let t = theta.unwrap_or(DEFAULT_ZIPF_THETA);
            spec.distribution = match d.as_str() {
                "zipfian" => KeyDistribution::Zipfian { theta: t },
                "uniform" => KeyDistribution::Uniform,
                "latest" => KeyDistribution::Latest { theta: t },
                other => {
                    return Err(Error::InvalidSpec(format!(
                        "unknown distribution {other:?}"
                    )))
                }
            };
        } else if let (Some(t), KeyDistribution::Zipfian { .. }) = (theta, spec.distribution) {
            spec.distribution = KeyDistribution::Zipfian { theta: t };
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<WorkloadSpec> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.read_proportion
            + self.update_proportion
            + self.insert_proportion
            + self.scan_proportion
            + self.rmw_proportion;
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidSpec(format!(
                "operation proportions sum to {total}, expected 1"
            )));
        }
        for p in [
            self.read_proportion,
            self.update_proportion,
            self.insert_proportion,
            self.scan_proportion,
            self.rmw_proportion,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidSpec("proportions must be in [0,1]".into()));
            }
        }
        if self.record_count == 0 {
            return Err(Error::InvalidSpec("record_count must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidSpec("warmup_fraction must be in [0,1)".into()));
        }
        if self.scan_max_len == 0 {
            return Err(Error::InvalidSpec("scan_max_len must be > 0".into()));
        }
        match self.distribution {
            KeyDistribution::Zipfian { theta } | KeyDistribution::Latest { theta } => {
                if theta <= 0.0 || theta >= 2.0 {
                    return Err(Error::InvalidSpec("theta must be in (0,2)".into()));
                }
            }
            KeyDistribution::Uniform => {}
        }
        Ok(())
    }

    /// The `k` analytically most-popular keys under the scrambled zipfian
    /// (lowest raw ranks), or the empty set for other distributions.
    pub fn popular_keys(&self, k: usize) -> Vec<Vec<u8>> {
        match self.distribution {
            KeyDistribution::Zipfian { .. } => {
                let stride = scramble_stride(self.record_count);
                (0..k.min(self.record_count as usize) as u64)
                    .map(|rank| key_bytes(scramble(rank, self.record_count, stride)))
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

pub fn key_bytes(id: u64) -> Vec<u8> {
    format!("user{id:012}").into_bytes()
}

/// Deterministic value payload for (key id, version).
pub fn value_bytes(id: u64, version: u64, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut x = id ^ version.rotate_left(32) ^ 0x5851_f42d_4c95_7f2d;
    while out.len() < len {
        x = x
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.truncate(len);
    out
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Multiplier coprime with `n`, used to scatter zipf ranks over the key
/// space as a bijection.
pub fn scramble_stride(n: u64) -> u64 {
    let mut stride = 0x9e37_79b9u64 | 1;
    while gcd(stride % n.max(1), n.max(1)) != 1 {
        stride += 2;
    }
    stride
}

/// Bijective rank -> key-id map: `(rank * stride) mod n`.
pub fn scramble(rank: u64, n: u64, stride: u64) -> u64 {
    ((rank as u128 * stride as u128) % n as u128) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Read,
    Update,
    Insert,
    Scan,
    Rmw,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Update => "update",
            OpKind::Insert => "insert",
            OpKind::Scan => "scan",
            OpKind::Rmw => "rmw",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Read(u64),
    Update(u64),
    Insert(u64),
    Scan(u64, usize),
    Rmw(u64),
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Read(_) => OpKind::Read,
            Op::Update(_) => OpKind::Update,
            Op::Insert(_) => OpKind::Insert,
            Op::Scan(..) => OpKind::Scan,
            Op::Rmw(_) => OpKind::Rmw,
        }
    }
}

/// Deterministic operation stream for one spec. Operation choice and key
/// choice use independent seeded rngs so the mix and the key sequence are
/// reproducible.
pub struct OpGenerator {
    spec: WorkloadSpec,
    op_rng: ChaCha8Rng,
    key_rng: ChaCha8Rng,
    zipf: Option<Zipf<f64>>,
    stride: u64,
    insert_count: u64,
}

impl OpGenerator {
    pub fn new(spec: &WorkloadSpec) -> Result<OpGenerator> {
        spec.validate()?;
        let theta = match spec.distribution {
            KeyDistribution::Zipfian { theta } | KeyDistribution::Latest { theta } => Some(theta),
            KeyDistribution::Uniform => None,
        };
        let zipf = match theta {
            Some(t) => Some(Zipf::new(spec.record_count as f64, t).map_err(|e| {
                Error::InvalidSpec(format!("zipf({}, {t}): {e}", spec.record_count))
            })?),
            None => None,
        };
        Ok(OpGenerator {
            stride: scramble_stride(spec.record_count),
            op_rng: ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6f70),
            key_rng: ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6b6579),
            zipf,
            insert_count: spec.record_count,
            spec: spec.clone(),
        })
    }

    /// Raw zipf rank in 0..record_count (0 = most popular).
    fn zipf_rank(&mut self) -> u64 {
        let z = self.zipf.expect("zipfian spec");
        let r = z.sample(&mut self.key_rng) as u64;
        (r - 1).min(self.spec.record_count - 1)
    }

    fn pick_key(&mut self) -> u64 {
        match self.spec.distribution {
            KeyDistribution::Zipfian { .. } => {
                let rank = self.zipf_rank();
                scramble(rank, self.spec.record_count, self.stride)
            }
            KeyDistribution::Uniform => self.key_rng.random_range(0..self.insert_count),
            KeyDistribution::Latest { .. } => {
                let rank = self.zipf_rank();
                self.insert_count - 1 - (rank % self.insert_count)
            }
        }
    }

    pub fn next_op(&mut self) -> Op {
        let r: f64 = self.op_rng.random();
        let s = &self.spec;
        let mut acc = s.read_proportion;
        if r < acc {
            return Op::Read(self.pick_key());
        }
        acc += s.update_proportion;
        if r < acc {
            return Op::Update(self.pick_key());
        }
        acc += s.insert_proportion;
        if r < acc {
            let id = self.insert_count;
            self.insert_count += 1;
            return Op::Insert(id);
        }
        acc += s.scan_proportion;
        if r < acc {
            let len = self.key_rng.random_range(1..=s.scan_max_len);
            return Op::Scan(self.pick_key(), len);
        }
        Op::Rmw(self.pick_key())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencySummary {
    fn from_samples(mut samples: Vec<f64>) -> LatencySummary {
        if samples.is_empty() {
            return LatencySummary {
                count: 0,
                mean_us: 0.0,
                p50_us: 0.0,
                p95_us: 0.0,
                p99_us: 0.0,
                max_us: 0.0,
            };
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let count = samples.len() as u64;
        let mean = samples.iter().sum::<f64>() / count as f64;
        let pct = |p: f64| -> f64 {
            let idx = ((p * count as f64).ceil() as usize).clamp(1, samples.len());
            samples[idx - 1]
        };
        LatencySummary {
            count,
            mean_us: mean,
            p50_us: pct(0.50),
            p95_us: pct(0.95),
            p99_us: pct(0.99),
            max_us: *samples.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadReport {
    pub records: u64,
    pub elapsed_seconds: f64,
    pub throughput_ops_per_sec: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub workload: WorkloadSpec,
    pub operations: u64,
    /// Post-warm-up operations included in latency metrics.
    pub measured_operations: u64,
    pub elapsed_seconds: f64,
    pub throughput_ops_per_sec: f64,
    pub overall_latency_us: LatencySummary,
    pub op_latencies_us: BTreeMap<String, LatencySummary>,
    pub op_counts: BTreeMap<String, u64>,
    pub engine: StatsSnapshot,
    pub tracker: TrackerStats,
    pub data_block_cache_hit_rate: f64,
    pub wear: Vec<WearEntry>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Load phase: insert all `record_count` keys in id order.
pub fn load(engine: &Engine, spec: &WorkloadSpec) -> Result<LoadReport> {
    spec.validate()?;
    let start = Instant::now();
    for id in 0..spec.record_count {
        engine.put(&key_bytes(id), &value_bytes(id, 0, spec.value_bytes))?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(LoadReport {
        records: spec.record_count,
        elapsed_seconds: elapsed,
        throughput_ops_per_sec: spec.record_count as f64 / elapsed.max(1e-9),
    })
}

/// Run phase: execute the deterministic trace, excluding the warm-up
/// prefix from latency metrics.
pub fn run(engine: &Engine, spec: &WorkloadSpec) -> Result<MetricsReport> {
    let mut generator = OpGenerator::new(spec)?;
    if spec.watch_top_k > 0 {
        let popular = spec.popular_keys(spec.watch_top_k);
        if !popular.is_empty() {
            engine.watch_keys(popular);
        }
    }
    let warmup = (spec.operation_count as f64 * spec.warmup_fraction).floor() as u64;
    let mut overall: Vec<f64> = Vec::new();
    let mut per_op: BTreeMap<OpKind, Vec<f64>> = BTreeMap::new();
    let mut op_counts: BTreeMap<OpKind, u64> = BTreeMap::new();
    let mut versions: std::collections::HashMap<u64, u64> = std::collections::HashMap::new();
    let started = Instant::now();
    let mut measured_start: Option<Instant> = None;

    for i in 0..spec.operation_count {
        let op = generator.next_op();
        let kind = op.kind();
        *op_counts.entry(kind).or_insert(0) += 1;
        if i == warmup {
            measured_start = Some(Instant::now());
        }
        let t = Instant::now();
        match &op {
            Op::Read(id) => {
                engine.get(&key_bytes(*id))?;
            }
            Op::Update(id) => {
                let v = versions.entry(*id).or_insert(0);
                *v += 1;
                engine.put(&key_bytes(*id), &value_bytes(*id, *v, spec.value_bytes))?;
            }
            Op::Insert(id) => {
                engine.put(&key_bytes(*id), &value_bytes(*id, 0, spec.value_bytes))?;
            }
            Op::Scan(id, len) => {
                engine.scan(&key_bytes(*id), *len)?;
            }
            Op::Rmw(id) => {
                engine.get(&key_bytes(*id))?;
                let v = versions.entry(*id).or_insert(0);
                *v += 1;
                engine.put(&key_bytes(*id), &value_bytes(*id, *v, spec.value_bytes))?;
            }
        }
        if i >= warmup {
            let us = t.elapsed().as_secs_f64() * 1e6;
            overall.push(us);
            per_op.entry(kind).or_default().push(us);
        }
    }

    let measured = spec.operation_count - warmup;
    let measured_elapsed = measured_start
        .map(|s| s.elapsed().as_secs_f64())
        .unwrap_or_else(|| started.elapsed().as_secs_f64());
    let cache = engine.cache_stats();
    Ok(MetricsReport {
        workload: spec.clone(),
        operations: spec.operation_count,
        measured_operations: measured,
        elapsed_seconds: measured_elapsed,
        throughput_ops_per_sec: measured as f64 / measured_elapsed.max(1e-9),
        overall_latency_us: LatencySummary::from_samples(overall),
        op_latencies_us: per_op
            .into_iter()
            .map(|(k, v)| (k.name().to_string(), LatencySummary::from_samples(v)))
            .collect(),
        op_counts: op_counts
            .into_iter()
            .map(|(k, v)| (k.name().to_string(), v))
            .collect(),
        engine: engine.stats(),
        tracker: engine.tracker_stats(),
        data_block_cache_hit_rate: cache.hit_rate(BlockKind::Data),
        wear: engine.wear_ledger(),
    })
}

/// Write the standard artifact set for one run into `dir`:
/// `report.json`, `heatmap.csv`, `iostat.csv`.
pub fn write_artifacts(dir: &Path, engine: &Engine, report: &MetricsReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    std::fs::write(dir.join("heatmap.csv"), engine.heatmap_csv())?;
    std::fs::write(dir.join("iostat.csv"), engine.iostat_csv())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub pinned: MetricsReport,
    pub unpinned: MetricsReport,
    /// pinned mean read latency / unpinned mean read latency.
    pub mean_read_latency_ratio: f64,
    pub p99_read_latency_ratio: f64,
    pub throughput_ratio: f64,
}

impl CompareReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Run the identical load + trace twice under `base_dir`: once with
/// pinned compaction (`pinned/`), once without (`unpinned/`).
pub fn compare(base_dir: &Path, opts: &Options, spec: &WorkloadSpec) -> Result<CompareReport> {
    let run_one = |pinning: bool| -> Result<MetricsReport> {
        let sub = if pinning { "pinned" } else { "unpinned" };
        let dir = base_dir.join(sub);
        std::fs::create_dir_all(&dir)?;
        let mut opts = opts.clone();
        opts.pinning_enabled = pinning;
        let engine = Engine::open(&dir, opts)?;
        load(&engine, spec)?;
        let report = run(&engine, spec)?;
        write_artifacts(&dir, &engine, &report)?;
        engine.close()?;
        Ok(report)
    };
    let pinned = run_one(true)?;
    let unpinned = run_one(false)?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    let read = |r: &MetricsReport| r.op_latencies_us.get("read").cloned();
    let (pr, ur) = (read(&pinned), read(&unpinned));
    let mean_ratio = match (&pr, &ur) {
        (Some(p), Some(u)) => ratio(p.mean_us, u.mean_us),
        _ => f64::NAN,
    };
    let p99_ratio = match (&pr, &ur) {
        (Some(p), Some(u)) => ratio(p.p99_us, u.p99_us),
        _ => f64::NAN,
    };
    Ok(CompareReport {
        throughput_ratio: ratio(pinned.throughput_ops_per_sec, unpinned.throughput_ops_per_sec),
        mean_read_latency_ratio: mean_ratio,
        p99_read_latency_ratio: p99_ratio,
        pinned,
        unpinned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use tempfile::tempdir;

    fn small_opts() -> Options {
        let mut opts = Options::default();
        opts.memtable_bytes = 16 << 10;
        opts.l1_target_bytes = 32 << 10;
        opts.max_file_bytes = 16 << 10;
        opts.l0_compaction_trigger = 2;
        opts.block_size = 1024;
        opts
    }

    #[test]
    fn presets_have_valid_mixes() {
        for name in ["a", "b", "c", "d", "e", "f"] {
            let spec = WorkloadSpec::preset(name).unwrap();
            spec.validate().unwrap();
        }
        assert!(WorkloadSpec::preset("z").is_err());
        let d = WorkloadSpec::preset("ycsb-d").unwrap();
        assert!(matches!(d.distribution, KeyDistribution::Latest { .. }));
    }

    #[test]
    fn spec_parsing_with_preset_and_overrides() {
        let spec = WorkloadSpec::parse(
            "# workload\n\
             workload = b\n\
             record_count = 5000\n\
             operation_count = 2000\n\
             theta = 0.8\n\
             seed = 7\n",
        )
        .unwrap();
        assert_eq!(spec.record_count, 5000);
        assert_eq!(spec.read_proportion, 0.95);
        assert_eq!(spec.distribution, KeyDistribution::Zipfian { theta: 0.8 });
        assert_eq!(spec.seed, 7);

        assert!(WorkloadSpec::parse("bogus = 1").is_err());
        assert!(WorkloadSpec::parse("read_proportion = 0.5").is_err()); // sums to 0.5
    }

    #[test]
    fn scramble_is_a_bijection() {
        for n in [10u64, 997, 10_000] {
            let stride = scramble_stride(n);
            let mut seen = vec![false; n as usize];
            for rank in 0..n {
                let id = scramble(rank, n, stride);
                assert!(!seen[id as usize], "collision at rank {rank}");
                seen[id as usize] = true;
            }
        }
    }

    /// Chi-square goodness-of-fit of raw zipf ranks against the analytic
    /// pmf p(k) = k^-theta / H(n, theta), at the 99.9% critical value.
    #[test]
    fn zipf_ranks_match_analytic_distribution() {
        let n = 1000u64;
        let theta = DEFAULT_ZIPF_THETA;
        let samples = 200_000usize;
        let mut spec = WorkloadSpec::default();
        spec.record_count = n;
        let mut generator = OpGenerator::new(&spec).unwrap();

        let mut observed = vec![0f64; n as usize];
        for _ in 0..samples {
            observed[generator.zipf_rank() as usize] += 1.0;
        }
        let h: f64 = (1..=n).map(|k| (k as f64).powf(-theta)).sum();
        // group the tail so every expected bucket is >= 5
        let mut obs_groups: Vec<f64> = Vec::new();
        let mut exp_groups: Vec<f64> = Vec::new();
        let mut obs_acc = 0.0;
        let mut exp_acc = 0.0;
        for k in 1..=n {
            obs_acc += observed[(k - 1) as usize];
            exp_acc += samples as f64 * (k as f64).powf(-theta) / h;
            if exp_acc >= 5.0 {
                obs_groups.push(obs_acc);
                exp_groups.push(exp_acc);
                obs_acc = 0.0;
                exp_acc = 0.0;
            }
        }
        if exp_acc > 0.0 {
            *obs_groups.last_mut().unwrap() += obs_acc;
            *exp_groups.last_mut().unwrap() += exp_acc;
        }
        let stat: f64 = obs_groups
            .iter()
            .zip(&exp_groups)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        let df = (obs_groups.len() - 1) as f64;
        let critical = ChiSquared::new(df).unwrap().inverse_cdf(0.999);
        assert!(
            stat < critical,
            "chi-square {stat:.1} >= critical {critical:.1} (df {df})"
        );
    }

    #[test]
    fn op_mix_tracks_proportions() {
        let spec = WorkloadSpec::preset("b").unwrap();
        let mut generator = OpGenerator::new(&spec).unwrap();
        let n = 50_000;
        let mut reads = 0u64;
        for _ in 0..n {
            if matches!(generator.next_op(), Op::Read(_)) {
                reads += 1;
            }
        }
        let frac = reads as f64 / n as f64;
        assert!((frac - 0.95).abs() < 0.01, "read fraction {frac}");
    }

    #[test]
    fn trace_is_deterministic() {
        let spec = WorkloadSpec::preset("a").unwrap();
        let mut g1 = OpGenerator::new(&spec).unwrap();
        let mut g2 = OpGenerator::new(&spec).unwrap();
        for _ in 0..10_000 {
            assert_eq!(g1.next_op(), g2.next_op());
        }
    }

    #[test]
    fn identical_runs_reach_identical_engine_state() {
        let spec = WorkloadSpec {
            record_count: 2000,
            operation_count: 3000,
            value_bytes: 64,
            ..WorkloadSpec::preset("a").unwrap()
        };
        let run_once = || -> (Vec<Vec<crate::engine::manifest::TableMeta>>, StatsSnapshot) {
            let dir = tempdir().unwrap();
            let engine = Engine::open(dir.path(), small_opts()).unwrap();
            load(&engine, &spec).unwrap();
            run(&engine, &spec).unwrap();
            (engine.levels(), engine.stats())
        };
        let (l1, s1) = run_once();
        let (l2, s2) = run_once();
        assert_eq!(l1, l2, "manifests diverged");
        assert_eq!(
            serde_json::to_string(&s1).unwrap(),
            serde_json::to_string(&s2).unwrap()
        );
    }

    #[test]
    fn warmup_prefix_excluded_from_metrics() {
        let spec = WorkloadSpec {
            record_count: 500,
            operation_count: 1000,
            warmup_fraction: 0.30,
            ..WorkloadSpec::preset("c").unwrap()
        };
        let dir = tempdir().unwrap();
        let engine = Engine::open(dir.path(), small_opts()).unwrap();
        load(&engine, &spec).unwrap();
        let report = run(&engine, &spec).unwrap();
        assert_eq!(report.measured_operations, 700);
        assert_eq!(report.overall_latency_us.count, 700);
        // engine executed all 1000 gets regardless
        assert_eq!(report.engine.gets, 1000);
        report.to_json().unwrap();
    }

    #[test]
    fn popular_keys_are_the_lowest_ranks_scrambled() {
        let spec = WorkloadSpec {
            record_count: 100,
            ..WorkloadSpec::default()
        };
        let popular = spec.popular_keys(5);
        assert_eq!(popular.len(), 5);
        let stride = scramble_stride(100);
        for (rank, key) in popular.iter().enumerate() {
            assert_eq!(*key, key_bytes(scramble(rank as u64, 100, stride)));
        }
    }

    #[test]
    fn compare_produces_both_reports_and_artifacts() {
        let dir = tempdir().unwrap();
        // update-heavy mix so compactions keep running after the tracker
        // has seen reads (pins only happen at compaction time)
        let spec = WorkloadSpec {
            record_count: 1500,
            operation_count: 4000,
            value_bytes: 64,
            watch_top_k: 16,
            ..WorkloadSpec::preset("a").unwrap()
        };
        let report = compare(dir.path(), &small_opts(), &spec).unwrap();
        assert!(report.pinned.engine.pinned_keys > 0);
        assert_eq!(report.unpinned.engine.pinned_keys, 0);
        assert!(report.mean_read_latency_ratio.is_finite());
        for sub in ["pinned", "unpinned"] {
            for f in ["report.json", "heatmap.csv", "iostat.csv"] {
                assert!(dir.path().join(sub).join(f).exists(), "{sub}/{f}");
            }
        }
        report.to_json().unwrap();
    }
}
