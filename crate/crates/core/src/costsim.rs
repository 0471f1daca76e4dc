//! Analytical cost/latency simulator for level-to-tier assignments.
//!
//! For a level-size profile, a read-fraction profile, and a sustained
//! write rate, every assignment of storage devices to levels gets two
//! numbers: expected average read latency (latency-weighted read
//! fractions) and hardware cost. Cost provisions each level at its data
//! size plus endurance spare: a device must absorb the level's lifetime
//! write volume within its program/erase budget, and spare capacity is
//! bought in whole gigabytes. Sweeping all assignments yields a
//! cost/latency Pareto frontier.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tiers::TierSpec;

const DAYS_PER_YEAR: f64 = 365.0;

/// Inputs to the simulator.
#[derive(Debug, Clone)]
pub struct SimInput {
    /// Resident data per level, GB.
    pub level_sizes_gb: Vec<f64>,
    /// Fraction of point reads served by each level. The remainder
    /// (memtable + block cache) is served at negligible latency.
    pub read_fractions: Vec<f64>,
    /// Write volume rewritten at each level, GB/day. In a leveled tree
    /// every flushed byte is rewritten roughly once per level it passes
    /// through, so the user write rate is a good per-level estimate.
    pub write_rate_gb_per_day: f64,
    /// Deployment lifetime the devices must survive.
    pub lifetime_years: f64,
    /// Candidate devices; `TierSpec::letter` names them in mappings.
    pub devices: Vec<TierSpec>,
}

impl Default for SimInput {
    fn default() -> SimInput {
        SimInput {
            level_sizes_gb: vec![0.2, 0.2, 2.0, 20.0, 200.0],
            // read-aware default: pinning concentrates popular reads in the
            // upper levels, so the served-read share falls with depth (the
            // remaining 10% hits the memtable and block cache)
            read_fractions: vec![0.35, 0.25, 0.15, 0.10, 0.05],
            write_rate_gb_per_day: 0.0,
            lifetime_years: 3.0,
            devices: TierSpec::default_table(),
        }
    }
}

impl SimInput {
    pub fn level_count(&self) -> usize {
        self.level_sizes_gb.len()
    }

    pub fn device_for(&self, letter: char) -> Result<&TierSpec> {
        self.devices
            .iter()
            .find(|d| d.letter == letter)
            .ok_or(Error::UnknownTier(letter))
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_sizes_gb.is_empty()
            || self.level_sizes_gb.len() != self.read_fractions.len()
        {
            return Err(Error::InvalidConfig(
                "level_sizes_gb and read_fractions must be equal-length and nonempty".into(),
            ));
        }
        if self.level_sizes_gb.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidConfig("negative level size".into()));
        }
        let total: f64 = self.read_fractions.iter().sum();
        if self.read_fractions.iter().any(|f| *f < 0.0) || total > 1.0 + 1e-9 {
            return Err(Error::InvalidConfig(
                "read_fractions must be nonnegative and sum to at most 1".into(),
            ));
        }
        if self.write_rate_gb_per_day < 0.0 || self.lifetime_years <= 0.0 {
            return Err(Error::InvalidConfig(
                "write rate must be >= 0 and lifetime > 0".into(),
            ));
        }
        if self.devices.is_empty() {
            return Err(Error::InvalidConfig("no devices".into()));
        }
        for d in &self.devices {
            d.validate()?;
        }
        Ok(())
    }

    /// Parse a `key=value` spec; unset keys keep their defaults.
    ///
    /// Keys: `level_sizes_gb`, `read_fractions` (comma-separated lists),
    /// `write_rate_gb_per_day`, `lifetime_years`, and per-device overrides
    /// `device.<NAME>.<read_latency_us|cost_per_gb|pe_cycles>`.
    pub fn parse(text: &str) -> Result<SimInput> {
        let mut input = SimInput::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let float_list = |v: &str| -> Result<Vec<f64>> {
                v.split(',')
                    .map(|s| {
                        s.trim().parse().map_err(|_| {
                            Error::InvalidConfig(format!("expected number list, got {v:?}"))
                        })
                    })
                    .collect()
            };
            let float = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::InvalidConfig(format!("expected number, got {v:?}")))
            };
            if let Some(rest) = key.strip_prefix("device.") {
                let (name, field) = rest.split_once('.').ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "line {}: expected device.<name>.<field>",
                        lineno + 1
                    ))
                })?;
                let dev = input
                    .devices
                    .iter_mut()
                    .find(|d| d.name == name)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown device {name:?}")))?;
                match field {
                    "read_latency_us" => dev.read_latency_us = float(value)?,
                    "write_latency_us" => dev.write_latency_us = float(value)?,
                    "cost_per_gb" => dev.cost_per_gb = float(value)?,
                    "pe_cycles" => {
                        dev.pe_cycles = value.parse().map_err(|_| {
                            Error::InvalidConfig(format!("expected integer, got {value:?}"))
                        })?
                    }
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "unknown device field {other:?}"
                        )))
                    }
                }
                continue;
            }
            match key {
                "level_sizes_gb" => input.level_sizes_gb = float_list(value)?,
                "read_fractions" => input.read_fractions = float_list(value)?,
                "write_rate_gb_per_day" => input.write_rate_gb_per_day = float(value)?,
                "lifetime_years" => input.lifetime_years = float(value)?,
                other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
            }
        }
        input.validate()?;
        Ok(input)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<SimInput> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// One evaluated level-to-device assignment.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    /// One device letter per level, e.g. "NNNTQ".
    pub mapping: String,
    pub cost_dollars: f64,
    pub avg_read_latency_us: f64,
    /// Provisioned capacity per level, GB (data + endurance spare).
    pub provisioned_gb: Vec<f64>,
}

/// Evaluate one mapping.
pub fn simulate(input: &SimInput, mapping: &str) -> Result<SimResult> {
    input.validate()?;
    let letters: Vec<char> = mapping.chars().collect();
    if letters.len() != input.level_count() {
        return Err(Error::InvalidConfig(format!(
            "mapping {mapping:?} must have one letter per level ({})",
            input.level_count()
        )));
    }
    let lifetime_writes_gb =
        input.write_rate_gb_per_day * DAYS_PER_YEAR * input.lifetime_years;
    let mut cost = 0.0;
    let mut latency = 0.0;
    let mut provisioned_gb = Vec::with_capacity(letters.len());
    for (level, letter) in letters.iter().enumerate() {
        let dev = input.device_for(*letter)?;
        let size = input.level_sizes_gb[level];
        // endurance: capacity large enough that lifetime writes stay
        // within the P/E budget; spare bought in whole GB
        let endurance_gb = lifetime_writes_gb / dev.pe_cycles as f64;
        let spare = (endurance_gb - size).max(0.0).ceil();
        let capacity = size + spare;
        cost += capacity * dev.cost_per_gb;
        latency += input.read_fractions[level] * dev.read_latency_us;
        provisioned_gb.push(capacity);
    }
    Ok(SimResult {
        mapping: mapping.to_string(),
        cost_dollars: cost,
        avg_read_latency_us: latency,
        provisioned_gb,
    })
}

/// Evaluate every assignment of devices to levels (|devices|^levels).
pub fn sweep(input: &SimInput) -> Result<Vec<SimResult>> {
    input.validate()?;
    let letters: Vec<char> = input.devices.iter().map(|d| d.letter).collect();
    let levels = input.level_count();
    let total = letters.len().pow(levels as u32);
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut mapping = String::with_capacity(levels);
        let mut rest = idx;
        for _ in 0..levels {
            mapping.push(letters[rest % letters.len()]);
            rest /= letters.len();
        }
        out.push(simulate(input, &mapping)?);
    }
    Ok(out)
}

/// Pareto-optimal subset: no other config is at least as good on both
/// axes and strictly better on one. Returned sorted by cost ascending;
/// ties in both dimensions keep the lexicographically smallest mapping.
pub fn pareto_frontier(results: &[SimResult]) -> Vec<SimResult> {
    let mut sorted: Vec<&SimResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.cost_dollars
            .partial_cmp(&b.cost_dollars)
            .unwrap()
            .then(a.avg_read_latency_us.partial_cmp(&b.avg_read_latency_us).unwrap())
            .then(a.mapping.cmp(&b.mapping))
    });
    let mut frontier: Vec<SimResult> = Vec::new();
    let mut best_latency = f64::INFINITY;
    for r in sorted {
        if r.avg_read_latency_us < best_latency - 1e-12 {
            best_latency = r.avg_read_latency_us;
            frontier.push(r.clone());
        }
    }
    frontier
}

/// Serialize sweep results as CSV, marking the frontier members.
pub fn results_csv(results: &[SimResult]) -> String {
    let frontier: std::collections::HashSet<String> = pareto_frontier(results)
        .into_iter()
        .map(|r| r.mapping)
        .collect();
    let mut out = String::from("mapping,cost_dollars,avg_read_latency_us,on_frontier\n");
    let mut rows: Vec<&SimResult> = results.iter().collect();
    rows.sort_by(|a, b| {
        a.cost_dollars
            .partial_cmp(&b.cost_dollars)
            .unwrap()
            .then(a.mapping.cmp(&b.mapping))
    });
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{}\n",
            r.mapping,
            r.cost_dollars,
            r.avg_read_latency_us,
            frontier.contains(r.mapping.as_str())
        ));
    }
    out
}

/// Per-mapping lookup helper for tests and reporting.
pub fn index_by_mapping(results: &[SimResult]) -> HashMap<String, &SimResult> {
    results.iter().map(|r| (r.mapping.clone(), r)).collect()
}
