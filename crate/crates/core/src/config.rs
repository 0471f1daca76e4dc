//! Engine options, loaded from a plain-text `key=value` file.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tiers::TierSpec;

/// Engine configuration.
///
/// Every field can be set from a config file; see [`Options::from_file`].
/// Byte-valued keys accept `k`/`m`/`g` suffixes (powers of 1024).
#[derive(Debug, Clone)]
pub struct Options {
    /// Target data-block size inside an SST.
    pub block_size: usize,
    /// Block cache capacity in bytes.
    pub cache_bytes: u64,
    /// Memtable flush threshold in bytes.
    pub memtable_bytes: u64,
    /// Number of LSM levels (L0..L{n-1}).
    pub level_count: usize,
    /// Level size multiplier between consecutive levels (>= 2).
    pub multiplier: u64,
    /// Target size of L1; deeper targets grow by `multiplier`.
    pub l1_target_bytes: u64,
    /// L0 file count that triggers compaction.
    pub l0_compaction_trigger: usize,
    /// L0 file count at which writers stall until compaction catches up.
    pub l0_stall_trigger: usize,
    /// Target size of a single SST output file.
    pub max_file_bytes: u64,
    /// Bloom filter bits per key.
    pub bloom_bits_per_key: usize,
    /// Maximum accepted key length.
    pub key_cap_bytes: usize,
    /// Enable pinned compactions.
    pub pinning_enabled: bool,
    /// Fraction of tracked keys to pin (0..=1).
    pub pinning_threshold: f64,
    /// Maximum number of keys the popularity tracker holds.
    pub tracker_capacity: usize,
    /// Whether scans update the tracker (point reads always do).
    pub track_scans: bool,
    /// Level-to-tier assignment, one letter per level, e.g. "NNNTQ".
    pub tier_mapping: String,
    /// Tier table; letters in `tier_mapping` refer to `TierSpec::letter`.
    pub tiers: Vec<TierSpec>,
    /// Inject per-tier latencies on block I/O. Can also be disabled with
    /// the `TIERKV_NO_INJECT` environment variable.
    pub latency_injection: bool,
    /// Run compactions on background worker threads instead of inline on
    /// the writer path. Inline mode is deterministic.
    pub background_compaction: bool,
    /// Number of background compaction workers.
    pub compaction_workers: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            block_size: 4096,
            cache_bytes: 32 << 20,
            memtable_bytes: 64 << 20,
            level_count: 5,
            multiplier: 10,
            l1_target_bytes: 64 << 20,
            l0_compaction_trigger: 4,
            l0_stall_trigger: 12,
            max_file_bytes: 8 << 20,
            bloom_bits_per_key: 10,
            key_cap_bytes: 4096,
            pinning_enabled: true,
            pinning_threshold: 0.10,
            tracker_capacity: 100_000,
            track_scans: false,
            tier_mapping: "NNNTQ".to_string(),
            tiers: TierSpec::default_table(),
            latency_injection: false,
            background_compaction: false,
            compaction_workers: 8,
        }
    }
}

impl Options {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Options> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Options> {
        let mut opts = Options::default();
        let mut tier_overrides: HashMap<String, HashMap<String, String>> = HashMap::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());

            if let Some(rest) = key.strip_prefix("tier.") {
                let (name, field) = rest.split_once('.').ok_or_else(|| {
                    Error::InvalidConfig(format!("line {}: expected tier.<name>.<field>", lineno + 1))
                })?;
                tier_overrides
                    .entry(name.to_string())
                    .or_default()
                    .insert(field.to_string(), value.to_string());
                continue;
            }

            match key {
                "block_size" => opts.block_size = parse_bytes(value)? as usize,
                "cache_bytes" => opts.cache_bytes = parse_bytes(value)?,
                "memtable_bytes" | "flush_threshold" => opts.memtable_bytes = parse_bytes(value)?,
                "level_count" => opts.level_count = parse_num(value)? as usize,
                "multiplier" => opts.multiplier = parse_num(value)?,
                "l1_target_bytes" => opts.l1_target_bytes = parse_bytes(value)?,
                "l0_compaction_trigger" => opts.l0_compaction_trigger = parse_num(value)? as usize,
                "l0_stall_trigger" => opts.l0_stall_trigger = parse_num(value)? as usize,
                "max_file_bytes" => opts.max_file_bytes = parse_bytes(value)?,
                "bloom_bits_per_key" => opts.bloom_bits_per_key = parse_num(value)? as usize,
                "key_cap_bytes" => opts.key_cap_bytes = parse_bytes(value)? as usize,
                "pinning_enabled" => opts.pinning_enabled = parse_bool(value)?,
                "pinning_threshold" => opts.pinning_threshold = parse_float(value)?,
                "tracker_capacity" => opts.tracker_capacity = parse_num(value)? as usize,
                "track_scans" => opts.track_scans = parse_bool(value)?,
                "tier_mapping" => opts.tier_mapping = value.to_string(),
                "latency_injection" => opts.latency_injection = parse_bool(value)?,
                "background_compaction" => opts.background_compaction = parse_bool(value)?,
                "compaction_workers" => opts.compaction_workers = parse_num(value)? as usize,
                other => {
                    return Err(Error::InvalidConfig(format!("unknown key {other:?}")));
                }
            }
        }

        for (name, fields) in tier_overrides {
            let spec = match opts.tiers.iter_mut().find(|t| t.name == name) {
                Some(spec) => spec,
                None => {
                    let letter = name
                        .chars()
                        .next()
                        .ok_or_else(|| Error::InvalidConfig("empty tier name".into()))?;
                    opts.tiers.push(TierSpec::custom(&name, letter));
                    opts.tiers.last_mut().unwrap()
                }
            };
            for (field, value) in fields {
                match field.as_str() {
                    "read_latency_us" => spec.read_latency_us = parse_float(&value)?,
                    "write_latency_us" => spec.write_latency_us = parse_float(&value)?,
                    "cost_per_gb" => spec.cost_per_gb = parse_float(&value)?,
                    "pe_cycles" => spec.pe_cycles = parse_num(&value)?,
                    "capacity_bytes" => spec.capacity_bytes = parse_bytes(&value)?,
                    other => {
                        return Err(Error::InvalidConfig(format!("unknown tier field {other:?}")));
                    }
                }
            }
        }

        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_count < 2 {
            return Err(Error::InvalidConfig("level_count must be >= 2".into()));
        }
        if self.multiplier < 2 {
            return Err(Error::InvalidConfig("multiplier must be >= 2".into()));
        }
        if self.tier_mapping.chars().count() != self.level_count {
            return Err(Error::InvalidConfig(format!(
                "tier_mapping {:?} must have one letter per level ({})",
                self.tier_mapping, self.level_count
            )));
        }
        if !(0.0..=1.0).contains(&self.pinning_threshold) {
            return Err(Error::InvalidConfig("pinning_threshold must be in [0,1]".into()));
        }
        for letter in self.tier_mapping.chars() {
            self.tier_for_letter(letter)?;
        }
        for spec in &self.tiers {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn tier_for_letter(&self, letter: char) -> Result<usize> {
        self.tiers
            .iter()
            .position(|t| t.letter == letter)
            .ok_or(Error::UnknownTier(letter))
    }

    /// Tier index assigned to `level`.
    pub fn tier_of_level(&self, level: usize) -> usize {
        let letter = self.tier_mapping.chars().nth(level).expect("level in range");
        self.tier_for_letter(letter).expect("validated mapping")
    }

    /// Target size in bytes for `level`. L0 is governed by file count, not
    /// bytes; its nominal target equals L1's.
    pub fn level_target_bytes(&self, level: usize) -> u64 {
        let exp = level.max(1) as u32 - 1;
        self.l1_target_bytes * self.multiplier.pow(exp)
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(Error::InvalidConfig(format!("expected bool, got {other:?}"))),
    }
}

fn parse_num(v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("expected integer, got {v:?}")))
}

fn parse_float(v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("expected number, got {v:?}")))
}

pub(crate) fn parse_bytes(v: &str) -> Result<u64> {
    let v = v.trim();
    let (digits, mult) = match v.chars().last() {
        Some('k') | Some('K') => (&v[..v.len() - 1], 1u64 << 10),
        Some('m') | Some('M') => (&v[..v.len() - 1], 1u64 << 20),
        Some('g') | Some('G') => (&v[..v.len() - 1], 1u64 << 30),
        _ => (v, 1),
    };
    Ok(parse_num(digits.trim())? * mult)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_overrides() {
        let opts = Options::parse(
            "# engine config\n\
             block_size = 4k\n\
             memtable_bytes = 1m\n\
             pinning_threshold = 0.15\n\
             tier_mapping = NNNTQ\n\
             tier.QLC.read_latency_us = 400\n",
        )
        .unwrap();
        assert_eq!(opts.block_size, 4096);
        assert_eq!(opts.memtable_bytes, 1 << 20);
        assert_eq!(opts.pinning_threshold, 0.15);
        let q = opts.tier_for_letter('Q').unwrap();
        assert_eq!(opts.tiers[q].read_latency_us, 400.0);
    }

    #[test]
    fn rejects_unknown_key_and_bad_mapping() {
        assert!(Options::parse("bogus = 1").is_err());
        assert!(Options::parse("tier_mapping = NT").is_err());
        assert!(Options::parse("tier_mapping = NNNTX").is_err());
    }

    #[test]
    fn level_targets_scale_by_multiplier() {
        let mut opts = Options::default();
        opts.l1_target_bytes = 1 << 20;
        assert_eq!(opts.level_target_bytes(1), 1 << 20);
        assert_eq!(opts.level_target_bytes(2), 10 << 20);
        assert_eq!(opts.level_target_bytes(3), 100 << 20);
        assert_eq!(opts.level_target_bytes(4), 1000 << 20);
    }
}
