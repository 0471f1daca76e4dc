//! Clock-value distribution and the pinning-threshold policy.
//!
//! The tracker reports every clock transition here as a delta against a
//! four-counter histogram. At compaction time the histogram snapshot is
//! converted into a [`PinPolicy`]: pin the highest clock values outright
//! and randomly sample at the boundary value so that the expected pinned
//! fraction of tracked keys equals the configured threshold.

use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};

use rand::Rng;
use serde::Serialize;

pub const CLOCK_VALUES: usize = 4;

/// Number of tracked keys at each clock value 0..3. Counters tolerate
/// concurrent increments/decrements from reader threads and the eviction
/// task; transient skew is bounded by in-flight deltas.
#[derive(Default)]
pub struct ClockHistogram {
    counts: [AtomicI64; CLOCK_VALUES],
    underflows: AtomicU64,
}

impl ClockHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a clock transition: insert (`before` absent), eviction
    /// (`after` absent), or value change (both present).
    pub fn apply_delta(&self, before: Option<u8>, after: Option<u8>) {
        debug_assert!(before.is_some() || after.is_some());
        if let Some(b) = before {
            let prev = self.counts[b as usize].fetch_sub(1, Ordering::Relaxed);
            if prev <= 0 {
                // accounting error; clamp rather than go negative
                self.counts[b as usize].fetch_add(1, Ordering::Relaxed);
                self.underflows.fetch_add(1, Ordering::Relaxed);
            }
        }
        if let Some(a) = after {
            self.counts[a as usize].fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> [u64; CLOCK_VALUES] {
        let mut out = [0u64; CLOCK_VALUES];
        for (i, c) in self.counts.iter().enumerate() {
            out[i] = c.load(Ordering::Relaxed).max(0) as u64;
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.snapshot().iter().sum()
    }

    pub fn underflows(&self) -> u64 {
        self.underflows.load(Ordering::Relaxed)
    }
}

/// Pin/no-pin rule derived from a histogram snapshot.
///
/// Keys with clock value above `boundary` are always pinned; keys at the
/// boundary are pinned with probability `boundary_prob`; everything else
/// (lower clock values and untracked keys) is compacted down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinPolicy {
    pub boundary: u8,
    pub boundary_prob: f64,
}

impl PinPolicy {
    pub fn pin_nothing() -> PinPolicy {
        PinPolicy {
            boundary: (CLOCK_VALUES - 1) as u8,
            boundary_prob: 0.0,
        }
    }

    /// Decide for one key. `clock` is the tracker lookup result; untracked
    /// keys are never pinned. The caller supplies its per-job seeded rng so
    /// decisions are reproducible.
    pub fn should_pin(&self, clock: Option<u8>, rng: &mut impl Rng) -> bool {
        match clock {
            None => false,
            Some(c) if c > self.boundary => true,
            Some(c) if c == self.boundary => {
                self.boundary_prob >= 1.0
                    || (self.boundary_prob > 0.0 && rng.random::<f64>() < self.boundary_prob)
            }
            _ => false,
        }
    }
}

/// Translate a pinning threshold (fraction of tracked keys) into a policy,
/// walking clock values in descending order until the cumulative fraction
/// covers the threshold.
pub fn derive_policy(histogram: &[u64; CLOCK_VALUES], threshold: f64) -> PinPolicy {
    let total: u64 = histogram.iter().sum();
    if total == 0 || threshold <= 0.0 {
        return PinPolicy::pin_nothing();
    }
    let threshold = threshold.min(1.0);
    let mut cum_above = 0.0;
    for c in (0..CLOCK_VALUES).rev() {
        let frac = histogram[c] as f64 / total as f64;
        if cum_above + frac >= threshold || c == 0 {
            let prob = if frac > 0.0 {
                ((threshold - cum_above) / frac).clamp(0.0, 1.0)
            } else {
                0.0
            };
            return PinPolicy {
                boundary: c as u8,
                boundary_prob: prob,
            };
        }
        cum_above += frac;
    }
    unreachable!("loop covers c == 0");
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn worked_example() -> [u64; 4] {
        // {3: 10%, 2: 10%, 1: 30%, 0: 50%}
        [500, 300, 100, 100]
    }

    #[test]
    fn delta_accounting() {
        let h = ClockHistogram::new();
        h.apply_delta(None, Some(1));
        assert_eq!(h.snapshot(), [0, 1, 0, 0]);
        h.apply_delta(Some(1), Some(3));
        assert_eq!(h.snapshot(), [0, 0, 0, 1]);
        h.apply_delta(Some(3), None);
        assert_eq!(h.snapshot(), [0, 0, 0, 0]);
    }

    #[test]
    fn underflow_clamps_and_logs() {
        let h = ClockHistogram::new();
        h.apply_delta(Some(2), None);
        assert_eq!(h.snapshot(), [0, 0, 0, 0]);
        assert_eq!(h.underflows(), 1);
    }

    #[test]
    fn replayed_trace_matches_sequential_histogram() {
        use rand::Rng;
        let h = ClockHistogram::new();
        let mut reference = [0i64; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut live: Vec<u8> = Vec::new();
        for _ in 0..10_000 {
            match rng.random_range(0..3) {
                0 => {
                    let c = rng.random_range(0..4u8);
                    h.apply_delta(None, Some(c));
                    reference[c as usize] += 1;
                    live.push(c);
                }
                1 if !live.is_empty() => {
                    let i = rng.random_range(0..live.len());
                    let before = live[i];
                    let after = rng.random_range(0..4u8);
                    h.apply_delta(Some(before), Some(after));
                    reference[before as usize] -= 1;
                    reference[after as usize] += 1;
                    live[i] = after;
                }
                _ if !live.is_empty() => {
                    let i = rng.random_range(0..live.len());
                    let before = live.swap_remove(i);
                    h.apply_delta(Some(before), None);
                    reference[before as usize] -= 1;
                }
                _ => {}
            }
        }
        let snap = h.snapshot();
        for c in 0..4 {
            assert_eq!(snap[c] as i64, reference[c]);
        }
        assert_eq!(h.underflows(), 0);
    }

    #[test]
    fn worked_example_threshold_15pct() {
        let policy = derive_policy(&worked_example(), 0.15);
        assert_eq!(policy.boundary, 2);
        assert!((policy.boundary_prob - 0.5).abs() < 1e-12);
    }

    #[test]
    fn worked_example_threshold_10pct() {
        let policy = derive_policy(&worked_example(), 0.10);
        assert_eq!(policy.boundary, 3);
        assert!((policy.boundary_prob - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_zero_and_empty_pin_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = derive_policy(&worked_example(), 0.0);
        for c in 0..4u8 {
            assert!(!p.should_pin(Some(c), &mut rng));
        }
        let p = derive_policy(&[0, 0, 0, 0], 0.5);
        assert!(!p.should_pin(Some(3), &mut rng));
    }

    #[test]
    fn untracked_never_pinned() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = derive_policy(&worked_example(), 1.0);
        assert!(!p.should_pin(None, &mut rng));
        // full threshold pins every tracked key
        assert_eq!(p.boundary, 0);
        assert!((p.boundary_prob - 1.0).abs() < 1e-12);
        assert!(p.should_pin(Some(0), &mut rng));
    }

    #[test]
    fn pin_monotone_in_clock_value() {
        // for a fixed policy, pinning at clock c implies pinning at c' > c
        for t in [0.05, 0.15, 0.4, 0.8] {
            let p = derive_policy(&worked_example(), t);
            let mut pinned_below = false;
            for c in 0..4u8 {
                let always = c > p.boundary || (c == p.boundary && p.boundary_prob >= 1.0);
                let never = c < p.boundary || (c == p.boundary && p.boundary_prob <= 0.0);
                if always {
                    assert!(!never);
                }
                if pinned_below {
                    assert!(always, "threshold {t}: clock {c} must pin");
                }
                if always {
                    pinned_below = true;
                }
            }
        }
    }

    #[test]
    fn monte_carlo_pinned_fraction_matches_threshold() {
        let hist = worked_example();
        let threshold = 0.15;
        let policy = derive_policy(&hist, threshold);
        let total: u64 = hist.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000usize;
        let mut pinned = 0usize;
        for _ in 0..n {
            // draw a tracked key's clock value from the distribution
            let mut pick = rng.random_range(0..total);
            let mut clock = 0u8;
            for c in 0..4 {
                if pick < hist[c] {
                    clock = c as u8;
                    break;
                }
                pick -= hist[c];
            }
            if policy.should_pin(Some(clock), &mut rng) {
                pinned += 1;
            }
        }
        let frac = pinned as f64 / n as f64;
        // 3-sigma binomial bound around the threshold
        let sigma = (threshold * (1.0 - threshold) / n as f64).sqrt();
        assert!(
            (frac - threshold).abs() < 3.0 * sigma + 1e-9,
            "pinned fraction {frac} vs threshold {threshold}"
        );
    }
}
