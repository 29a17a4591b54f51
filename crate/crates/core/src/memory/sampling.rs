use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Phase, PhaseBuffers};
use crate::error::{invalid, AmcError, Result};
use crate::rng::StreamRng;

/// Batch composition and priority exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub batch_size: usize,
    pub liquid_frac: f64,
    pub glass_frac: f64,
    pub crystal_frac: f64,
    /// Liquid draws are `∝ |δ|^this`.
    pub priority_exponent_liquid: f64,
    /// Glass draws are `∝ |δ|^this · √c`.
    pub priority_exponent_glass: f64,
    /// `w_IS = (N·P)^(−this)`.
    pub is_exponent: f64,
    /// Lower bound on `|δ|` so zero-error experiences stay reachable.
    pub priority_floor: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            liquid_frac: 0.70,
            glass_frac: 0.25,
            crystal_frac: 0.05,
            priority_exponent_liquid: 0.6,
            priority_exponent_glass: 0.4,
            is_exponent: 0.4,
            priority_floor: 1e-6,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        let fr = [self.liquid_frac, self.glass_frac, self.crystal_frac];
        if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("fractions", "must be non-negative and sum to 1"));
        }
        let ex = [self.priority_exponent_liquid, self.priority_exponent_glass, self.is_exponent];
        if ex.iter().any(|e| !(*e >= 0.0)) {
            return Err(invalid("exponents", "must be non-negative"));
        }
        if !(self.priority_floor > 0.0) {
            return Err(invalid("priority_floor", "must be positive"));
        }
        Ok(())
    }
}

/// Draws per stratum: `⌊g·B⌋` glass, `⌈c·B⌉` crystal, the rest liquid, so the
/// strata always add up to `B` (for the default fractions the liquid share is
/// `⌊0.7B⌋` whenever that already balances).
pub fn stratum_sizes(cfg: &SamplingConfig) -> [usize; 3] {
    let b = cfg.batch_size as f64;
    let glass = ((cfg.glass_frac * b) + 1e-9).floor() as usize;
    let crystal = ((cfg.crystal_frac * b) - 1e-9).ceil().max(0.0) as usize;
    let crystal = crystal.min(cfg.batch_size - glass);
    [cfg.batch_size - glass - crystal, glass, crystal]
}

/// One sampled experience with its normalized importance weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledItem {
    pub phase: Phase,
    pub index: usize,
    /// Probability of this draw within its phase.
    pub probability: f64,
    pub is_weight: f64,
}

fn priorities(buffers: &PhaseBuffers, phase: Phase, cfg: &SamplingConfig) -> Vec<f64> {
    let floor = cfg.priority_floor;
    let items = buffers.phase(phase);
    match phase {
        Phase::Liquid => items
            .iter()
            .map(|e| e.td_error.abs().max(floor).powf(cfg.priority_exponent_liquid))
            .collect(),
        Phase::Glass => items
            .iter()
            .map(|e| e.td_error.abs().max(floor).powf(cfg.priority_exponent_glass) * e.c.value().sqrt())
            .collect(),
        Phase::Crystal => items.iter().map(|e| e.c.value()).collect(),
    }
}

/// Draw `count` indices with replacement `∝ weights`; all-zero weights fall
/// back to uniform. Returns `(index, probability)` pairs.
pub(crate) fn draw_proportional(weights: &[f64], count: usize, rng: &mut StreamRng) -> Vec<(usize, f64)> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return (0..count).map(|_| (rng.random_range(0..n), 1.0 / n as f64)).collect();
    }
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let mut i = cdf.partition_point(|&x| x <= u).min(n - 1);
            // never land on a zero-weight slot through rounding
            while weights[i] == 0.0 && i + 1 < n {
                i += 1;
            }
            (i, weights[i] / total)
        })
        .collect()
}

/// Stratified draw across the three phases with importance weights
/// `(N·P)^(−ν)` normalized by the batch maximum, where `N` and `P` are taken
/// within the phase an item was drawn from.
///
/// The quota of an empty phase passes to the next phase in the cycle
/// liquid → glass → crystal → liquid.
pub fn stratified_sample(buffers: &PhaseBuffers, cfg: &SamplingConfig, rng: &mut StreamRng) -> Result<Vec<SampledItem>> {
    if buffers.is_empty() {
        return Err(AmcError::EmptyBuffers);
    }
    let mut quota = stratum_sizes(cfg);
    for k in 0..3 {
        if buffers.phase(Phase::ALL[k]).is_empty() && quota[k] > 0 {
            let target = (1..3)
                .map(|d| (k + d) % 3)
                .find(|&j| !buffers.phase(Phase::ALL[j]).is_empty())
                .expect("some phase is non-empty");
            quota[target] += quota[k];
            quota[k] = 0;
        }
    }

    let mut batch = Vec::with_capacity(cfg.batch_size);
    for (k, &phase) in Phase::ALL.iter().enumerate() {
        if quota[k] == 0 {
            continue;
        }
        let n = buffers.phase(phase).len() as f64;
        let w = priorities(buffers, phase, cfg);
        for (index, probability) in draw_proportional(&w, quota[k], rng) {
            batch.push(SampledItem {
                phase,
                index,
                probability,
                is_weight: (n * probability).powf(-cfg.is_exponent),
            });
        }
    }
    let max = batch.iter().map(|s| s.is_weight).fold(0.0, f64::max);
    for s in &mut batch {
        s.is_weight /= max;
    }
    Ok(batch)
}
