//! Monte Carlo ensembles of the crystallization SDE.
//!
//! Paths are independent, each with its own stream keyed by `(seed, path)`.
//! Statistics are accumulated in fixed-size chunks and merged in chunk order,
//! so every summary is bit-identical whether the chunks ran sequentially or on
//! the rayon pool.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par::{map_indexed, Execution};
use crate::rng::{indexed_stream, StreamRng};
use crate::sde::{em_step_raw, SdeParams};

const CHUNK: usize = 1024;

/// The `(U, I)` signal fed to each path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drive {
    /// Fixed utility and interference; `interference` may be fractional.
    Constant { utility: f64, interference: f64 },
    /// Per-step independent switching: `U = utility_on` with probability
    /// `p_utility` (else 0) and `I = 1` with probability `p_interference`.
    /// The averaged inputs are `Ū = utility_on·p_utility`, `Ī = p_interference`.
    Bernoulli {
        utility_on: f64,
        p_utility: f64,
        p_interference: f64,
    },
}

impl Drive {
    pub fn constant(utility: f64, interference: f64) -> Self {
        Self::Constant {
            utility,
            interference,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} outside [0, 1]")))
            }
        };
        match *self {
            Self::Constant {
                utility,
                interference,
            } => {
                unit("utility", utility)?;
                unit("interference", interference)
            }
            Self::Bernoulli {
                utility_on,
                p_utility,
                p_interference,
            } => {
                unit("utility_on", utility_on)?;
                unit("p_utility", p_utility)?;
                unit("p_interference", p_interference)
            }
        }
    }

    /// Time-averaged `(Ū, Ī)`.
    pub fn averaged(&self) -> (f64, f64) {
        match *self {
            Self::Constant {
                utility,
                interference,
            } => (utility, interference),
            Self::Bernoulli {
                utility_on,
                p_utility,
                p_interference,
            } => (utility_on * p_utility, p_interference),
        }
    }

    #[inline]
    fn sample(&self, rng: &mut StreamRng) -> (f64, f64) {
        match *self {
            Self::Constant {
                utility,
                interference,
            } => (utility, interference),
            Self::Bernoulli {
                utility_on,
                p_utility,
                p_interference,
            } => {
                let u = if rng.random::<f64>() < p_utility { utility_on } else { 0.0 };
                let i = if rng.random::<f64>() < p_interference { 1.0 } else { 0.0 };
                (u, i)
            }
        }
    }
}

/// What to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub params: SdeParams,
    pub drive: Drive,
    pub c0: f64,
    pub paths: usize,
    /// Step indices at which statistics are recorded; the last one is the horizon.
    pub checkpoints: Vec<u64>,
    /// Keep every path's value at every checkpoint, not just the final one.
    #[serde(default)]
    pub keep_samples: bool,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.drive.validate()?;
        if !(0.0..=1.0).contains(&self.c0) {
            return Err(invalid("c0", format!("{} outside [0, 1]", self.c0)));
        }
        if self.paths == 0 {
            return Err(invalid("paths", "need at least one path"));
        }
        if self.checkpoints.is_empty() || self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("checkpoints", "must be non-empty and strictly increasing"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> u64 {
        *self.checkpoints.last().unwrap_or(&0)
    }
}

/// `n` evenly spaced checkpoints ending at `horizon` (including step 0).
pub fn even_checkpoints(horizon: u64, n: usize) -> Vec<u64> {
    let n = n.max(1) as u64;
    let mut out: Vec<u64> = (0..=n).map(|k| k * horizon / n).collect();
    out.dedup();
    out
}

/// Per-checkpoint moments of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    /// Checkpoint times (`step·dt`).
    pub checkpoints: Vec<f64>,
    pub means: Vec<f64>,
    /// Unbiased sample variances.
    pub variances: Vec<f64>,
    pub terminal_samples: Vec<f64>,
    /// Every path's value at every checkpoint when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_samples: Option<Vec<Vec<f64>>>,
}

impl EnsembleSummary {
    pub fn paths(&self) -> usize {
        self.terminal_samples.len()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        let n = self.paths() as f64;
        self.variances.iter().map(|v| (v / n).sqrt()).collect()
    }

    /// Write `t,mean,variance` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mean,variance")?;
        for ((t, m), v) in self.checkpoints.iter().zip(&self.means).zip(&self.variances) {
            writeln!(w, "{t},{m},{v}")?;
        }
        Ok(())
    }
}

/// Running `(count, mean, M2)` with Chan's parallel merge.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn variance(&self) -> f64 {
        if self.n > 1.0 {
            (self.m2 / (self.n - 1.0)).max(0.0)
        } else {
            0.0
        }
    }
}

/// Simulate one path, calling `visit(step, c)` at step 0 and after every step.
pub fn simulate_path_with<F: FnMut(u64, f64)>(
    params: &SdeParams,
    drive: &Drive,
    c0: f64,
    steps: u64,
    rng: &mut StreamRng,
    mut visit: F,
) {
    let mut c = c0;
    visit(0, c);
    for s in 1..=steps {
        let (u, i) = drive.sample(rng);
        let z: f64 = rng.sample(StandardNormal);
        c = em_step_raw(c, u, i, params, z);
        visit(s, c);
    }
}

/// A single long trajectory `c_0, c_1, …, c_steps` on the `"sde"` stream.
pub fn simulate_trajectory(params: &SdeParams, drive: &Drive, c0: f64, steps: u64, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    drive.validate()?;
    let mut rng = indexed_stream(seed, "sde", 0);
    let mut out = Vec::with_capacity(steps as usize + 1);
    simulate_path_with(params, drive, c0, steps, &mut rng, |_, c| out.push(c));
    Ok(out)
}

struct ChunkResult {
    moments: Vec<Moments>,
    samples: Vec<Vec<f64>>,
}

fn run_chunk(spec: &EnsembleSpec, chunk: usize) -> ChunkResult {
    let k = spec.checkpoints.len();
    let lo = chunk * CHUNK;
    let hi = (lo + CHUNK).min(spec.paths);
    let mut moments = vec![Moments::default(); k];
    let keep = if spec.keep_samples { k } else { 1 };
    let mut samples = vec![Vec::with_capacity(hi - lo); keep];
    let horizon = spec.horizon();
    for path in lo..hi {
        let mut rng = indexed_stream(spec.seed, "sde", path as u64);
        let mut next = 0;
        simulate_path_with(&spec.params, &spec.drive, spec.c0, horizon, &mut rng, |s, c| {
            if next < k && s == spec.checkpoints[next] {
                moments[next].push(c);
                if spec.keep_samples {
                    samples[next].push(c);
                } else if next == k - 1 {
                    samples[0].push(c);
                }
                next += 1;
            }
        });
    }
    ChunkResult { moments, samples }
}

/// Simulate `spec.paths` independent paths and summarize them at each checkpoint.
pub fn simulate_ensemble(spec: &EnsembleSpec, exec: Execution) -> Result<EnsembleSummary> {
    spec.validate()?;
    let chunks = spec.paths.div_ceil(CHUNK);
    let results = map_indexed(chunks, exec, |c| run_chunk(spec, c));

    let k = spec.checkpoints.len();
    let mut total = vec![Moments::default(); k];
    let keep = if spec.keep_samples { k } else { 1 };
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(spec.paths); keep];
    for r in &results {
        for (t, m) in total.iter_mut().zip(&r.moments) {
            t.merge(m);
        }
        for (dst, src) in samples.iter_mut().zip(&r.samples) {
            dst.extend_from_slice(src);
        }
    }
    let terminal_samples = samples.last().cloned().unwrap_or_default();
    Ok(EnsembleSummary {
        checkpoints: spec.checkpoints.iter().map(|&s| s as f64 * spec.params.dt).collect(),
        means: total.iter().map(|m| m.mean).collect(),
        variances: total.iter().map(Moments::variance).collect(),
        terminal_samples,
        checkpoint_samples: spec.keep_samples.then_some(samples),
    })
}

/// Weak error of one step size against the finest level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorPoint {
    pub dt: f64,
    pub mean: f64,
    /// `|E[c_dt(T)] − E[c_ref(T)]|`, estimated on coupled paths.
    pub error: f64,
    /// Standard error of the difference estimate.
    pub std_error: f64,
}

/// Weak-error study with Brownian paths shared across step sizes.
///
/// Each path draws its increments at `dt_ref = T / fine_steps` and sums them
/// into blocks for every coarser level, so the step sizes see the same noise
/// and the error estimate is not swamped by Monte Carlo variance. Every entry
/// of `levels` is the number of fine steps per coarse step and must divide
/// `fine_steps`. `params.dt` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn weak_order_study(
    params: &SdeParams,
    utility: f64,
    interference: f64,
    c0: f64,
    horizon: f64,
    fine_steps: u64,
    levels: &[u64],
    paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<WeakErrorPoint>> {
    params.validate()?;
    Drive::constant(utility, interference).validate()?;
    if levels.is_empty() || levels.iter().any(|&l| l == 0 || !fine_steps.is_multiple_of(l)) {
        return Err(invalid("levels", "each level must divide the fine step count"));
    }
    if paths < 2 {
        return Err(invalid("paths", "need at least two paths"));
    }
    let dt_ref = horizon / fine_steps as f64;
    let nl = levels.len();

    let chunk_stats = |chunk: usize| {
        let lo = chunk * CHUNK;
        let hi = (lo + CHUNK).min(paths);
        let mut level_mean = vec![Moments::default(); nl];
        let mut diff = vec![Moments::default(); nl];
        let mut reference = Moments::default();
        let fine = SdeParams { dt: dt_ref, ..*params };
        let coarse: Vec<SdeParams> = levels
            .iter()
            .map(|&l| SdeParams {
                dt: dt_ref * l as f64,
                ..*params
            })
            .collect();
        for path in lo..hi {
            let mut rng = indexed_stream(seed, "sde", path as u64);
            let mut c_ref = c0;
            let mut c = vec![c0; nl];
            let mut acc = vec![0.0f64; nl];
            for s in 1..=fine_steps {
                let dw: f64 = rng.sample::<f64, _>(StandardNormal) * dt_ref.sqrt();
                c_ref = em_step_raw(c_ref, utility, interference, &fine, dw / dt_ref.sqrt());
                for j in 0..nl {
                    acc[j] += dw;
                    if s % levels[j] == 0 {
                        let z = acc[j] / coarse[j].dt.sqrt();
                        c[j] = em_step_raw(c[j], utility, interference, &coarse[j], z);
                        acc[j] = 0.0;
                    }
                }
            }
            reference.push(c_ref);
            for j in 0..nl {
                level_mean[j].push(c[j]);
                diff[j].push(c[j] - c_ref);
            }
        }
        (level_mean, diff, reference)
    };
    let results = map_indexed(paths.div_ceil(CHUNK), exec, chunk_stats);

    let mut level_mean = vec![Moments::default(); nl];
    let mut diff = vec![Moments::default(); nl];
    for (lm, d, _) in &results {
        for j in 0..nl {
            level_mean[j].merge(&lm[j]);
            diff[j].merge(&d[j]);
        }
    }
    Ok((0..nl)
        .map(|j| WeakErrorPoint {
            dt: dt_ref * levels[j] as f64,
            mean: level_mean[j].mean,
            error: diff[j].mean.abs(),
            std_error: (diff[j].variance() / paths as f64).sqrt(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{discrete_mean_trajectory, fixed_point, CrystallizationState};

    fn spec(paths: usize) -> EnsembleSpec {
        EnsembleSpec {
            params: SdeParams::default(),
            drive: Drive::constant(0.5, 0.1),
            c0: 0.0,
            paths,
            checkpoints: even_checkpoints(200, 4),
            keep_samples: false,
            seed: 11,
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let s = spec(3000);
        let a = simulate_ensemble(&s, Execution::Sequential).unwrap();
        let b = simulate_ensemble(&s, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chunked_moments_match_direct() {
        let mut s = spec(2500);
        s.keep_samples = true;
        let sum = simulate_ensemble(&s, Execution::Sequential).unwrap();
        let samples = sum.checkpoint_samples.as_ref().unwrap();
        for (k, xs) in samples.iter().enumerate() {
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((m - sum.means[k]).abs() < 1e-13);
            assert!((v - sum.variances[k]).abs() < 1e-13);
        }
        assert_eq!(samples.last().unwrap(), &sum.terminal_samples);
    }

    #[test]
    fn zero_noise_follows_discrete_mean() {
        let mut s = spec(5);
        s.params.sigma = 0.0;
        let sum = simulate_ensemble(&s, Execution::Sequential).unwrap();
        let fp = fixed_point(0.5, 0.1, &s.params).unwrap();
        for (k, &step) in s.checkpoints.iter().enumerate() {
            let m = discrete_mean_trajectory(CrystallizationState::LIQUID, &fp, 1.0, step);
            assert!((sum.means[k] - m).abs() < 1e-12);
            assert_eq!(sum.variances[k], 0.0);
        }
    }

    #[test]
    fn checkpoints_must_increase() {
        let mut s = spec(5);
        s.checkpoints = vec![3, 3];
        assert!(simulate_ensemble(&s, Execution::Sequential).is_err());
    }

    #[test]
    fn even_checkpoints_cover_horizon() {
        assert_eq!(even_checkpoints(10, 5), vec![0, 2, 4, 6, 8, 10]);
        assert_eq!(even_checkpoints(3, 10), vec![0, 1, 2, 3]);
    }

    #[test]
    fn weak_study_levels_share_noise() {
        let p = SdeParams::new(0.2, 0.1, 0.1, 1.0).unwrap();
        let pts = weak_order_study(&p, 1.0, 1.0, 0.1, 2.0, 8, &[1, 2], 50, 3, Execution::Sequential).unwrap();
        // level 1 at the fine step size reproduces the reference exactly
        assert_eq!(pts[0].error, 0.0);
        assert!(pts[1].error > 0.0);
        assert!(weak_order_study(&p, 1.0, 1.0, 0.1, 2.0, 8, &[3], 50, 3, Execution::Sequential).is_err());
    }
}
