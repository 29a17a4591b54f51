//! Finite-volume reference solver for the Fokker–Planck equation
//!
//! ```text
//! ∂p/∂t = −∂[μ p]/∂c + ½ ∂²[D p]/∂c²,   μ(c) = αŪ(1 − c) − βĪc,   D(c) = σ²c(1 − c)
//! ```
//!
//! on `[0, 1]` with zero flux at both ends. The flux is written as
//! `J = b p − C ∂p/∂c` with `b = μ − ½D′` and `C = ½D`, and discretized with
//! the Chang–Cooper / Scharfetter–Gummel exponential fit: the scheme is
//! positivity preserving, conserves mass exactly, and its discrete equilibrium
//! is the exact ratio `p_{i+1}/p_i = exp(∫ b/C)` across each cell face.
//! Time stepping is backward Euler with a tridiagonal solve.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::least_squares_slope;
use crate::error::{invalid, AmcError, Result};
use crate::sde::{BetaStationary, SdeParams};

const NEGATIVE_TOLERANCE: f64 = -1e-9;

/// A piecewise-constant density on `n` cells with centres `(k + ½)/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub nodes: usize,
    pub values: Vec<f64>,
    pub time: f64,
}

impl DensityGrid {
    /// Build from cell values, rescaled to unit mass.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(AmcError::GridMismatch("need at least two nodes".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("values", "density must be finite and non-negative"));
        }
        let mut g = Self {
            nodes: values.len(),
            values,
            time: 0.0,
        };
        let m = g.mass();
        if !(m > 0.0) {
            return Err(invalid("values", "density has zero mass"));
        }
        g.values.iter_mut().for_each(|v| *v /= m);
        Ok(g)
    }

    pub fn from_fn(nodes: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values((0..nodes).map(|k| f(node(k, nodes))).collect())
    }

    pub fn uniform(nodes: usize) -> Result<Self> {
        Self::from_fn(nodes, |_| 1.0)
    }

    /// The Beta density sampled at the cell centres, *without* renormalization.
    pub fn beta(nodes: usize, law: &BetaStationary) -> Result<Self> {
        if nodes < 2 {
            return Err(AmcError::GridMismatch("need at least two nodes".into()));
        }
        Ok(Self {
            nodes,
            values: (0..nodes).map(|k| law.pdf(node(k, nodes))).collect(),
            time: 0.0,
        })
    }

    /// A Gaussian bump truncated to `[0, 1]` and normalized.
    pub fn gaussian_bump(nodes: usize, centre: f64, width: f64) -> Result<Self> {
        Self::from_fn(nodes, |c| (-0.5 * ((c - centre) / width).powi(2)).exp())
    }

    /// Normalized histogram of samples in `[0, 1]` on the same cells.
    pub fn histogram(samples: &[f64], nodes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(AmcError::InsufficientData("empty sample set".into()));
        }
        let mut counts = vec![0.0; nodes];
        for &x in samples {
            let k = ((x * nodes as f64) as usize).min(nodes - 1);
            counts[k] += 1.0;
        }
        Self::from_values(counts)
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.nodes as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        node(k, self.nodes)
    }

    /// `∫p` with the cell-centred (midpoint) rule.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spacing()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().enumerate().map(|(k, p)| self.node(k) * p).sum::<f64>() * self.spacing()
    }

    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64> {
        if self.nodes != other.nodes || self.values.len() != other.values.len() {
            return Err(AmcError::GridMismatch(format!("{} vs {} nodes", self.nodes, other.nodes)));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.spacing())
    }

    /// Draw from the piecewise-constant density (uniform within each cell).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut cdf = Vec::with_capacity(self.nodes);
        let mut acc = 0.0;
        for v in &self.values {
            acc += v * h;
            cdf.push(acc);
        }
        (0..count)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let k = cdf.partition_point(|&x| x <= u).min(self.nodes - 1);
                (k as f64 + rng.random::<f64>()) * h
            })
            .collect()
    }

    /// `c,p` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "c,p")?;
        for (k, p) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.node(k), p)?;
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if self.values.len() != self.nodes || self.nodes < 2 {
            return Err(AmcError::GridMismatch(format!(
                "{} values for {} nodes",
                self.values.len(),
                self.nodes
            )));
        }
        Ok(())
    }
}

fn node(k: usize, n: usize) -> f64 {
    (k as f64 + 0.5) / n as f64
}

/// Solver knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpOptions {
    /// Internal step as a multiple of the explicit stability bound
    /// `1 / (max|μ|/h + max D/h²)`. Backward Euler is unconditionally stable,
    /// so this only trades time accuracy for speed.
    pub courant: f64,
    /// Upper bound on the internal step regardless of `courant`.
    pub max_step: f64,
}

impl Default for FpOptions {
    fn default() -> Self {
        Self {
            courant: 500.0,
            max_step: 1.0,
        }
    }
}

/// `x / (eˣ − 1)`, continuous at 0.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Face coefficients: `J_{i+½} = a_i p_i − d_i p_{i+1}`, `i = 0..n−1`
/// (the last face is the closed boundary).
fn face_coefficients(n: usize, params: &SdeParams, u_bar: f64, i_bar: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / n as f64;
    let s2 = params.sigma * params.sigma;
    let mut a = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n - 1 {
        let c = (i + 1) as f64 * h;
        let mu = params.alpha * u_bar * (1.0 - c) - params.beta * i_bar * c;
        let b = mu - 0.5 * s2 * (1.0 - 2.0 * c);
        let diff = 0.5 * s2 * c * (1.0 - c);
        if diff > 0.0 {
            let w = h * b / diff;
            a[i] = diff / h * bernoulli(-w);
            d[i] = diff / h * bernoulli(w);
        } else {
            a[i] = b.max(0.0);
            d[i] = (-b).max(0.0);
        }
    }
    (a, d)
}

/// Advance `initial` by `t_final` time units.
pub fn fp_evolve(
    initial: &DensityGrid,
    params: &SdeParams,
    u_bar: f64,
    i_bar: f64,
    t_final: f64,
) -> Result<DensityGrid> {
    fp_evolve_with(initial, params, u_bar, i_bar, t_final, FpOptions::default())
}

pub fn fp_evolve_with(
    initial: &DensityGrid,
    params: &SdeParams,
    u_bar: f64,
    i_bar: f64,
    t_final: f64,
    opts: FpOptions,
) -> Result<DensityGrid> {
    initial.check()?;
    // α = β = σ = 0 is a legitimate frozen case here, so validate by hand.
    for (name, v) in [("alpha", params.alpha), ("beta", params.beta), ("sigma", params.sigma)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
        }
    }
    for (name, v) in [("u_bar", u_bar), ("i_bar", i_bar)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
        }
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(invalid("t_final", format!("must be >= 0, got {t_final}")));
    }
    if !(opts.courant > 0.0 && opts.max_step > 0.0) {
        return Err(invalid("options", "courant and max_step must be positive"));
    }

    let n = initial.nodes;
    let h = initial.spacing();
    let mut out = initial.clone();
    out.time += t_final;

    let max_mu = (params.alpha * u_bar).max(params.beta * i_bar);
    let max_d = params.sigma * params.sigma * 0.25;
    let rate = max_mu / h + max_d / (h * h);
    if t_final == 0.0 || rate == 0.0 {
        return Ok(out);
    }
    let target = (opts.courant / rate).min(opts.max_step);
    let steps = (t_final / target).ceil().max(1.0) as usize;
    let dt = t_final / steps as f64;
    let r = dt / h;

    let (a, d) = face_coefficients(n, params, u_bar, i_bar);
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        let (a_left, d_left) = if i > 0 { (a[i - 1], d[i - 1]) } else { (0.0, 0.0) };
        diag[i] = 1.0 + r * (a[i] + d_left);
        upper[i] = -r * d[i];
        lower[i] = -r * a_left;
    }

    let mut scratch_c = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        thomas(&lower, &diag, &upper, &out.values, &mut scratch_c, &mut next);
        std::mem::swap(&mut out.values, &mut next);
        let min = out.min_value();
        if min < NEGATIVE_TOLERANCE {
            return Err(AmcError::NegativeDensity { min });
        }
    }
    Ok(out)
}

/// Solve a tridiagonal system; `lower[0]` and `upper[n−1]` are ignored.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], c: &mut [f64], x: &mut [f64]) {
    let n = diag.len();
    c[0] = upper[0] / diag[0];
    x[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
}

/// `∫|p − p_∞|` against the Beta density at the same cell centres.
pub fn fp_stationary_error(density: &DensityGrid, law: &BetaStationary) -> Result<f64> {
    density.check()?;
    density.l1_distance(&DensityGrid::beta(density.nodes, law)?)
}

/// Exponential rate `−d ln(L1)/dt` by least squares.
///
/// A series that grows anywhere has hit the discretization or sampling floor
/// and is rejected rather than fitted.
pub fn fp_convergence_rate(errors_over_time: &[(f64, f64)]) -> Result<f64> {
    if errors_over_time.len() < 5 {
        return Err(AmcError::InsufficientData(format!(
            "need at least 5 samples, got {}",
            errors_over_time.len()
        )));
    }
    if errors_over_time.iter().any(|&(_, e)| !(e > 0.0)) {
        return Err(invalid("errors", "all L1 values must be positive"));
    }
    if errors_over_time.windows(2).any(|w| w[1].1 > w[0].1 * (1.0 + 1e-9)) {
        return Err(AmcError::InsufficientData(
            "error series is not monotone; rate unreliable below the error floor".into(),
        ));
    }
    let (t, ln_e): (Vec<f64>, Vec<f64>) = errors_over_time.iter().map(|&(t, e)| (t, e.ln())).unzip();
    Ok(-least_squares_slope(&t, &ln_e)?)
}
