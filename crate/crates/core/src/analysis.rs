//! Statistical validators that turn the closed-form results into pass/fail
//! checks over simulation output. Everything here is a pure function of
//! recorded data.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{invalid, AmcError, Result};
use crate::memory::Thresholds;

/// Minimum ensemble size for forgetting-frequency estimates.
pub const MIN_FORGETTING_PATHS: usize = 10_000;

/// Ordinary least-squares slope of `y` on `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(linear_fit(x, y)?.0)
}

/// `(slope, intercept, r²)`; `r²` is 0 when `y` is constant.
fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(AmcError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(AmcError::InsufficientData("need at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("x", "all abscissae are equal"));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    Ok((slope, my - slope * mx, r2))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the sample variance, from the empirical fourth moment.
pub fn variance_std_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

/// Kolmogorov–Smirnov distance between the empirical CDF of sorted
/// `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(AmcError::InsufficientData("need at least two samples".into()));
    }
    if samples.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(AmcError::Unsorted);
    }
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Asymptotic one-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Result of an exponential-rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub points_used: usize,
    pub r_squared: f64,
    /// False for flat or noisy series (`rate ≤ 0` or `r² < 0.95`).
    pub reliable: bool,
}

/// Fit `gap(t) ∝ e^{−rate·t}` by least squares on `ln gap`, ignoring points at
/// or below `noise_floor`.
pub fn fit_exponential_rate(series: &[(f64, f64)], noise_floor: f64) -> Result<RateFit> {
    let (t, ln_gap): (Vec<f64>, Vec<f64>) = series
        .iter()
        .filter(|&&(_, g)| g > noise_floor && g > 0.0)
        .map(|&(t, g)| (t, g.ln()))
        .unzip();
    if t.len() < 5 {
        return Err(AmcError::InsufficientData(format!(
            "{} points above the noise floor, need 5",
            t.len()
        )));
    }
    let (slope, _, r2) = linear_fit(&t, &ln_gap)?;
    let rate = -slope;
    Ok(RateFit {
        rate,
        points_used: t.len(),
        r_squared: r2,
        reliable: rate > 0.0 && r2 >= 0.95,
    })
}

/// Noise floor `3·std/√paths` below which a mean gap is not resolvable.
pub fn gap_noise_floor(variance: f64, paths: usize) -> f64 {
    3.0 * variance.max(0.0).sqrt() / (paths as f64).sqrt()
}

/// Time fractions spent below `τL`, between, and above `τC` after `burn_in`
/// samples.
pub fn occupancy_fractions(path: &[f64], th: &Thresholds, burn_in: usize) -> Result<[f64; 3]> {
    if path.len() <= burn_in || path.len() - burn_in < burn_in {
        return Err(AmcError::InsufficientData(format!(
            "path of {} samples is too short for burn-in {burn_in}",
            path.len()
        )));
    }
    let tail = &path[burn_in..];
    let mut counts = [0usize; 3];
    for &c in tail {
        let k = if c < th.tau_l {
            0
        } else if c > th.tau_c {
            2
        } else {
            1
        };
        counts[k] += 1;
    }
    let n = tail.len() as f64;
    Ok(counts.map(|k| k as f64 / n))
}

/// Fraction of terminal samples below `τL`, one entry per horizon.
pub fn forgetting_frequency(ensembles: &[Vec<f64>], tau_l: f64) -> Result<Vec<f64>> {
    ensembles
        .iter()
        .map(|xs| {
            if xs.len() < MIN_FORGETTING_PATHS {
                return Err(AmcError::InsufficientData(format!(
                    "{} paths, need {MIN_FORGETTING_PATHS}",
                    xs.len()
                )));
            }
            Ok(xs.iter().filter(|&&c| c < tau_l).count() as f64 / xs.len() as f64)
        })
        .collect()
}

/// Three-sigma binomial slack `3·sqrt(b(1 − b)/n)` around a probability bound.
pub fn binomial_slack(bound: f64, n: usize) -> f64 {
    3.0 * (bound * (1.0 - bound) / n as f64).sqrt()
}

/// Upper-tail p-value of Pearson's chi-square goodness-of-fit test.
pub fn chi_square_p_value(observed: &[u64], probs: &[f64]) -> Result<f64> {
    if observed.len() != probs.len() {
        return Err(AmcError::DimensionMismatch {
            expected: probs.len(),
            got: observed.len(),
        });
    }
    if observed.len() < 2 {
        return Err(AmcError::InsufficientData("need at least two categories".into()));
    }
    let n: u64 = observed.iter().sum();
    let total: f64 = probs.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = n as f64 * p / total;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).map_err(|e| invalid("dof", e.to_string()))?;
    Ok(dist.sf(stat))
}

/// One-sided Welch test of `mean(a) > mean(b)`; returns the p-value.
pub fn welch_one_sided_p(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AmcError::InsufficientData("need two samples per group".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if diff > 0.0 { 0.0 } else { 1.0 });
    }
    let t = diff / se2.sqrt();
    let dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| invalid("dof", e.to_string()))?;
    Ok(dist.sf(t))
}

/// Two-sided Welch test of `mean(a) = mean(b)`.
pub fn welch_two_sided_p(a: &[f64], b: &[f64]) -> Result<f64> {
    let (va, vb) = (variance(a), variance(b));
    if va == 0.0 && vb == 0.0 && a.len() >= 2 && b.len() >= 2 {
        return Ok(if mean(a) == mean(b) { 1.0 } else { 0.0 });
    }
    let p = welch_one_sided_p(a, b)?;
    Ok((2.0 * p.min(1.0 - p)).min(1.0))
}

/// One named check with its measured value and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub measured: f64,
    pub target: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl Verdict {
    /// `measured ≤ target`.
    pub fn at_most(check: impl Into<String>, measured: f64, target: f64) -> Self {
        Self {
            check: check.into(),
            measured,
            target,
            pass: measured <= target,
            note: String::new(),
        }
    }

    /// `|measured − target| ≤ tol`.
    pub fn within(check: impl Into<String>, measured: f64, target: f64, tol: f64) -> Self {
        Self {
            check: check.into(),
            measured,
            target,
            pass: (measured - target).abs() <= tol,
            note: format!("tolerance {tol}"),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// An ordered list of verdicts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub verdicts: Vec<Verdict>,
}

impl VerdictReport {
    pub fn push(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn summary(&self) -> String {
        self.verdicts
            .iter()
            .map(|v| {
                format!(
                    "[{}] {}: measured {:.6e}, target {:.6e}{}",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.check,
                    v.measured,
                    v.target,
                    if v.note.is_empty() { String::new() } else { format!(" ({})", v.note) }
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ks_examples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut xs: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        xs.sort_by(f64::total_cmp);
        let d = ks_statistic(&xs, |x| x).unwrap();
        assert!(d < ks_critical_1pct(xs.len()), "{d}");

        let point = vec![0.5; 100];
        assert!(ks_statistic(&point, |x| x).unwrap() >= 0.5);

        let grid: Vec<f64> = (1..=50).map(|i| i as f64 / 50.0).collect();
        assert!(ks_statistic(&grid, |x| x).unwrap() <= 1.0 / 50.0 + 1e-15);

        assert_eq!(ks_statistic(&[0.3, 0.1], |x| x), Err(AmcError::Unsorted));
        assert!(ks_statistic(&[0.3], |x| x).is_err());
    }

    #[test]
    fn rate_fit_examples() {
        let exact: Vec<(f64, f64)> = (0..20).map(|k| (10.0 * k as f64, (-0.0255 * 10.0 * k as f64).exp())).collect();
        let fit = fit_exponential_rate(&exact, 0.0).unwrap();
        assert!((fit.rate - 0.0255).abs() < 1e-6);
        assert!(fit.reliable);

        let flat: Vec<(f64, f64)> = (0..8).map(|k| (k as f64, 0.2)).collect();
        let fit = fit_exponential_rate(&flat, 0.0).unwrap();
        assert_eq!(fit.rate, 0.0);
        assert!(!fit.reliable);

        assert!(fit_exponential_rate(&exact, 0.5).is_err());
    }

    #[test]
    fn occupancy_examples() {
        let th = Thresholds::default();
        let path = vec![0.5; 1000];
        assert_eq!(occupancy_fractions(&path, &th, 100).unwrap(), [0.0, 1.0, 0.0]);
        let mixed = [0.1, 0.1, 0.2, 0.5, 0.9, 0.95];
        let f = occupancy_fractions(&mixed, &th, 2).unwrap();
        assert_eq!(f, [0.25, 0.25, 0.5]);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(occupancy_fractions(&mixed, &th, 4).is_err());
    }

    #[test]
    fn forgetting_frequency_counts_below_threshold() {
        let mut xs = vec![0.9; MIN_FORGETTING_PATHS];
        xs[0] = 0.1;
        xs[1] = 0.29;
        let f = forgetting_frequency(&[vec![0.9; MIN_FORGETTING_PATHS], xs], 0.3).unwrap();
        assert_eq!(f, vec![0.0, 2.0 / MIN_FORGETTING_PATHS as f64]);
        assert!(forgetting_frequency(&[vec![0.9; 10]], 0.3).is_err());
    }

    #[test]
    fn chi_square_and_welch() {
        assert!(chi_square_p_value(&[250, 250, 250, 250], &[1.0; 4]).unwrap() > 0.99);
        assert!(chi_square_p_value(&[400, 200, 200, 200], &[1.0; 4]).unwrap() < 1e-6);
        let a = [1.0, 1.1, 0.9, 1.2, 1.0];
        let b = [0.0, 0.1, -0.1, 0.05, 0.0];
        assert!(welch_one_sided_p(&a, &b).unwrap() < 1e-4);
        assert!(welch_one_sided_p(&b, &a).unwrap() > 0.999);
        // t = −1 on 8 degrees of freedom: two-sided p = 0.3466 from tables
        let p = welch_two_sided_p(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((p - 0.3466).abs() < 1e-3, "{p}");
        assert_eq!(welch_two_sided_p(&[0.5; 4], &[0.5; 3]).unwrap(), 1.0);
        assert_eq!(welch_two_sided_p(&[0.5; 4], &[0.7; 3]).unwrap(), 0.0);
    }

    #[test]
    fn variance_standard_error_matches_normal_theory() {
        // for Gaussian data SE(s²) ≈ σ²·sqrt(2/(n−1))
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let se = variance_std_error(&xs);
        let theory = (2.0 / 19_999.0f64).sqrt();
        assert!((se - theory).abs() / theory < 0.05);
    }

    #[test]
    fn verdict_report() {
        let mut r = VerdictReport::default();
        r.push(Verdict::at_most("a", 1.0, 2.0));
        r.push(Verdict::within("b", 1.0, 1.5, 0.1));
        assert!(!r.all_pass());
        assert!(r.summary().contains("[FAIL] b"));
    }
}
