//! Crystallization-state dynamics.
//!
//! Each stored experience carries a state `c ∈ [0, 1]` driven by the Jacobi
//! (Wright–Fisher) diffusion
//!
//! ```text
//! dc = [α·U·(1 − c) − β·c·I] dt + σ·sqrt(c·(1 − c)) dW
//! ```
//!
//! This module holds the Euler–Maruyama step, the closed-form mean/variance
//! analytics, the stationary `Beta(A, B)` law and the derived phase-occupancy
//! and forgetting bounds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, AmcError, Result};
use crate::special::{beta_pdf, regularized_incomplete_beta};

/// Consolidation dynamics constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeParams {
    /// Consolidation rate (1/step).
    pub alpha: f64,
    /// Decrystallization rate (1/step).
    pub beta: f64,
    /// Noise coefficient.
    pub sigma: f64,
    /// Integration step.
    pub dt: f64,
}

impl Default for SdeParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.005,
            sigma: 0.005,
            dt: 1.0,
        }
    }
}

impl SdeParams {
    pub fn new(alpha: f64, beta: f64, sigma: f64, dt: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            sigma,
            dt,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", format!("must be > 0, got {}", self.beta)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        Ok(())
    }

    /// Drift `α·U·(1 − c) − β·c·I`.
    #[inline]
    pub fn drift(&self, c: f64, utility: f64, interference: f64) -> f64 {
        self.alpha * utility * (1.0 - c) - self.beta * c * interference
    }

    /// Diffusion coefficient `σ·sqrt(c·(1 − c))`, guarded against rounding dust.
    #[inline]
    pub fn diffusion(&self, c: f64) -> f64 {
        self.sigma * (c * (1.0 - c)).max(0.0).sqrt()
    }
}

/// A crystallization state, always inside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CrystallizationState(f64);

impl CrystallizationState {
    pub const LIQUID: Self = Self(0.0);

    pub fn new(c: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&c) {
            Ok(Self(c))
        } else {
            Err(invalid("c", format!("{c} outside [0, 1]")))
        }
    }

    /// Clip into `[0, 1]`; NaN maps to 0.
    pub fn clipped(c: f64) -> Self {
        if c.is_nan() {
            Self(0.0)
        } else {
            Self(c.clamp(0.0, 1.0))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for CrystallizationState {
    type Error = AmcError;
    fn try_from(c: f64) -> Result<Self> {
        Self::new(c)
    }
}

impl From<CrystallizationState> for f64 {
    fn from(c: CrystallizationState) -> f64 {
        c.0
    }
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} outside [0, 1]")))
    }
}

/// One Euler–Maruyama step of the crystallization SDE followed by a clip to
/// `[0, 1]`.
///
/// `interference` is the indicator `I ∈ {0, 1}`; fractional values in `[0, 1]`
/// are accepted so the averaged dynamics (mean interference `Ī`) can be
/// stepped with the same routine. `noise` is a standard normal draw. The
/// diffusion factor uses the pre-step `c` and vanishes at both endpoints.
pub fn em_step(
    c: CrystallizationState,
    utility: f64,
    interference: f64,
    params: &SdeParams,
    noise: f64,
) -> Result<CrystallizationState> {
    check_unit("utility", utility)?;
    check_unit("interference", interference)?;
    Ok(CrystallizationState(em_step_raw(
        c.0,
        utility,
        interference,
        params,
        noise,
    )))
}

/// [`em_step`] without input validation, for inner loops whose inputs were
/// validated once up front.
#[inline]
pub(crate) fn em_step_raw(c: f64, utility: f64, interference: f64, p: &SdeParams, noise: f64) -> f64 {
    let next = c + p.dt * p.drift(c, utility, interference) + p.diffusion(c) * p.dt.sqrt() * noise;
    next.clamp(0.0, 1.0)
}

/// Fixed point, relaxation rate and variance ceiling of the mean dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointAnalysis {
    pub c_star: f64,
    pub lambda: f64,
    /// `σ²/(8λ)`, uniform in time.
    pub variance_ceiling: f64,
}

impl FixedPointAnalysis {
    /// The time-dependent variance bound `σ²·c*(1 − c*)·(1 − e^{−2λt})/(2λ)`.
    pub fn variance_bound_at(&self, sigma: f64, t: f64) -> f64 {
        sigma * sigma * self.c_star * (1.0 - self.c_star) * (-(-2.0 * self.lambda * t).exp_m1())
            / (2.0 * self.lambda)
    }

    /// Mean relaxation time `1/λ`.
    pub fn relaxation_time(&self) -> f64 {
        1.0 / self.lambda
    }
}

/// `c* = αU/(αU + βI)`, `λ = αU + βI`, ceiling `σ²/(8λ)`.
pub fn fixed_point(utility: f64, interference: f64, params: &SdeParams) -> Result<FixedPointAnalysis> {
    let pull = params.alpha * utility;
    let lambda = pull + params.beta * interference;
    if !(lambda > 0.0) {
        return Err(AmcError::DegenerateFixedPoint);
    }
    Ok(FixedPointAnalysis {
        c_star: pull / lambda,
        lambda,
        variance_ceiling: params.sigma * params.sigma / (8.0 * lambda),
    })
}

/// Closed-form mean `c* + (c0 − c*)·e^{−λt}` of the continuous-time SDE.
pub fn mean_trajectory(c0: CrystallizationState, fp: &FixedPointAnalysis, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("must be >= 0, got {t}")));
    }
    Ok(fp.c_star + (c0.0 - fp.c_star) * (-fp.lambda * t).exp())
}

/// Mean of the Euler–Maruyama chain after `steps` steps of size `dt`:
/// `c* + (c0 − c*)·(1 − λ·dt)^steps`.
///
/// Exact for the discretized chain as long as the clip never binds (the drift
/// is linear in `c`), and it is the path every `σ = 0` simulation follows.
pub fn discrete_mean_trajectory(c0: CrystallizationState, fp: &FixedPointAnalysis, dt: f64, steps: u64) -> f64 {
    let factor = 1.0 - fp.lambda * dt;
    fp.c_star + (c0.0 - fp.c_star) * factor.powf(steps as f64)
}

/// Stationary `Beta(A, B)` law of the averaged dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaStationary {
    pub a_shape: f64,
    pub b_shape: f64,
}

impl BetaStationary {
    pub fn new(a_shape: f64, b_shape: f64) -> Result<Self> {
        if !(a_shape > 0.0 && b_shape > 0.0 && a_shape.is_finite() && b_shape.is_finite()) {
            return Err(invalid("a/b shape", format!("must be positive, got ({a_shape}, {b_shape})")));
        }
        Ok(Self { a_shape, b_shape })
    }

    pub fn mean(&self) -> f64 {
        self.a_shape / (self.a_shape + self.b_shape)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a_shape + self.b_shape;
        self.a_shape * self.b_shape / (s * s * (s + 1.0))
    }

    /// Mode `(A − 1)/(A + B − 2)`, defined for `A, B > 1`.
    pub fn mode(&self) -> Option<f64> {
        (self.a_shape > 1.0 && self.b_shape > 1.0)
            .then(|| (self.a_shape - 1.0) / (self.a_shape + self.b_shape - 2.0))
    }

    pub fn pdf(&self, c: f64) -> f64 {
        beta_pdf(c, self.a_shape, self.b_shape)
    }

    pub fn cdf(&self, c: f64) -> f64 {
        regularized_incomplete_beta(c.clamp(0.0, 1.0), self.a_shape, self.b_shape)
            .expect("shapes validated at construction")
    }
}

/// `A = 2αŪ/σ²`, `B = 2βĪ/σ²`.
pub fn stationary_beta(params: &SdeParams, u_bar: f64, i_bar: f64) -> Result<BetaStationary> {
    if params.sigma == 0.0 {
        return Err(AmcError::NoStationaryLaw);
    }
    if !(u_bar > 0.0 && i_bar > 0.0) {
        return Err(invalid("u_bar/i_bar", format!("must be positive, got ({u_bar}, {i_bar})")));
    }
    let s2 = params.sigma * params.sigma;
    BetaStationary::new(2.0 * params.alpha * u_bar / s2, 2.0 * params.beta * i_bar / s2)
}

/// Stationary fraction of time spent in each phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOccupancy {
    pub liquid: f64,
    pub glass: f64,
    pub crystal: f64,
}

impl PhaseOccupancy {
    pub fn as_array(&self) -> [f64; 3] {
        [self.liquid, self.glass, self.crystal]
    }
}

/// `π_L = I_{τL}`, `π_G = I_{τC} − I_{τL}`, `π_C = 1 − I_{τC}`.
pub fn phase_occupancy(law: &BetaStationary, tau_l: f64, tau_c: f64) -> Result<PhaseOccupancy> {
    if !(0.0 < tau_l && tau_l < tau_c && tau_c < 1.0) {
        return Err(invalid("thresholds", format!("need 0 < tau_L < tau_C < 1, got ({tau_l}, {tau_c})")));
    }
    let below_l = law.cdf(tau_l);
    let below_c = law.cdf(tau_c);
    Ok(PhaseOccupancy {
        liquid: below_l,
        glass: below_c - below_l,
        crystal: 1.0 - below_c,
    })
}

/// Chebyshev forgetting bound `min(1, σ²/(8λ) / (c* − τL)²)`, uniform in the horizon.
pub fn forgetting_bound_chebyshev(fp: &FixedPointAnalysis, tau_l: f64, sigma: f64) -> Result<f64> {
    let margin = fp.c_star - tau_l;
    if !(margin > 0.0) {
        return Err(AmcError::VacuousBound {
            c_star: fp.c_star,
            tau_l,
        });
    }
    let ceiling = sigma * sigma / (8.0 * fp.lambda);
    Ok((ceiling / (margin * margin)).min(1.0))
}

/// Horizon-explicit forgetting bound
/// `exp(−2λ(c0 − τL)²/(σ²T))·exp(−λT/2)`, clamped to `[0, 1]`.
///
/// The product form leans on `T ≥ 1/λ` in its derivation; for shorter horizons
/// the formula is still evaluated as written and should be read with care.
pub fn forgetting_bound_gaussian(
    c0: CrystallizationState,
    tau_l: f64,
    lambda: f64,
    sigma: f64,
    horizon: f64,
) -> Result<f64> {
    let margin = c0.0 - tau_l;
    if !(margin > 0.0) {
        return Err(invalid("c0", format!("must exceed tau_L = {tau_l}, got {}", c0.0)));
    }
    if !(horizon > 0.0) {
        return Err(invalid("horizon", format!("must be > 0, got {horizon}")));
    }
    let s2t = sigma * sigma * horizon;
    let first = if s2t == 0.0 {
        0.0
    } else {
        (-2.0 * lambda * margin * margin / s2t).exp()
    };
    Ok((first * (-lambda * horizon / 2.0).exp()).clamp(0.0, 1.0))
}

fn interior(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(AmcError::BoundaryPotential(c))
    }
}

/// Quasi-potential `F(c) = −[A·ln c + B·ln(1 − c)]`.
pub fn quasi_potential(c: f64, law: &BetaStationary) -> Result<f64> {
    interior(c)?;
    Ok(-(law.a_shape * c.ln() + law.b_shape * (-c).ln_1p()))
}

/// `dF/dc = −A/c + B/(1 − c)`.
pub fn quasi_potential_gradient(c: f64, law: &BetaStationary) -> Result<f64> {
    interior(c)?;
    Ok(-law.a_shape / c + law.b_shape / (1.0 - c))
}

/// Drift reconstructed from the potential, `−D_L(c)·dF/dc` with
/// `D_L(c) = σ²c(1 − c)/2`. Equals the SDE drift under the averaged inputs.
pub fn langevin_drift(c: f64, law: &BetaStationary, sigma: f64) -> Result<f64> {
    let d_l = sigma * sigma * c * (1.0 - c) / 2.0;
    Ok(-d_l * quasi_potential_gradient(c, law)?)
}
