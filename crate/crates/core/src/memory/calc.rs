//! Allocation and error-bound calculators.

use crate::error::{invalid, AmcError, Result};
use crate::sde::SdeParams;

/// Optimal crystal share `βĪ/(αŪ + βĪ)`, equal to `1 − c*`.
pub fn optimal_crystal_fraction(sde: &SdeParams, u_bar: f64, i_bar: f64) -> Result<f64> {
    let (pull, push) = (sde.alpha * u_bar, sde.beta * i_bar);
    if !(pull + push > 0.0) {
        return Err(AmcError::DegenerateFixedPoint);
    }
    Ok(push / (pull + push))
}

/// Minimum buffer size `4γ²L²R²/((1 − γ)⁴ε²) · f_c · ln(|S||A|/δ)`.
#[allow(clippy::too_many_arguments)]
pub fn capacity_bound(
    epsilon: f64,
    delta: f64,
    gamma: f64,
    lipschitz: f64,
    r_max: f64,
    sa_count: f64,
    f_c: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", "must lie in (0, 1)"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma", "must lie in [0, 1)"));
    }
    if !(sa_count >= 1.0) {
        return Err(invalid("sa_count", "must be >= 1"));
    }
    let lead = 4.0 * gamma.powi(2) * lipschitz.powi(2) * r_max.powi(2) / ((1.0 - gamma).powi(4) * epsilon.powi(2));
    Ok(lead * f_c * (sa_count / delta).ln())
}

/// Q-learning error ceiling `2γR L/(1 − γ)² · f_c/√n_c`.
pub fn qlearning_error_bound(gamma: f64, r_max: f64, lipschitz: f64, f_c: f64, n_c: f64) -> Result<f64> {
    if !(n_c >= 1.0) {
        return Err(invalid("n_c", "must be >= 1"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma", "must lie in [0, 1)"));
    }
    Ok(2.0 * gamma * r_max * lipschitz / (1.0 - gamma).powi(2) * f_c / n_c.sqrt())
}
