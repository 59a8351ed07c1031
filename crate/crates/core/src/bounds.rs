//! Certificate formulas: binary KL and its inversion, the Maurer, Lever and
//! differentially-private PAC-Bayes bounds, max-information accounting for
//! pure-DP mechanisms, exponential-mechanism privacy, and the Gaussian
//! 2-Wasserstein penalty terms.
//!
//! Everything here is pure and deterministic: identical inputs produce
//! bit-identical outputs. All logarithms are natural (nats).

use crate::error::{Error, Result};
use crate::math::golden_section_min;
use serde::{Deserialize, Serialize};

/// Inputs common to every certificate: sample size, confidence, the
/// max-information split parameter and the privacy budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Training sample count m.
    pub m: u64,
    /// Confidence parameter, in (0, 1).
    pub delta: f64,
    /// Max-information split, in (0, delta).
    pub beta: f64,
    /// Privacy budget in nats, >= 0.
    pub epsilon: f64,
}

impl BoundParams {
    pub fn new(m: u64, delta: f64, beta: f64, epsilon: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("m must be >= 1"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!(
                "delta must be in (0,1), got {delta}"
            )));
        }
        if !(beta > 0.0 && beta < delta) {
            return Err(Error::domain(format!(
                "beta must be in (0, delta)={delta}, got {beta}"
            )));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::domain(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        Ok(BoundParams {
            m,
            delta,
            beta,
            epsilon,
        })
    }

    /// Conventional default: beta = delta / 2.
    pub fn with_half_delta_beta(m: u64, delta: f64, epsilon: f64) -> Result<Self> {
        Self::new(m, delta, delta / 2.0, epsilon)
    }
}

/// Pure-DP privacy budget. `delta_dp` is carried for interface completeness;
/// every mechanism produced by this crate is (epsilon, 0)-DP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta_dp: f64,
}

/// Exponential-mechanism specification: temperature and score sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialMechanismSpec {
    /// Mechanism temperature (the beta multiplying the score).
    pub beta_temp: f64,
    /// Score sensitivity over neighbouring datasets, sup over hypotheses.
    pub sensitivity: f64,
}

/// Inputs to the 2-Wasserstein KL replacement penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WassersteinPenaltyInput {
    /// Squared 2-norm bound on the mean displacement.
    pub c: f64,
    /// Minimum eigenvalue of the prior covariance.
    pub sigma_min: f64,
    /// E_{v ~ Q} ||v - w(S)||_{Sigma^-1}.
    pub expected_norm: f64,
    /// Failure probability of the displacement event.
    pub delta_prime: f64,
}

fn check_unit_interval(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("{name} must be in [0,1], got {x}")));
    }
    Ok(())
}

/// Binary KL divergence kl(q || p) between Bernoulli(q) and Bernoulli(p),
/// with the conventions 0 ln 0 = 0 and +inf when the support condition
/// fails (p = 0 with q > 0, or p = 1 with q < 1).
pub fn kl_bin(q: f64, p: f64) -> Result<f64> {
    check_unit_interval("q", q)?;
    check_unit_interval("p", p)?;
    Ok(kl_bin_raw(q, p))
}

/// Unchecked core of [`kl_bin`]; assumes both arguments lie in [0,1].
pub(crate) fn kl_bin_raw(q: f64, p: f64) -> f64 {
    let left = if q == 0.0 {
        0.0
    } else if p == 0.0 {
        return f64::INFINITY;
    } else {
        q * (q / p).ln()
    };
    let right = if q == 1.0 {
        0.0
    } else if p == 1.0 {
        return f64::INFINITY;
    } else {
        (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln()
    };
    left + right
}

/// Largest p in [q, 1] with kl(q || p) <= c. Converts a bound on the
/// KL-generalization error into a risk bound.
///
/// p -> kl(q || p) is monotone on [q, 1], so plain bisection is exact up to
/// the bracket width; the bracket is shrunk well below the 1e-9 contract.
pub fn kl_inverse(q: f64, c: f64) -> Result<f64> {
    check_unit_interval("q", q)?;
    if c.is_nan() || c < 0.0 {
        return Err(Error::domain(format!("c must be >= 0, got {c}")));
    }
    if q == 1.0 || c == f64::INFINITY {
        return Ok(1.0);
    }
    if c == 0.0 {
        return Ok(q);
    }
    let mut lo = q;
    let mut hi = 1.0;
    // kl(q||p) -> +inf as p -> 1 for q < 1, so `hi` is always infeasible.
    // Bisect down to f64 resolution; the midpoint degenerates once the
    // bracket reaches adjacent floats.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl_bin_raw(q, mid) <= c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn check_m_delta(m: u64, delta: f64) -> Result<()> {
    if m == 0 {
        return Err(Error::domain("m must be >= 1"));
    }
    if !delta.is_finite() || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!(
            "delta must be in (0,1), got {delta}"
        )));
    }
    Ok(())
}

/// Right side of the Maurer PAC-Bayes bound on the KL-generalization error:
/// (KL(Q||P) + ln(2 sqrt(m) / delta)) / m, for losses in [0,1].
pub fn maurer_bound(kl_qp: f64, m: u64, delta: f64) -> Result<f64> {
    check_m_delta(m, delta)?;
    if !(kl_qp >= 0.0) {
        return Err(Error::domain(format!("kl_qp must be >= 0, got {kl_qp}")));
    }
    let mf = m as f64;
    Ok((kl_qp + (2.0 * mf.sqrt() / delta).ln()) / mf)
}

/// Grouping of the Lever bound terms. The published display places every
/// term under the radical and multiplies by tau, which sends the bound to 0
/// as tau -> 0 and so contradicts the KL = 0 case of the Maurer bound; the
/// conventional grouping keeps only the variance term under the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LeverVariant {
    /// tau * sqrt(2L/m) + tau^2/(2m) + L, all over m. Default.
    #[default]
    Conventional,
    /// tau * sqrt(2L/m + tau^2/(2m) + L), over m. Kept for comparison.
    AsDisplayed,
}

/// Distribution-free bound on the KL-generalization error of a Gibbs
/// posterior at inverse temperature tau (empirical risk in [0,1]).
pub fn lever_bound(tau: f64, m: u64, delta: f64, variant: LeverVariant) -> Result<f64> {
    check_m_delta(m, delta)?;
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("tau must be >= 0, got {tau}")));
    }
    let mf = m as f64;
    let log_term = (2.0 * mf.sqrt() / delta).ln();
    let value = match variant {
        LeverVariant::Conventional => {
            (tau * (2.0 * log_term / mf).sqrt() + tau * tau / (2.0 * mf) + log_term) / mf
        }
        LeverVariant::AsDisplayed => {
            tau * (2.0 * log_term / mf + tau * tau / (2.0 * mf) + log_term).sqrt() / mf
        }
    };
    Ok(value)
}

/// Max-information of an epsilon-DP mechanism over m samples: epsilon * m.
pub fn max_info_pure(epsilon: f64, m: u64) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("m must be >= 1"));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::domain(format!(
            "epsilon must be >= 0, got {epsilon}"
        )));
    }
    Ok(epsilon * m as f64)
}

/// beta-approximate max-information of an epsilon-DP mechanism:
/// epsilon^2 m / 2 + epsilon sqrt(m ln(2/beta) / 2).
pub fn max_info_approx(epsilon: f64, m: u64, beta: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("m must be >= 1"));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::domain(format!(
            "epsilon must be >= 0, got {epsilon}"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(format!("beta must be in (0,1), got {beta}")));
    }
    let mf = m as f64;
    Ok(epsilon * epsilon * mf / 2.0 + epsilon * (mf * (2.0 / beta).ln() / 2.0).sqrt())
}

/// Right side of the PAC-Bayes bound with an epsilon-DP data-dependent
/// prior, in its general-beta form:
///
///   (kl_qp + ln(2 sqrt(m) / (delta - beta))) / m + max_info_approx(...) / m.
///
/// At beta = delta/2 this reduces to
/// (kl_qp + ln(4 sqrt(m)/delta))/m + eps^2/2 + eps sqrt(ln(4/delta)/(2m)).
pub fn dp_pacbayes_rhs(kl_qp: f64, params: &BoundParams) -> Result<f64> {
    if !(kl_qp >= 0.0) {
        return Err(Error::domain(format!("kl_qp must be >= 0, got {kl_qp}")));
    }
    let BoundParams {
        m,
        delta,
        beta,
        epsilon,
    } = *params;
    check_m_delta(m, delta)?;
    if !(beta > 0.0 && beta < delta) {
        return Err(Error::domain(format!(
            "beta must be in (0, delta)={delta}, got {beta}"
        )));
    }
    let mf = m as f64;
    let pac = (kl_qp + (2.0 * mf.sqrt() / (delta - beta)).ln()) / mf;
    Ok(pac + max_info_approx(epsilon, m, beta)? / mf)
}

/// Minimizes [`dp_pacbayes_rhs`] over beta in (0, delta) by golden-section
/// search. The objective is convex in beta (sum of -ln(delta - beta) and a
/// convex sqrt-log term), so the search is exact up to the tolerance. The
/// returned value never exceeds the beta = delta/2 value.
pub fn optimize_beta(kl_qp: f64, m: u64, delta: f64, epsilon: f64) -> Result<(f64, f64)> {
    check_m_delta(m, delta)?;
    let eval = |beta: f64| {
        let params = BoundParams {
            m,
            delta,
            beta,
            epsilon,
        };
        dp_pacbayes_rhs(kl_qp, &params).unwrap_or(f64::INFINITY)
    };
    let lo = 1e-12 * delta;
    let hi = (1.0 - 1e-12) * delta;
    let (mut beta_star, mut value) = golden_section_min(eval, lo, hi, 1e-8);
    let at_half = eval(delta / 2.0);
    if at_half < value {
        beta_star = delta / 2.0;
        value = at_half;
    }
    Ok((beta_star, value))
}

/// Privacy of a single draw from the Gibbs posterior at inverse temperature
/// tau over a surrogate risk with range Delta: epsilon = 2 tau Delta / m.
pub fn gibbs_sample_privacy(tau: f64, delta_range: f64, m: u64) -> Result<PrivacyBudget> {
    if m == 0 {
        return Err(Error::domain("m must be >= 1"));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("tau must be >= 0, got {tau}")));
    }
    if !(delta_range > 0.0) || !delta_range.is_finite() {
        return Err(Error::domain(format!(
            "Delta must be > 0, got {delta_range}"
        )));
    }
    Ok(PrivacyBudget {
        epsilon: 2.0 * tau * delta_range / m as f64,
        delta_dp: 0.0,
    })
}

/// Exponential-mechanism privacy: 2 * beta * (score sensitivity).
/// Specializes to [`gibbs_sample_privacy`] with beta = tau and sensitivity
/// Delta / m.
pub fn exp_mechanism_privacy(spec: &ExponentialMechanismSpec) -> Result<PrivacyBudget> {
    if !(spec.beta_temp >= 0.0) || !spec.beta_temp.is_finite() {
        return Err(Error::domain(format!(
            "beta_temp must be >= 0, got {}",
            spec.beta_temp
        )));
    }
    if !(spec.sensitivity >= 0.0) || !spec.sensitivity.is_finite() {
        return Err(Error::domain(format!(
            "sensitivity must be >= 0, got {}",
            spec.sensitivity
        )));
    }
    Ok(PrivacyBudget {
        epsilon: 2.0 * spec.beta_temp * spec.sensitivity,
        delta_dp: 0.0,
    })
}

/// Additive KL replacement when the Gaussian prior mean is only close (in
/// squared 2-norm, within C) to a private mean:
/// C / (2 sigma_min) + sqrt(C / sigma_min) * E||v - w(S)||_{Sigma^-1}.
pub fn wasserstein_kl_penalty(input: &WassersteinPenaltyInput) -> Result<f64> {
    if !(input.c >= 0.0) || !input.c.is_finite() {
        return Err(Error::domain(format!("C must be >= 0, got {}", input.c)));
    }
    if !(input.sigma_min > 0.0) {
        return Err(Error::domain(format!(
            "sigma_min must be > 0, got {}",
            input.sigma_min
        )));
    }
    if !(input.expected_norm >= 0.0) {
        return Err(Error::domain(format!(
            "expected_norm must be >= 0, got {}",
            input.expected_norm
        )));
    }
    let ratio = input.c / input.sigma_min;
    Ok(0.5 * ratio + ratio.sqrt() * input.expected_norm)
}

/// Bound on E_{v ~ Q} ||v - w||_{Sigma^-1} for a Gibbs posterior over a
/// Gaussian base measure with a surrogate risk of range Delta:
/// sqrt(2 tau Delta) + sqrt(2/pi).
pub fn gibbs_expected_norm_bound(tau: f64, delta_range: f64) -> Result<f64> {
    if !(tau >= 0.0) || !(delta_range >= 0.0) {
        return Err(Error::domain("tau and Delta must be >= 0".to_string()));
    }
    Ok((2.0 * tau * delta_range).sqrt() + (2.0 / std::f64::consts::PI).sqrt())
}
