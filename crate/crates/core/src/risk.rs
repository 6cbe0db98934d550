//! Quantile risk functional over sampled values and the Monte Carlo sample
//! budget used for quantile backups.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Default upper bound on the number of posterior samples per backup.
pub const DEFAULT_BUDGET_CAP: usize = 2048;

/// A quantile level together with the sample count and the (1-based) order
/// statistic it selects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileSpec {
    pub alpha: f64,
    pub n_samples: usize,
    pub order_index: usize,
}

impl QuantileSpec {
    pub fn new(alpha: f64, n_samples: usize) -> Result<Self> {
        check_level(alpha)?;
        if n_samples == 0 {
            return Err(Error::EmptySamples);
        }
        Ok(QuantileSpec { alpha, n_samples, order_index: order_index(alpha, n_samples) })
    }
}

/// `ceil(n * alpha)` clamped into `[1, n]`.
pub fn order_index(alpha: f64, n: usize) -> usize {
    ((n as f64 * alpha).ceil() as usize).clamp(1, n)
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("quantile level must lie in (0,1), got {alpha}")))
    }
}

/// Returns the `ceil(M * alpha)`-th smallest sample (no interpolation).
pub fn empirical_quantile(samples: &[f64], alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_level(alpha)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_index(alpha, sorted.len()) - 1])
}

/// In-place variant selecting the `order`-th smallest (1-based) value.
/// Reorders `buf`.
#[inline]
pub(crate) fn select_order_statistic(buf: &mut [f64], order: usize) -> f64 {
    let (_, nth, _) = buf.select_nth_unstable_by(order - 1, f64::total_cmp);
    *nth
}

/// Left quantile `inf{z : P(X <= z) >= alpha}` of a finite weighted
/// distribution given as `(value, probability)` atoms.
pub fn atom_quantile(atoms: &mut [(f64, f64)], alpha: f64) -> Result<f64> {
    if atoms.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_level(alpha)?;
    atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut cumulative = 0.0;
    for &(value, prob) in atoms.iter() {
        cumulative += prob;
        // Absorb rounding in sums like 0.7 + 0.3.
        if cumulative >= alpha - 1e-12 {
            return Ok(value);
        }
    }
    Ok(atoms[atoms.len() - 1].0)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    Normal::standard().pdf(x)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Inverse standard normal CDF.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("probability must lie in (0,1), got {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// Number of posterior samples for a quantile backup at level `alpha`:
/// `min(cap, ceil(c * alpha (1 - alpha) / phi(Phi^{-1}(alpha))^2))`.
pub fn mc_budget(alpha: f64, c_samples: f64, cap: usize) -> Result<usize> {
    check_level(alpha)?;
    if !(c_samples > 0.0) || cap == 0 {
        return Err(Error::InvalidArgument(format!(
            "budget needs c_samples > 0 and cap > 0, got {c_samples} and {cap}"
        )));
    }
    let density = std_normal_pdf(std_normal_quantile(alpha)?);
    let raw = (c_samples * alpha * (1.0 - alpha) / (density * density)).ceil();
    Ok(if raw >= cap as f64 { cap } else { (raw as usize).max(1) })
}
