//! Fitting the constant of the integral inequality
//! `H(t) <= H(0) + C ∫_0^t H(s) ds` to a sampled entropy series.

use serde::Serialize;
use thiserror::Error;

use crate::entropy::EntropyRecord;

/// Relative slack allowed in the exponential consequence `H(t) <= H(0) e^{C t}`.
/// The trapezoid form of the integral inequality only implies it up to
/// `O((C Δt)²)`.
pub const EXP_BOUND_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GronwallError {
    #[error("empty entropy series")]
    EmptySeries,
    #[error("non-finite or negative entropy value {value} at t = {time}")]
    NonFinite { time: f64, value: f64 },
    #[error("series times must be strictly increasing (t = {0})")]
    NotSorted(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallFit {
    /// Smallest `C >= 0` with `H_k <= H_0 + C I_k` at every sample, `I_k` the
    /// trapezoid integral of `H` over `[t_0, t_k]`.
    pub c_fit: f64,
    /// `max_k (H_k - H_0 - c_fit I_k)`; never positive.
    pub residual_max: f64,
    pub exp_bound_ok: bool,
    /// Largest ratio `H_k / (H_0 e^{c_fit (t_k - t_0)})`.
    pub exp_ratio_max: f64,
}

pub fn gronwall_fit(series: &[EntropyRecord]) -> Result<GronwallFit, GronwallError> {
    let samples: Vec<(f64, f64)> = series.iter().map(|r| (r.time, r.h)).collect();
    gronwall_fit_samples(&samples)
}

/// [`gronwall_fit`] on raw `(time, H)` samples.
pub fn gronwall_fit_samples(samples: &[(f64, f64)]) -> Result<GronwallFit, GronwallError> {
    let (t0, h0) = *samples.first().ok_or(GronwallError::EmptySeries)?;
    for &(t, h) in samples {
        if !h.is_finite() || h < 0.0 || !t.is_finite() {
            return Err(GronwallError::NonFinite { time: t, value: h });
        }
    }
    if let Some(w) = samples.windows(2).find(|w| !(w[1].0 > w[0].0)) {
        return Err(GronwallError::NotSorted(w[1].0));
    }

    let mut integral = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    integral.push(0.0);
    for w in samples.windows(2) {
        acc += 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
        integral.push(acc);
    }

    let mut c_fit = samples
        .iter()
        .zip(&integral)
        .filter(|(_, &i)| i > 0.0)
        .map(|(&(_, h), &i)| (h - h0) / i)
        .fold(0.0f64, f64::max);
    let residual = |c: f64| {
        samples
            .iter()
            .zip(&integral)
            .map(|(&(_, h), &i)| h - h0 - c * i)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    // Rounding in (h - h0) / i can leave a residual of a few ulps above zero.
    let mut residual_max = residual(c_fit);
    while residual_max > 0.0 {
        c_fit = c_fit * (1.0 + 4.0 * f64::EPSILON) + f64::MIN_POSITIVE;
        residual_max = residual(c_fit);
    }

    let exp_ratio_max = samples
        .iter()
        .map(|&(t, h)| {
            let bound = h0 * (c_fit * (t - t0)).exp();
            if bound > 0.0 {
                h / bound
            } else if h == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0f64, f64::max);
    Ok(GronwallFit {
        c_fit,
        residual_max,
        exp_bound_ok: exp_ratio_max <= 1.0 + EXP_BOUND_TOL,
        exp_ratio_max,
    })
}
