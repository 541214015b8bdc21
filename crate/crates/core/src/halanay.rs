//! Exponential envelopes for delayed differential inequalities of the form
//! `D+u <= a u(t) + b sup_{[t - tau(t), t]} u + c`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Coefficients of the delayed differential inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalanayParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub tau0: f64,
    /// Any `sigma > 0` with `a + b <= -sigma`; the largest choice is `-(a + b)`.
    pub sigma: f64,
}

impl HalanayParams {
    pub fn new(a: f64, b: f64, c: f64, tau0: f64) -> Result<Self> {
        Self::with_margin(a, b, c, tau0, -(a + b))
    }

    pub fn with_margin(a: f64, b: f64, c: f64, tau0: f64, sigma: f64) -> Result<Self> {
        ensure_finite([a, b, c, tau0, sigma], "Halanay parameters")?;
        if a >= 0.0 || b < 0.0 || c < 0.0 || tau0 < 0.0 {
            return Err(Error::InvalidInput(format!(
                "need a < 0, b >= 0, c >= 0, tau0 >= 0 (got a={a}, b={b}, c={c}, tau0={tau0})"
            )));
        }
        if a + b >= 0.0 {
            return Err(Error::NoContraction { sum: a + b });
        }
        if sigma <= 0.0 || a + b > -sigma {
            return Err(Error::InvalidInput(format!(
                "margin sigma={sigma} must be positive with a + b <= -sigma"
            )));
        }
        Ok(Self { a, b, c, tau0, sigma })
    }
}

/// `t -> initial_sup * exp(-rate t) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub initial_sup: f64,
    pub rate: f64,
    pub offset: f64,
}

impl Envelope {
    pub fn eval(&self, t: f64) -> f64 {
        self.initial_sup * (-self.rate * t).exp() + self.offset
    }
}

/// Positive root of `lambda + a + b exp(lambda tau0) = 0`.
///
/// The delay enters only through its bound: the root decreases in `tau`, so
/// the worst case `tau(t) = tau0` realises the infimum over time.
pub fn solve_rate(a: f64, b: f64, tau0: f64) -> Result<f64> {
    ensure_finite([a, b, tau0], "rate equation coefficients")?;
    if a >= 0.0 || b < 0.0 || tau0 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "need a < 0, b >= 0, tau0 >= 0 (got a={a}, b={b}, tau0={tau0})"
        )));
    }
    let upper = -(a + b);
    if upper <= 0.0 {
        return Err(Error::NoContraction { sum: a + b });
    }
    if b == 0.0 || tau0 == 0.0 {
        return Ok(upper);
    }
    let residual = |lambda: f64| lambda + a + b * (lambda * tau0).exp();
    // residual(0) = a + b < 0, residual(upper) = b (e^{upper tau0} - 1) >= 0
    let (mut lo, mut hi) = (0.0_f64, upper);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    // the lower end keeps the envelope conservative
    Ok(lo)
}

pub fn envelope(params: &HalanayParams, initial_sup: f64) -> Result<Envelope> {
    if !(initial_sup >= 0.0) || !initial_sup.is_finite() {
        return Err(Error::InvalidInput(format!("initial sup {initial_sup} must be finite and >= 0")));
    }
    Ok(Envelope {
        initial_sup,
        rate: solve_rate(params.a, params.b, params.tau0)?,
        offset: params.c / params.sigma,
    })
}
