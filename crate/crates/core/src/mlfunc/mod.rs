//! Mittag-Leffler functions of a real argument.
//!
//! E_{α,β}(z) = Σ_{k≥0} z^k / Γ(αk + β), with E_α = E_{α,1}.
//!
//! Near the origin (and for any z ≥ 0) the defining power series is summed
//! term by term, each term with its own Γ evaluation, and summation stops at
//! the first term whose magnitude falls below the tolerance. For z < -1 the
//! alternating series loses digits to cancellation quickly (at z = -30 the
//! largest term of E_{0.3} is around e^83000). Beyond [`SERIES_RADIUS`] the
//! series is still tried first, summed to the tighter quadrature tolerance,
//! but its result is kept only when the rounding error estimated from the
//! sum of term magnitudes stays below that tolerance. Otherwise the value
//! comes from the real-axis integral representation, which has no
//! cancellation:
//!
//! E_{α,β}(-x) = 1/(απ) ∫_0^∞ c^{(1-β)/α} e^{-c^{1/α}}
//!               [c sin(π(1-β)) + x sin(π(1-β+α))] / (c² + 2cx cos(απ) + x²) dc
//!
//! valid for 0 < α < 1 and β < 1 + α. Larger β is reduced with
//! E_{α,β}(z) = (E_{α,β-α}(z) - 1/Γ(β-α)) / z; α = 1 uses the exponential
//! family directly.

pub mod gamma;
mod quadrature;

use std::f64::consts::PI;

use serde::Serialize;

pub use gamma::{gamma_fn, ln_gamma};

use crate::error::{Error, Result};
use crate::sum::CompensatedSum;
use quadrature::integrate;

/// Default truncation tolerance for the series.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default cap on the number of series terms.
pub const DEFAULT_MAX_TERMS: usize = 200;
/// The battery-model path rejects Mittag-Leffler arguments below `-Z_CUT`.
pub const Z_CUT: f64 = 30.0;
/// Negative arguments with |z| above this use the series only when its
/// cancellation is provably small, and the integral representation otherwise.
pub const SERIES_RADIUS: f64 = 1.0;
/// Relative error of one series term from Γ and the running power, used to
/// bound the cancellation loss of the alternating series.
const TERM_REL_ERR: f64 = 1e-14;

const INTEGRAL_MAX_PANELS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MLParams {
    pub alpha: f64,
    pub beta: f64,
    pub z: f64,
    pub tol: f64,
    pub max_terms: usize,
}

impl MLParams {
    pub fn one(alpha: f64, z: f64) -> Self {
        Self::two(alpha, 1.0, z)
    }

    pub fn two(alpha: f64, beta: f64, z: f64) -> Self {
        Self {
            alpha,
            beta,
            z,
            tol: DEFAULT_TOL,
            max_terms: DEFAULT_MAX_TERMS,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_terms(mut self, max_terms: usize) -> Self {
        self.max_terms = max_terms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::domain(format!("beta must be positive, got {}", self.beta)));
        }
        validate_tol(self.tol)?;
        if self.max_terms == 0 {
            return Err(Error::domain("max_terms must be at least 1"));
        }
        if !self.z.is_finite() {
            return Err(Error::domain(format!("argument must be finite, got {}", self.z)));
        }
        Ok(())
    }
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("order alpha must lie in (0, 1], got {alpha}")))
    }
}

fn validate_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("tolerance must be positive, got {tol}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Series,
    Integral,
}

/// Value plus bookkeeping. `terms_used` counts series terms and is zero when
/// the integral route was taken; `converged` is false when the series hit
/// `max_terms` (or the quadrature its panel budget) before meeting the
/// tolerance. The value is returned either way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MLResult {
    pub value: f64,
    pub terms_used: usize,
    pub converged: bool,
    pub method: Method,
}

/// One-parameter function E_α(z). `params.beta` is ignored.
pub fn ml_one(params: &MLParams) -> Result<MLResult> {
    ml_two(&MLParams { beta: 1.0, ..*params })
}

/// Two-parameter function E_{α,β}(z).
pub fn ml_two(params: &MLParams) -> Result<MLResult> {
    params.validate()?;
    let MLParams {
        alpha,
        beta,
        z,
        tol,
        max_terms,
    } = *params;
    if z < -SERIES_RADIUS {
        let inner = quadrature_rel_tol(tol);
        if let Some(r) = guarded_series(alpha, beta, z, inner, max_terms)? {
            return Ok(r);
        }
        integral_route(alpha, beta, z, tol)
    } else {
        series(alpha, beta, z, tol, max_terms)
    }
}

/// E_{α,α+1}(z) through (E_α(z) - 1) / z. At z = 0 the caller must use the
/// limit 1/Γ(α+1).
pub fn ml_two_from_one(alpha: f64, z: f64, tol: f64) -> Result<f64> {
    if z == 0.0 {
        return Err(Error::domain(
            "ml_two_from_one is undefined at z = 0; the limit is 1/gamma(alpha + 1)",
        ));
    }
    let e = e_alpha(alpha, z, tol)?;
    Ok((e - 1.0) / z)
}

/// E_α(z) as a plain value, failing when the evaluation did not converge.
pub fn e_alpha(alpha: f64, z: f64, tol: f64) -> Result<f64> {
    let r = ml_one(&MLParams::one(alpha, z).with_tol(tol))?;
    if r.converged {
        Ok(r.value)
    } else {
        Err(Error::NotConverged(format!(
            "E_{alpha}({z}) after {} terms ({:?})",
            r.terms_used, r.method
        )))
    }
}

/// Rejects arguments the battery-model path is not allowed to use.
pub fn check_model_argument(z: f64) -> Result<()> {
    if z < -Z_CUT {
        Err(Error::domain(format!(
            "Mittag-Leffler argument {z} is below -{Z_CUT}; shorten the sampling period or check the time constant"
        )))
    } else {
        Ok(())
    }
}

fn series(alpha: f64, beta: f64, z: f64, tol: f64, max_terms: usize) -> Result<MLResult> {
    let mut acc = CompensatedSum::default();
    let mut zk = 1.0_f64;
    for k in 0..max_terms {
        let term = match gamma_fn(alpha * k as f64 + beta) {
            Ok(g) => zk / g,
            // |term| < 1/Γ_max, far below any usable tolerance
            Err(Error::Overflow(_)) if zk.abs() <= 1.0 => 0.0,
            Err(Error::Overflow(_)) => {
                return Err(Error::NonFinite(format!(
                    "series for E_({alpha},{beta})({z}) overflowed at term {k} before reaching tolerance"
                )))
            }
            Err(e) => return Err(e),
        };
        if !term.is_finite() {
            return Err(Error::NonFinite(format!(
                "series for E_({alpha},{beta})({z}) produced a non-finite term at k = {k}"
            )));
        }
        acc.add(term);
        if term.abs() < tol {
            return Ok(MLResult {
                value: acc.value(),
                terms_used: k + 1,
                converged: true,
                method: Method::Series,
            });
        }
        zk *= z;
    }
    Ok(MLResult {
        value: acc.value(),
        terms_used: max_terms,
        converged: false,
        method: Method::Series,
    })
}

/// Series for a negative argument, or `None` when cancellation could cost
/// more than `tol` or the series does not reach `tol` within `max_terms`.
fn guarded_series(alpha: f64, beta: f64, z: f64, tol: f64, max_terms: usize) -> Result<Option<MLResult>> {
    let budget = tol / TERM_REL_ERR;
    // Σ|terms| = E_{α,β}(|z|) grows like e^{|z|^{1/α}}; skip hopeless cases up front
    if (-z).powf(1.0 / alpha) > budget.ln() + 1.0 {
        return Ok(None);
    }
    let mut acc = CompensatedSum::default();
    let mut magnitude = 0.0;
    let mut zk = 1.0_f64;
    for k in 0..max_terms {
        let term = zk / gamma_fn(alpha * k as f64 + beta)?;
        magnitude += term.abs();
        if magnitude > budget {
            return Ok(None);
        }
        acc.add(term);
        if term.abs() < tol {
            return Ok(Some(MLResult {
                value: acc.value(),
                terms_used: k + 1,
                converged: true,
                method: Method::Series,
            }));
        }
        zk *= z;
    }
    Ok(None)
}

fn quadrature_rel_tol(tol: f64) -> f64 {
    (tol * 1e-3).clamp(1e-13, 1e-9)
}

fn integral_route(alpha: f64, beta: f64, z: f64, tol: f64) -> Result<MLResult> {
    debug_assert!(z < 0.0);
    let (value, converged) = if alpha == 1.0 {
        exponential_family(beta, z, tol)?
    } else {
        fractional_family(alpha, beta, z, tol)?
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("E_({alpha},{beta})({z}) evaluated to {value}")));
    }
    Ok(MLResult {
        value,
        terms_used: 0,
        converged,
        method: Method::Integral,
    })
}

fn fractional_family(alpha: f64, beta: f64, z: f64, tol: f64) -> Result<(f64, bool)> {
    if beta >= 1.0 + alpha {
        let lower = beta - alpha;
        let (inner, ok) = fractional_family(alpha, lower, z, tol)?;
        return Ok(((inner - 1.0 / gamma_fn(lower)?) / z, ok));
    }
    let x = -z;
    let p = (1.0 - beta) / alpha;
    let q = 1.0 / (p + 1.0);
    let s1 = (PI * (1.0 - beta)).sin();
    let s2 = (PI * (1.0 - beta + alpha)).sin();
    let ca = (alpha * PI).cos();
    let inv_alpha = 1.0 / alpha;
    // e^{-c^{1/α}} < e^{-60} beyond this point
    let c_max = 60f64.powf(alpha);
    let mut c_breaks = vec![0.0, c_max];
    if c_max > 1.0 {
        c_breaks.push(1.0);
    }
    // near-pole of the denominator when cos(απ) < 0
    let c_star = -x * ca;
    if c_star > 0.0 && c_star < c_max {
        c_breaks.push(c_star);
    }
    c_breaks.sort_by(f64::total_cmp);
    let w_breaks: Vec<f64> = c_breaks.iter().map(|c| c.powf(p + 1.0)).collect();
    // substitution c = w^q absorbs the c^p endpoint factor
    let integrand = |w: f64| {
        let c = w.powf(q);
        let num = c * s1 + x * s2;
        let den = c * c + 2.0 * c * x * ca + x * x;
        (-c.powf(inv_alpha)).exp() * num / den * q
    };
    let quad = integrate(integrand, &w_breaks, quadrature_rel_tol(tol), 1e-300, INTEGRAL_MAX_PANELS);
    Ok((quad.value / (alpha * PI), quad.converged))
}

fn exponential_family(beta: f64, z: f64, tol: f64) -> Result<(f64, bool)> {
    if beta == 1.0 {
        return Ok((z.exp(), true));
    }
    if beta == 2.0 {
        return Ok((z.exp_m1() / z, true));
    }
    if beta < 1.0 {
        let (upper, ok) = exponential_family(beta + 1.0, z, tol)?;
        return Ok((1.0 / gamma_fn(beta)? + z * upper, ok));
    }
    // E_{1,β}(z) = 1/Γ(β) ∫_0^1 exp(z (1 - u^{1/(β-1)})) du for β > 1
    let m = 1.0 / (beta - 1.0);
    let quad = integrate(
        |u: f64| (z * (1.0 - u.powf(m))).exp(),
        &[0.0, 0.5, 1.0],
        quadrature_rel_tol(tol),
        1e-300,
        INTEGRAL_MAX_PANELS,
    );
    Ok((quad.value / gamma_fn(beta)?, quad.converged))
}
