//! HPPC identification: ohmic resistance from the four pulse-edge voltages
//! and fractional branch parameters from the relaxation tail.

mod segment;
pub mod trf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecm::{CellModel, CurrentSign, FractionalBranch};
use crate::error::{Error, Result};
use crate::mlfunc::e_alpha;
use crate::ocv::OcvTable;
use trf::{least_squares, TrfOptions};

/// Default Mittag-Leffler tolerance of the relaxation fit.
pub const FIT_ML_TOL: f64 = 1e-8;

pub use segment::{segment_hppc, SegmentIssue, SegmentOptions, Segmentation};

/// One pulse of an HPPC test and the rest that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    /// SOC just before the pulse.
    pub soc_j: f64,
    /// SOC at the end of the pulse, held during the relaxation.
    pub soc_relax: f64,
    /// Pulse current magnitude (A).
    pub i_pulse: f64,
    /// +1 for a charging pulse, -1 for a discharging pulse.
    pub polarity: f64,
    /// Time the pulse current was held (s).
    pub pulse_duration: f64,
    pub u_t1: f64,
    pub u_t2: f64,
    pub u_t3: f64,
    pub u_t4: f64,
    /// Seconds since the end of the pulse.
    pub relax_t: Vec<f64>,
    pub relax_v: Vec<f64>,
    /// Sample indices of the first and last pulse samples in the source trace.
    pub pulse_start: usize,
    pub pulse_end: usize,
}

impl PulseSegment {
    pub fn relax_duration(&self) -> f64 {
        self.relax_t.last().copied().unwrap_or(0.0)
    }
}

/// `(U_T2 - U_T1 + U_T3 - U_T4) / (2 I)`, signed so a charging pulse gives
/// a positive resistance. A negative result is returned as-is.
pub fn extract_r0(seg: &PulseSegment) -> Result<f64> {
    if !(seg.i_pulse > 0.0) {
        return Err(Error::domain(format!("pulse current must be positive, got {}", seg.i_pulse)));
    }
    Ok(seg.polarity * (seg.u_t2 - seg.u_t1 + seg.u_t3 - seg.u_t4) / (2.0 * seg.i_pulse))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchParams {
    #[serde(rename = "R")]
    pub r: f64,
    pub tau: f64,
    pub alpha: f64,
}

impl BranchParams {
    pub fn to_branch(self) -> Result<FractionalBranch> {
        FractionalBranch::from_tau(self.r, self.tau, self.alpha)
    }
}

/// How the branch voltages at the end of the pulse are modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amplitude {
    /// Each branch starts the rest at its full `I R`.
    Saturated,
    /// Each branch starts at `I R (1 - E_α(-Δ^α/τ))` for a pulse of length Δ
    /// applied to a relaxed branch.
    #[default]
    FinitePulse,
}

/// Predicted relaxation voltage at `t` seconds after the pulse:
/// `ocv + p I Σ A_i E_α(-t^α/τ)` with `A_i = R_i` or `R_i (1 - E_α(-Δ^α/τ))`.
#[allow(clippy::too_many_arguments)]
pub fn relax_model(
    params: &[BranchParams],
    ocv: f64,
    i_pulse: f64,
    polarity: f64,
    pulse_duration: f64,
    amplitude: Amplitude,
    t: f64,
    tol: f64,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("relaxation time must be non-negative, got {t}")));
    }
    let mut sum = 0.0;
    for p in params {
        sum += branch_amplitude(p, pulse_duration, amplitude, tol)? * decay(p, t, tol)?;
    }
    Ok(ocv + polarity * i_pulse * sum)
}

fn decay(p: &BranchParams, t: f64, tol: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(1.0);
    }
    e_alpha(p.alpha, -t.powf(p.alpha) / p.tau, tol)
}

fn branch_amplitude(p: &BranchParams, pulse_duration: f64, amplitude: Amplitude, tol: f64) -> Result<f64> {
    match amplitude {
        Amplitude::Saturated => Ok(p.r),
        Amplitude::FinitePulse => Ok(p.r * (1.0 - decay(p, pulse_duration, tol)?)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub r: (f64, f64),
    pub tau: (f64, f64),
    pub alpha: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            r: (1e-5, 1e-1),
            tau: (0.1, 1e4),
            alpha: (0.3, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_branches: usize,
    pub bounds: Bounds,
    /// Starting point; derived from the data when absent.
    pub init: Option<Vec<BranchParams>>,
    /// Pins every α (e.g. 1 for an integer-order model).
    pub fixed_alpha: Option<f64>,
    pub amplitude: Amplitude,
    /// Fits a constant voltage offset on top of the tabulated OCV.
    pub fit_ocv_offset: bool,
    pub max_iter: usize,
    pub cost_tol: f64,
    pub step_tol: f64,
    pub grad_tol: f64,
    /// Mittag-Leffler tolerance used inside the model. Tighter than the
    /// simulation default: at 1e-6 the stopping rule makes the model jump
    /// by about the tolerance when the term count changes, which corrupts
    /// forward-difference Jacobians.
    pub ml_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_branches: 1,
            bounds: Bounds::default(),
            init: None,
            fixed_alpha: None,
            amplitude: Amplitude::FinitePulse,
            fit_ocv_offset: false,
            max_iter: 200,
            cost_tol: 1e-12,
            step_tol: 1e-12,
            grad_tol: 1e-12,
            ml_tol: FIT_ML_TOL,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_branches == 0 {
            return Err(Error::domain("n_branches must be at least 1"));
        }
        let b = &self.bounds;
        for (name, (lo, hi)) in [("R", b.r), ("tau", b.tau), ("alpha", b.alpha)] {
            if !(lo < hi) || !(lo > 0.0) || !hi.is_finite() {
                return Err(Error::domain(format!("bounds for {name} must satisfy 0 < lower < upper, got [{lo}, {hi}]")));
            }
        }
        if b.alpha.1 > 1.0 {
            return Err(Error::domain("alpha bounds must lie within (0, 1]"));
        }
        if let Some(a) = self.fixed_alpha {
            crate::mlfunc::validate_alpha(a)?;
        }
        if let Some(init) = &self.init {
            if init.len() != self.n_branches {
                return Err(Error::Dimension {
                    expected: self.n_branches,
                    got: init.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Branches sorted by increasing tau.
    pub params: Vec<BranchParams>,
    pub r0: f64,
    pub ocv_offset: Option<f64>,
    /// Mean squared error of the relaxation fit (V²).
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// `(t, model - measured)`.
    pub residuals: Vec<(f64, f64)>,
}

/// Parameter layout inside the optimizer: `[R_i, tau_i, (alpha_i)]` per
/// branch, then the OCV offset when fitted.
struct Layout {
    n: usize,
    free_alpha: bool,
    offset: bool,
    fixed_alpha: f64,
}

impl Layout {
    fn per_branch(&self) -> usize {
        if self.free_alpha {
            3
        } else {
            2
        }
    }

    fn len(&self) -> usize {
        self.n * self.per_branch() + usize::from(self.offset)
    }

    fn unpack(&self, x: &[f64]) -> (Vec<BranchParams>, f64) {
        let k = self.per_branch();
        let params = (0..self.n)
            .map(|i| BranchParams {
                r: x[i * k],
                tau: x[i * k + 1],
                alpha: if self.free_alpha { x[i * k + 2] } else { self.fixed_alpha },
            })
            .collect();
        let offset = if self.offset { x[self.n * k] } else { 0.0 };
        (params, offset)
    }

    fn pack(&self, params: &[BranchParams], offset: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        for p in params {
            x.push(p.r);
            x.push(p.tau);
            if self.free_alpha {
                x.push(p.alpha);
            }
        }
        if self.offset {
            x.push(offset);
        }
        x
    }

    fn bounds(&self, b: &Bounds) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.len());
        let mut hi = Vec::with_capacity(self.len());
        for _ in 0..self.n {
            lo.push(b.r.0);
            hi.push(b.r.1);
            lo.push(b.tau.0);
            hi.push(b.tau.1);
            if self.free_alpha {
                lo.push(b.alpha.0);
                hi.push(b.alpha.1);
            }
        }
        if self.offset {
            lo.push(-OFFSET_LIMIT);
            hi.push(OFFSET_LIMIT);
        }
        (lo, hi)
    }
}

const OFFSET_LIMIT: f64 = 0.2;

/// Evaluates the relaxation model on every sample of a segment.
pub fn relax_curve(
    seg: &PulseSegment,
    ocv: f64,
    params: &[BranchParams],
    amplitude: Amplitude,
    tol: f64,
) -> Result<Vec<f64>> {
    let amps = params
        .iter()
        .map(|p| branch_amplitude(p, seg.pulse_duration, amplitude, tol))
        .collect::<Result<Vec<_>>>()?;
    let scale = seg.polarity * seg.i_pulse;
    seg.relax_t
        .iter()
        .map(|&t| {
            let mut sum = 0.0;
            for (p, a) in params.iter().zip(&amps) {
                sum += a * decay(p, t, tol)?;
            }
            Ok(ocv + scale * sum)
        })
        .collect()
}

fn initial_guess(seg: &PulseSegment, ocv: f64, cfg: &FitConfig) -> Vec<BranchParams> {
    if let Some(init) = &cfg.init {
        return init.clone();
    }
    let n = cfg.n_branches;
    let t_relax = seg.relax_duration().max(f64::MIN_POSITIVE);
    let lo = t_relax / 50.0;
    let taus: Vec<f64> = if n == 1 {
        vec![(lo * t_relax).sqrt()]
    } else {
        (0..n)
            .map(|i| lo * (t_relax / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    };
    let amplitude = (seg.relax_v[0] - ocv).abs() / seg.i_pulse;
    let r = amplitude / n as f64;
    let b = &cfg.bounds;
    taus.into_iter()
        .map(|tau| BranchParams {
            r: r.clamp(b.r.0, b.r.1),
            tau: tau.clamp(b.tau.0, b.tau.1),
            alpha: cfg.fixed_alpha.unwrap_or(0.8).clamp(b.alpha.0, b.alpha.1),
        })
        .collect()
}

/// Bounded least-squares fit of the relaxation tail of one segment.
///
/// The OCV is taken at the SOC held during the relaxation. Returns a result
/// with `converged = false` when the optimizer stops on its iteration budget.
pub fn fit_relaxation(seg: &PulseSegment, ocv_table: &OcvTable, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let n_free = cfg.n_branches * if cfg.fixed_alpha.is_some() { 2 } else { 3 };
    if seg.relax_t.len() < 10 * n_free {
        return Err(Error::Data(format!(
            "relaxation has {} samples, at least {} are needed for {} parameters",
            seg.relax_t.len(),
            10 * n_free,
            n_free
        )));
    }
    if seg.relax_t.len() != seg.relax_v.len() {
        return Err(Error::Dimension {
            expected: seg.relax_t.len(),
            got: seg.relax_v.len(),
        });
    }
    let (vmin, vmax) = seg
        .relax_v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(vmax - vmin > 1e-9) {
        return Err(Error::Data("relaxation voltage is flat; nothing to fit".into()));
    }
    let r0 = extract_r0(seg)?;
    let ocv = ocv_table.eval(seg.soc_relax)?;
    let layout = Layout {
        n: cfg.n_branches,
        free_alpha: cfg.fixed_alpha.is_none(),
        offset: cfg.fit_ocv_offset,
        fixed_alpha: cfg.fixed_alpha.unwrap_or(1.0),
    };
    let init = initial_guess(seg, ocv, cfg);
    let x0 = layout.pack(&init, 0.0);
    let (lower, upper) = layout.bounds(&cfg.bounds);
    let residual = |x: &[f64]| -> Result<Vec<f64>> {
        let (params, offset) = layout.unpack(x);
        let model = relax_curve(seg, ocv + offset, &params, cfg.amplitude, cfg.ml_tol)?;
        Ok(model.iter().zip(&seg.relax_v).map(|(m, v)| m - v).collect())
    };
    let opts = TrfOptions {
        max_iter: cfg.max_iter,
        max_nfev: 20 * cfg.max_iter.max(1),
        ftol: cfg.cost_tol,
        xtol: cfg.step_tol,
        gtol: cfg.grad_tol,
    };
    let sol = least_squares(residual, &x0, &lower, &upper, &opts)?;
    let (mut params, offset) = layout.unpack(&sol.x);
    params.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    let m = sol.residuals.len() as f64;
    let cost = sol.residuals.iter().map(|r| r * r).sum::<f64>() / m;
    Ok(FitResult {
        params,
        r0,
        ocv_offset: cfg.fit_ocv_offset.then_some(offset),
        cost,
        iterations: sol.iterations,
        evaluations: sol.nfev,
        converged: sol.termination.converged(),
        residuals: seg.relax_t.iter().copied().zip(sol.residuals).collect(),
    })
}

/// Fits every segment, in parallel; results keep the input order.
pub fn fit_segments(segs: &[PulseSegment], ocv: &OcvTable, cfg: &FitConfig) -> Vec<Result<FitResult>> {
    segs.par_iter().map(|s| fit_relaxation(s, ocv, cfg)).collect()
}

/// Index of the segment whose pre-pulse SOC is closest to `soc`.
pub fn nearest_segment(segs: &[PulseSegment], soc: f64) -> Option<usize> {
    segs.iter()
        .enumerate()
        .min_by(|a, b| (a.1.soc_j - soc).abs().total_cmp(&(b.1.soc_j - soc).abs()))
        .map(|(i, _)| i)
}

/// Assembles a cell model from one fit.
pub fn model_from_fit(fit: &FitResult, qn: f64, ocv: OcvTable, sign: CurrentSign) -> Result<CellModel> {
    let branches = fit
        .params
        .iter()
        .map(|p| p.to_branch())
        .collect::<Result<Vec<_>>>()?;
    CellModel::new_sorted(fit.r0.max(0.0), branches, qn, ocv, sign)
}
