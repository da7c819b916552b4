//! Fractional-order nRC equivalent-circuit cell model.
//!
//! Each branch is a resistor in parallel with a constant phase element. Under
//! a constant current `i` held from `t = 0` the branch voltage is
//!
//! U(t) = U(0) E_α(-t^α/τ) + i R [1 - E_α(-t^α/τ)],
//!
//! and sampling that at `t = T` gives the two-coefficient recursion
//! `U_{k+1} = a U_k + b i_k` with `a = E_α(-T^α/τ)` and `b = R (1 - a)`.
//! Chaining the recursion restarts the initial-value problem at every sample,
//! which is an approximation of the full fractional history because E_α has
//! no semigroup property.

mod sim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlfunc::{check_model_argument, e_alpha, validate_alpha, DEFAULT_TOL};
use crate::ocv::OcvTable;

pub use sim::{simulate_trace, simulate_trace_analytic, simulate_trace_instrumented, SimOutput, SimStats};

/// Which current polarity charges the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurrentSign {
    #[default]
    ChargePositive,
    DischargePositive,
}

impl CurrentSign {
    /// Multiplier turning a measured current into a charging current.
    pub fn factor(self) -> f64 {
        match self {
            CurrentSign::ChargePositive => 1.0,
            CurrentSign::DischargePositive => -1.0,
        }
    }
}

/// Resistor in parallel with a CPE of coefficient `C` and order `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBranch", into = "RawBranch")]
pub struct FractionalBranch {
    r: f64,
    c: f64,
    alpha: f64,
    tau: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBranch {
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "C")]
    c: f64,
    alpha: f64,
}

impl TryFrom<RawBranch> for FractionalBranch {
    type Error = Error;
    fn try_from(raw: RawBranch) -> Result<Self> {
        FractionalBranch::new(raw.r, raw.c, raw.alpha)
    }
}

impl From<FractionalBranch> for RawBranch {
    fn from(b: FractionalBranch) -> Self {
        RawBranch {
            r: b.r,
            c: b.c,
            alpha: b.alpha,
        }
    }
}

impl FractionalBranch {
    pub fn new(r: f64, c: f64, alpha: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::domain(format!("branch resistance must be positive, got {r}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::domain(format!("branch capacitance must be positive, got {c}")));
        }
        validate_alpha(alpha)?;
        Ok(Self {
            r,
            c,
            alpha,
            tau: r * c,
        })
    }

    /// Builds a branch from its time constant; `C = tau / R`.
    pub fn from_tau(r: f64, tau: f64, alpha: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::domain(format!("time constant must be positive, got {tau}")));
        }
        let mut b = Self::new(r, tau / r, alpha)?;
        // keep the requested tau rather than the rounded product
        b.tau = tau;
        Ok(b)
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Closed-form branch voltage after holding charging current `i0` for `t`
/// seconds from initial voltage `u0`. Returns `u0` exactly at `t = 0`.
pub fn analytic_branch_response(branch: &FractionalBranch, u0: f64, i0: f64, t: f64, tol: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(u0);
    }
    let z = -t.powf(branch.alpha) / branch.tau;
    check_model_argument(z)?;
    let e = e_alpha(branch.alpha, z, tol)?;
    Ok(u0 * e + i0 * branch.r * (1.0 - e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct CellModel {
    r0: f64,
    branches: Vec<FractionalBranch>,
    qn: f64,
    ocv: OcvTable,
    sign: CurrentSign,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    #[serde(rename = "R0")]
    r0: f64,
    #[serde(rename = "Qn")]
    qn: f64,
    #[serde(default)]
    sign: CurrentSign,
    branches: Vec<FractionalBranch>,
    ocv: OcvTable,
}

impl TryFrom<RawModel> for CellModel {
    type Error = Error;
    fn try_from(raw: RawModel) -> Result<Self> {
        CellModel::new(raw.r0, raw.branches, raw.qn, raw.ocv, raw.sign)
    }
}

impl From<CellModel> for RawModel {
    fn from(m: CellModel) -> Self {
        RawModel {
            r0: m.r0,
            qn: m.qn,
            sign: m.sign,
            branches: m.branches,
            ocv: m.ocv,
        }
    }
}

impl CellModel {
    /// `qn` is in coulombs. Branches must be ordered by strictly increasing tau.
    pub fn new(
        r0: f64,
        branches: Vec<FractionalBranch>,
        qn: f64,
        ocv: OcvTable,
        sign: CurrentSign,
    ) -> Result<Self> {
        if !(r0 >= 0.0 && r0.is_finite()) {
            return Err(Error::domain(format!("ohmic resistance must be non-negative, got {r0}")));
        }
        if branches.is_empty() {
            return Err(Error::domain("a cell model needs at least one branch"));
        }
        if !(qn > 0.0 && qn.is_finite()) {
            return Err(Error::domain(format!("capacity must be positive, got {qn}")));
        }
        if branches.windows(2).any(|w| !(w[1].tau > w[0].tau)) {
            return Err(Error::domain("branch time constants must be strictly increasing"));
        }
        Ok(Self {
            r0,
            branches,
            qn,
            ocv,
            sign,
        })
    }

    /// Same as [`CellModel::new`] but sorts the branches by tau first.
    pub fn new_sorted(
        r0: f64,
        mut branches: Vec<FractionalBranch>,
        qn: f64,
        ocv: OcvTable,
        sign: CurrentSign,
    ) -> Result<Self> {
        branches.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        Self::new(r0, branches, qn, ocv, sign)
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn branches(&self) -> &[FractionalBranch] {
        &self.branches
    }

    pub fn qn(&self) -> f64 {
        self.qn
    }

    pub fn ocv(&self) -> &OcvTable {
        &self.ocv
    }

    pub fn sign(&self) -> CurrentSign {
        self.sign
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }
}

/// SOC and branch polarization voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub soc: f64,
    pub u: Vec<f64>,
}

impl CellState {
    /// Relaxed cell at the given SOC.
    pub fn relaxed(soc: f64, n_branches: usize) -> Self {
        Self {
            soc,
            u: vec![0.0; n_branches],
        }
    }
}

/// Sampled model: per-branch recursion coefficients and the SOC increment.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    period: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    b0: f64,
    tol: f64,
    model: CellModel,
}

/// Discretizes with the default Mittag-Leffler tolerance.
pub fn discretize(model: &CellModel, period: f64) -> Result<DiscreteModel> {
    discretize_with_tol(model, period, DEFAULT_TOL)
}

pub fn discretize_with_tol(model: &CellModel, period: f64, tol: f64) -> Result<DiscreteModel> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::domain(format!("sampling period must be positive, got {period}")));
    }
    let mut a = Vec::with_capacity(model.n_branches());
    let mut b = Vec::with_capacity(model.n_branches());
    for br in &model.branches {
        let ai = recursion_coefficient(br, period, tol)?;
        if !(ai > 0.0 && ai < 1.0) {
            return Err(Error::domain(format!(
                "recursion coefficient {ai} for tau = {} is outside (0, 1)",
                br.tau
            )));
        }
        a.push(ai);
        b.push(br.r * (1.0 - ai));
    }
    Ok(DiscreteModel {
        period,
        a,
        b,
        b0: period / model.qn,
        tol,
        model: model.clone(),
    })
}

fn recursion_coefficient(br: &FractionalBranch, period: f64, tol: f64) -> Result<f64> {
    let z = -period.powf(br.alpha) / br.tau;
    check_model_argument(z)?;
    e_alpha(br.alpha, z, tol)
}

impl DiscreteModel {
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn model(&self) -> &CellModel {
        &self.model
    }

    /// Largest deviation between the stored `a_i` and a fresh evaluation.
    pub fn coefficient_drift(&self) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (br, &a) in self.model.branches.iter().zip(&self.a) {
            worst = worst.max((recursion_coefficient(br, self.period, self.tol)? - a).abs());
        }
        Ok(worst)
    }

    fn check_state(&self, state: &CellState) -> Result<()> {
        if state.u.len() != self.a.len() {
            return Err(Error::Dimension {
                expected: self.a.len(),
                got: state.u.len(),
            });
        }
        Ok(())
    }

    /// One sampling period with current `i_k` held constant.
    pub fn step(&self, state: &CellState, i_k: f64) -> Result<CellState> {
        self.check_state(state)?;
        let ic = self.model.sign.factor() * i_k;
        let u = state
            .u
            .iter()
            .zip(self.a.iter().zip(&self.b))
            .map(|(&u, (&a, &b))| a * u + b * ic)
            .collect();
        Ok(CellState {
            soc: state.soc + self.b0 * ic,
            u,
        })
    }

    /// Terminal voltage `OCV(soc) + Σ u_i + R0 i_k`.
    pub fn observe(&self, state: &CellState, i_k: f64) -> Result<f64> {
        self.check_state(state)?;
        let ocv = self.model.ocv.eval(state.soc)?;
        let ic = self.model.sign.factor() * i_k;
        Ok(ocv + state.u.iter().sum::<f64>() + self.model.r0 * ic)
    }
}
