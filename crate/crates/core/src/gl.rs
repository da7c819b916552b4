//! Grünwald–Letnikov finite-memory discretization of the branch dynamics
//! `D^α U = -U/τ + i/C`, kept as a baseline for the recursion in [`crate::ecm`].

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ecm::{CellModel, CellState, FractionalBranch, SimOutput, SimStats};
use crate::error::{Error, Result};
use crate::mlfunc::validate_alpha;
use crate::sum::CompensatedSum;
use crate::trace::Trace;

/// Memory length used for the comparison runs.
pub const DEFAULT_MEMORY: usize = 64;

/// Where the `-U/τ` term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlScheme {
    /// `-U_k/τ`: the new sample appears only on the left.
    #[default]
    Explicit,
    /// `-U_{k+1}/τ`, solved for `U_{k+1}`.
    Implicit,
}

/// `w_0 = 1`, `w_j = w_{j-1} (1 - (α+1)/j)`, i.e. `(-1)^j binom(α, j)`.
pub fn gl_weights(alpha: f64, memory: usize) -> Result<Vec<f64>> {
    validate_alpha(alpha)?;
    if memory == 0 {
        return Err(Error::domain("G-L memory length must be at least 1"));
    }
    let mut w = Vec::with_capacity(memory + 1);
    w.push(1.0);
    for j in 1..=memory {
        let prev = w[j - 1];
        w.push(prev * (1.0 - (alpha + 1.0) / j as f64));
    }
    Ok(w)
}

/// Truncated history of one branch plus its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GLBranchState {
    history: VecDeque<f64>,
    weights: Vec<f64>,
    memory: usize,
    alpha: f64,
    last_touched: usize,
    peak_len: usize,
}

impl GLBranchState {
    /// History seeded with the initial branch voltage.
    pub fn new(alpha: f64, memory: usize, u0: f64) -> Result<Self> {
        let weights = gl_weights(alpha, memory)?;
        let mut history = VecDeque::with_capacity(memory + 1);
        history.push_back(u0);
        Ok(Self {
            history,
            weights,
            memory,
            alpha,
            last_touched: 0,
            peak_len: 1,
        })
    }

    pub fn current(&self) -> f64 {
        *self.history.back().expect("history is never empty")
    }

    /// Oldest first.
    pub fn history(&self) -> &VecDeque<f64> {
        &self.history
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    /// History entries read by the most recent step.
    pub fn last_touched(&self) -> usize {
        self.last_touched
    }

    /// Longest history held so far.
    pub fn peak_len(&self) -> usize {
        self.peak_len
    }

    /// In-place version of [`gl_step`].
    pub fn advance(&mut self, branch: &FractionalBranch, ic: f64, period: f64, scheme: GlScheme) -> Result<f64> {
        if branch.alpha() != self.alpha {
            return Err(Error::domain(format!(
                "G-L weights were built for alpha = {}, branch has {}",
                self.alpha,
                branch.alpha()
            )));
        }
        let h = period.powf(branch.alpha());
        let len = self.history.len();
        let m = len.min(self.memory);
        let mut memory_sum = 0.0;
        for j in 1..=m {
            memory_sum += self.weights[j] * self.history[len - j];
        }
        self.last_touched = m;
        let drive = h * ic / branch.c();
        let next = match scheme {
            GlScheme::Explicit => h * (-self.current() / branch.tau()) + drive - memory_sum,
            GlScheme::Implicit => (drive - memory_sum) / (1.0 + h / branch.tau()),
        };
        self.history.push_back(next);
        if self.history.len() > self.memory {
            self.history.pop_front();
        }
        self.peak_len = self.peak_len.max(self.history.len());
        Ok(next)
    }
}

/// One G-L step with charging current `i_k`; the input state is untouched.
pub fn gl_step(
    branch: &FractionalBranch,
    st: &GLBranchState,
    i_k: f64,
    period: f64,
    scheme: GlScheme,
) -> Result<(GLBranchState, f64)> {
    let mut next = st.clone();
    let u = next.advance(branch, i_k, period, scheme)?;
    Ok((next, u))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlOptions {
    pub memory: usize,
    pub scheme: GlScheme,
}

impl Default for GlOptions {
    fn default() -> Self {
        Self {
            memory: DEFAULT_MEMORY,
            scheme: GlScheme::Explicit,
        }
    }
}

/// Output of [`gl_simulate_trace`] plus instrumentation.
#[derive(Debug, Clone)]
pub struct GlRun {
    pub output: SimOutput,
    pub stats: SimStats,
    /// History entries read at each step, first branch.
    pub touched: Vec<usize>,
}

/// Simulates with G-L branches, same row layout and SOC bookkeeping as
/// [`crate::ecm::simulate_trace`]. The period is taken from the trace.
pub fn gl_simulate_trace(model: &CellModel, init: &CellState, trace: &Trace, opts: GlOptions) -> Result<GlRun> {
    if init.u.len() != model.n_branches() {
        return Err(Error::Dimension {
            expected: model.n_branches(),
            got: init.u.len(),
        });
    }
    let period = if trace.len() >= 2 { trace.period()? } else { 1.0 };
    let sign = model.sign().factor();
    let b0 = period / model.qn();
    let mut states = model
        .branches()
        .iter()
        .zip(&init.u)
        .map(|(br, &u0)| GLBranchState::new(br.alpha(), opts.memory, u0))
        .collect::<Result<Vec<_>>>()?;
    let mut out = SimOutput::with_capacity(trace.len(), model.n_branches());
    let mut touched = Vec::with_capacity(trace.len());
    let mut charge = CompensatedSum::default();
    let started = Instant::now();
    for k in 0..trace.len() {
        if k > 0 {
            let ic = sign * trace.i[k - 1];
            charge.add(ic);
            for (st, br) in states.iter_mut().zip(model.branches()) {
                st.advance(br, ic, period, opts.scheme)?;
            }
            touched.push(states[0].last_touched());
        }
        let soc = init.soc + b0 * charge.value();
        let ocv = model
            .ocv()
            .eval(soc)
            .map_err(|_| Error::SocExcursion { index: k, soc })?;
        let usum: f64 = states.iter().map(GLBranchState::current).sum();
        out.t.push(trace.t[k]);
        out.i.push(trace.i[k]);
        out.v.push(ocv + usum + model.r0() * sign * trace.i[k]);
        out.soc.push(soc);
        for (col, st) in out.u.iter_mut().zip(&states) {
            col.push(st.current());
        }
    }
    let stats = SimStats {
        retained_per_branch: states.iter().map(GLBranchState::peak_len).max().unwrap_or(0),
        steps: trace.len().saturating_sub(1),
        elapsed: started.elapsed(),
    };
    Ok(GlRun {
        output: out,
        stats,
        touched,
    })
}
