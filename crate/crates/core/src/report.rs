//! Voltage error metrics and the Caputo versus Grünwald–Letnikov benchmark.

use serde::{Deserialize, Serialize};

use crate::ecm::{discretize_with_tol, simulate_trace_instrumented, CellModel, CellState};
use crate::error::{Error, Result};
use crate::gl::{gl_simulate_trace, GlOptions, GlScheme, DEFAULT_MEMORY};
use crate::mlfunc::DEFAULT_TOL;
use crate::trace::Trace;

/// Error metrics between a predicted and a measured voltage series, plus
/// optional cost figures of the run that produced the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rmse: f64,
    pub mae: f64,
    pub max_abs_err: f64,
    /// Seconds per simulation step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_per_step: Option<f64>,
    /// States retained per branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_history_len: Option<usize>,
}

/// RMSE, mean and maximum absolute error of `pred - meas`.
pub fn evaluate(pred: &[f64], meas: &[f64]) -> Result<RunReport> {
    if pred.len() != meas.len() {
        return Err(Error::Dimension {
            expected: meas.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Data("cannot evaluate empty series".into()));
    }
    let n = pred.len() as f64;
    let (mut sq, mut abs, mut max) = (0.0, 0.0, 0.0_f64);
    for (p, m) in pred.iter().zip(meas) {
        let e = (p - m).abs();
        sq += e * e;
        abs += e;
        max = max.max(e);
    }
    if !(sq.is_finite() && abs.is_finite()) {
        return Err(Error::NonFinite("voltage error".into()));
    }
    // rounding in the sums must not push the averages above the maximum
    Ok(RunReport {
        rmse: (sq / n).sqrt().min(max),
        mae: (abs / n).min(max),
        max_abs_err: max,
        runtime_per_step: None,
        peak_history_len: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub memory: usize,
    pub scheme: GlScheme,
    /// Each method is run this many times; the fastest run is reported.
    pub repeats: usize,
    pub tol: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            memory: DEFAULT_MEMORY,
            scheme: GlScheme::Explicit,
            repeats: 5,
            tol: DEFAULT_TOL,
        }
    }
}

/// Cost figures of one method, measured from its instrumented buffers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub runtime_per_step: f64,
    pub retained_per_branch: usize,
    /// Errors against the trace voltage, when the trace has one.
    pub vs_measured: Option<RunReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub steps: usize,
    pub memory: usize,
    pub caputo: MethodStats,
    pub gl: MethodStats,
    /// Caputo voltage against G-L voltage.
    pub between: RunReport,
    pub caputo_v: Vec<f64>,
    pub gl_v: Vec<f64>,
}

/// Runs the recursion and the G-L baseline on the same trace.
pub fn benchmark(model: &CellModel, init: &CellState, trace: &Trace, opts: &BenchOptions) -> Result<BenchmarkReport> {
    if trace.len() < 2 {
        return Err(Error::Data("benchmark needs at least two samples".into()));
    }
    let period = trace.period()?;
    let dm = discretize_with_tol(model, period, opts.tol)?;
    let repeats = opts.repeats.max(1);
    let gl_opts = GlOptions {
        memory: opts.memory,
        scheme: opts.scheme,
    };

    let mut caputo = None;
    let mut caputo_time = f64::INFINITY;
    for _ in 0..repeats {
        let (out, stats) = simulate_trace_instrumented(&dm, init, trace)?;
        caputo_time = caputo_time.min(stats.per_step().as_secs_f64());
        caputo = Some((out, stats));
    }
    let mut gl = None;
    let mut gl_time = f64::INFINITY;
    for _ in 0..repeats {
        let run = gl_simulate_trace(model, init, trace, gl_opts)?;
        gl_time = gl_time.min(run.stats.per_step().as_secs_f64());
        gl = Some(run);
    }
    let (c_out, c_stats) = caputo.expect("at least one repeat");
    let g = gl.expect("at least one repeat");

    let vs = |v: &[f64]| trace.v.as_deref().map(|m| evaluate(v, m)).transpose();
    Ok(BenchmarkReport {
        steps: c_stats.steps,
        memory: opts.memory,
        caputo: MethodStats {
            runtime_per_step: caputo_time,
            retained_per_branch: c_stats.retained_per_branch,
            vs_measured: vs(&c_out.v)?,
        },
        gl: MethodStats {
            runtime_per_step: gl_time,
            retained_per_branch: g.stats.retained_per_branch,
            vs_measured: vs(&g.output.v)?,
        },
        between: evaluate(&c_out.v, &g.output.v)?,
        caputo_v: c_out.v,
        gl_v: g.output.v,
    })
}
