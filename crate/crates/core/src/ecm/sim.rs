use std::time::{Duration, Instant};

use super::{analytic_branch_response, CellModel, CellState, DiscreteModel};
use crate::error::{Error, Result};
use crate::sum::CompensatedSum;
use crate::trace::Trace;

/// Simulated trajectory, one row per input sample.
///
/// Row 0 is the initial state observed with `i_0`. Row `k >= 1` holds the
/// state after applying `i_{k-1}` over one period, observed with `i_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub t: Vec<f64>,
    pub i: Vec<f64>,
    pub v: Vec<f64>,
    pub soc: Vec<f64>,
    /// `u[j][k]`: voltage of branch `j` at sample `k`.
    pub u: Vec<Vec<f64>>,
}

impl SimOutput {
    pub(crate) fn with_capacity(n_samples: usize, n_branches: usize) -> Self {
        Self {
            t: Vec::with_capacity(n_samples),
            i: Vec::with_capacity(n_samples),
            v: Vec::with_capacity(n_samples),
            soc: Vec::with_capacity(n_samples),
            u: vec![Vec::with_capacity(n_samples); n_branches],
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// State at sample `k`.
    pub fn state(&self, k: usize) -> CellState {
        CellState {
            soc: self.soc[k],
            u: self.u.iter().map(|u| u[k]).collect(),
        }
    }

    /// Writes `t,i,v,soc,u1..un`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "i".into(), "v".into(), "soc".into()];
        header.extend((1..=self.u.len()).map(|j| format!("u{j}")));
        wtr.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![
                self.t[k].to_string(),
                self.i[k].to_string(),
                self.v[k].to_string(),
                self.soc[k].to_string(),
            ];
            row.extend(self.u.iter().map(|u| u[k].to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Instrumentation gathered during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStats {
    /// Largest number of branch-voltage values held per branch at any time.
    pub retained_per_branch: usize,
    pub steps: usize,
    pub elapsed: Duration,
}

impl SimStats {
    pub fn per_step(&self) -> Duration {
        if self.steps == 0 {
            Duration::ZERO
        } else {
            self.elapsed / self.steps as u32
        }
    }
}

/// Branch voltages kept as a current/next pair.
struct PairBuffer {
    slots: [Vec<f64>; 2],
    current: usize,
    live: [bool; 2],
    peak: usize,
}

impl PairBuffer {
    fn new(init: Vec<f64>) -> Self {
        let n = init.len();
        let mut buf = Self {
            slots: [init, vec![0.0; n]],
            current: 0,
            live: [true, false],
            peak: 0,
        };
        buf.record();
        buf
    }

    fn record(&mut self) {
        self.peak = self.peak.max(self.live.iter().filter(|&&l| l).count());
    }

    fn current(&self) -> &[f64] {
        &self.slots[self.current]
    }

    /// Writes `a u + b ic` into the spare slot and makes it current.
    fn advance(&mut self, a: &[f64], b: &[f64], ic: f64) {
        let (cur, next) = (self.current, 1 - self.current);
        let [s0, s1] = &mut self.slots;
        let (src, dst) = if cur == 0 { (&*s0, s1) } else { (&*s1, s0) };
        for j in 0..a.len() {
            dst[j] = a[j] * src[j] + b[j] * ic;
        }
        self.live[next] = true;
        self.record();
        self.current = next;
    }
}

/// Runs the recursion over a uniformly sampled current trace.
pub fn simulate_trace(dm: &DiscreteModel, init: &CellState, trace: &Trace) -> Result<SimOutput> {
    simulate_trace_instrumented(dm, init, trace).map(|(out, _)| out)
}

/// As [`simulate_trace`], also reporting retained-state counts and timing.
pub fn simulate_trace_instrumented(
    dm: &DiscreteModel,
    init: &CellState,
    trace: &Trace,
) -> Result<(SimOutput, SimStats)> {
    dm.check_state(init)?;
    trace.check_uniform(dm.period())?;
    let model = dm.model();
    let sign = model.sign().factor();
    let n = dm.a().len();
    let mut out = SimOutput::with_capacity(trace.len(), n);
    let mut buf = PairBuffer::new(init.u.clone());
    let mut charge = CompensatedSum::default();
    let started = Instant::now();
    for k in 0..trace.len() {
        if k > 0 {
            let ic = sign * trace.i[k - 1];
            charge.add(ic);
            buf.advance(dm.a(), dm.b(), ic);
        }
        // pure accumulation keeps soc_k - soc_0 = b0 Σ i to rounding
        let soc = init.soc + dm.b0() * charge.value();
        let u = buf.current();
        let ocv = model
            .ocv()
            .eval(soc)
            .map_err(|_| Error::SocExcursion { index: k, soc })?;
        let v = ocv + u.iter().sum::<f64>() + model.r0() * sign * trace.i[k];
        out.t.push(trace.t[k]);
        out.i.push(trace.i[k]);
        out.v.push(v);
        out.soc.push(soc);
        for (col, &x) in out.u.iter_mut().zip(u) {
            col.push(x);
        }
    }
    let stats = SimStats {
        retained_per_branch: buf.peak,
        steps: trace.len().saturating_sub(1),
        elapsed: started.elapsed(),
    };
    Ok((out, stats))
}

/// Piecewise closed-form simulation. On every run of constant current the
/// branch voltages follow the exact response measured from the start of the
/// run, so a single pulse from a relaxed cell and the rest after it are
/// reproduced without the per-sample restart of [`simulate_trace`]. Rows
/// follow the same layout and SOC bookkeeping.
pub fn simulate_trace_analytic(model: &CellModel, init: &CellState, trace: &Trace, tol: f64) -> Result<SimOutput> {
    let n = model.n_branches();
    if init.u.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: init.u.len(),
        });
    }
    let period = if trace.len() >= 2 { trace.period()? } else { 1.0 };
    trace.check_uniform(period)?;
    let sign = model.sign().factor();
    let b0 = period / model.qn();
    let mut out = SimOutput::with_capacity(trace.len(), n);
    let mut u = init.u.clone();
    let mut u_start = init.u.clone();
    let mut run_start = 0;
    let mut charge = CompensatedSum::default();
    for k in 0..trace.len() {
        if k > 0 {
            let ic = sign * trace.i[k - 1];
            charge.add(ic);
            let dt = trace.t[k] - trace.t[run_start];
            for ((uj, &u0), br) in u.iter_mut().zip(&u_start).zip(model.branches()) {
                *uj = if u0 == 0.0 && ic == 0.0 {
                    0.0
                } else {
                    analytic_branch_response(br, u0, ic, dt, tol)?
                };
            }
            if trace.i[k] != trace.i[k - 1] {
                run_start = k;
                u_start.clone_from(&u);
            }
        }
        let soc = init.soc + b0 * charge.value();
        let ocv = model
            .ocv()
            .eval(soc)
            .map_err(|_| Error::SocExcursion { index: k, soc })?;
        out.t.push(trace.t[k]);
        out.i.push(trace.i[k]);
        out.v.push(ocv + u.iter().sum::<f64>() + model.r0() * sign * trace.i[k]);
        out.soc.push(soc);
        for (col, &x) in out.u.iter_mut().zip(&u) {
            col.push(x);
        }
    }
    Ok(out)
}
