//! Synthetic ground-truth datasets from a known cell model: HPPC pulse
//! trains, constant-current runs and drive cycles, with seeded voltage noise
//! and a sidecar holding every hidden state.

mod cycle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ecm::{
    discretize_with_tol, simulate_trace, simulate_trace_analytic, CellModel, CellState, SimOutput,
};
use crate::error::{Error, Result};
use crate::gl::{gl_simulate_trace, GlOptions, DEFAULT_MEMORY};
use crate::ident::PulseSegment;
use crate::mlfunc::DEFAULT_TOL;
use crate::ocv::{OcvTable, OCV_GRID_POINTS};
use crate::sum::CompensatedSum;
use crate::trace::Trace;

pub use cycle::{crest_factor, resample_profile, urban_cycle, TARGET_CREST};

/// How the truth voltage is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenMethod {
    /// Two-coefficient recursion, one restart per sample.
    #[default]
    Caputo,
    /// Grünwald–Letnikov with `gl_memory` past samples.
    Gl,
    /// Closed form from the start of each constant-current run.
    AnalyticPerInterval,
}

/// Pulse train at a list of SOC setpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HppcSpec {
    /// Trace current during every pulse (A), in the model's sign convention.
    pub pulse_current: f64,
    pub pulse_duration: f64,
    /// Rest recorded after each pulse (s).
    pub relax_duration: f64,
    pub soc_steps: Vec<f64>,
    /// Magnitude of the current that moves the cell between setpoints.
    /// Defaults to a third of the pulse magnitude.
    #[serde(default)]
    pub move_current: Option<f64>,
    /// Rest before each pulse (s). Defaults to `relax_duration`.
    #[serde(default)]
    pub settle: Option<f64>,
    /// Zero the branch voltages at the last sample before each pulse, as if
    /// the rest had been arbitrarily long. Fractional branches only decay as
    /// a power law, so without this every pulse inherits a residual.
    #[serde(default = "default_true")]
    pub relaxed_start: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    Hppc(HppcSpec),
    ConstantCurrent {
        current: f64,
        duration: f64,
        /// Zero-current lead-in (s).
        #[serde(default)]
        rest_before: f64,
    },
    DriveCycle {
        /// `(t, i)` template, repeated as needed. The bundled urban surrogate
        /// is used when absent.
        #[serde(default)]
        profile: Option<Vec<(f64, f64)>>,
        samples: usize,
        /// Peak magnitude of the bundled surrogate (A).
        #[serde(default = "default_peak")]
        peak_current: f64,
    },
}

fn default_peak() -> f64 {
    100.0
}

fn default_memory() -> usize {
    DEFAULT_MEMORY
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    #[serde(flatten)]
    pub protocol: Protocol,
    /// Sampling period (s).
    #[serde(rename = "T")]
    pub period: f64,
    /// SOC at the first sample.
    pub soc0: f64,
    /// Standard deviation of the additive voltage noise (V).
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: GenMethod,
    #[serde(default = "default_memory")]
    pub gl_memory: usize,
    /// Mittag-Leffler tolerance for the truth computation.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl ProtocolSpec {
    pub fn validate(&self, ocv: &OcvTable) -> Result<()> {
        positive("sampling period", self.period)?;
        if !ocv.contains(self.soc0) {
            return Err(Error::domain(format!("soc0 = {} is outside the OCV table", self.soc0)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::domain(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        positive("tolerance", self.tol)?;
        if self.gl_memory == 0 {
            return Err(Error::domain("G-L memory must be at least 1"));
        }
        match &self.protocol {
            Protocol::Hppc(h) => {
                positive("pulse duration", h.pulse_duration)?;
                positive("relax duration", h.relax_duration)?;
                if h.pulse_current == 0.0 || !h.pulse_current.is_finite() {
                    return Err(Error::domain("pulse current must be non-zero"));
                }
                if let Some(m) = h.move_current {
                    positive("move current", m)?;
                }
                if let Some(s) = h.settle {
                    positive("settle time", s)?;
                }
                if h.soc_steps.is_empty() {
                    return Err(Error::domain("HPPC needs at least one SOC step"));
                }
                if let Some(s) = h.soc_steps.iter().find(|s| !ocv.contains(**s)) {
                    return Err(Error::domain(format!("SOC step {s} is outside the OCV table")));
                }
            }
            Protocol::ConstantCurrent {
                current,
                duration,
                rest_before,
            } => {
                positive("duration", *duration)?;
                if !current.is_finite() || !(*rest_before >= 0.0) {
                    return Err(Error::domain("constant-current protocol needs a finite current and rest >= 0"));
                }
            }
            Protocol::DriveCycle {
                samples, peak_current, ..
            } => {
                if *samples == 0 {
                    return Err(Error::domain("a drive cycle needs at least one sample"));
                }
                positive("peak current", *peak_current)?;
            }
        }
        Ok(())
    }
}

fn positive(what: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must be positive, got {x}")))
    }
}

fn samples_for(duration: f64, period: f64) -> usize {
    ((duration / period).round() as usize).max(1)
}

/// First and last sample of one generated pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseMark {
    pub start: usize,
    pub end: usize,
    /// Setpoint the protocol aimed for.
    pub setpoint: f64,
}

/// Terminal voltage on both sides of a current step at sample `index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub index: usize,
    pub t: f64,
    pub i_before: f64,
    pub i_after: f64,
    /// Voltage with the old current still flowing.
    pub v_before: f64,
    pub v_after: f64,
}

/// Everything the generator knew: parameters, protocol and hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub model: CellModel,
    pub spec: ProtocolSpec,
    pub soc: Vec<f64>,
    /// `u[j][k]`: branch `j` at sample `k`.
    pub u: Vec<Vec<f64>>,
    /// Samples at which the branch voltages were zeroed.
    pub resets: Vec<usize>,
    pub edges: Vec<Edge>,
    pub pulses: Vec<PulseMark>,
}

impl Truth {
    /// Replaces the sampled edge voltages of `seg` with the instantaneous
    /// values on either side of each current step.
    pub fn exact_edges(&self, seg: &PulseSegment) -> Result<PulseSegment> {
        let find = |index: usize| {
            self.edges
                .iter()
                .find(|e| e.index == index)
                .ok_or_else(|| Error::Data(format!("no current step recorded at sample {index}")))
        };
        let rise = find(seg.pulse_start)?;
        let fall = find(seg.pulse_end + 1)?;
        Ok(PulseSegment {
            u_t1: rise.v_before,
            u_t2: rise.v_after,
            u_t3: fall.v_before,
            u_t4: fall.v_after,
            ..seg.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Current and noisy voltage.
    pub trace: Trace,
    pub v_true: Vec<f64>,
    pub truth: Truth,
}

impl Generated {
    /// The same run with a different noise realization, identical to
    /// regenerating with `noise_sigma = sigma` and `seed = seed`.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Result<Generated> {
        let mut out = self.clone();
        out.trace.v = Some(add_noise(&self.v_true, sigma, seed)?);
        out.truth.spec.noise_sigma = sigma;
        out.truth.spec.seed = seed;
        Ok(out)
    }

    /// Writes `t,i,v,v_true` with `v` the noisy voltage.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "i", "v", "v_true"])?;
        let v = self.trace.v.as_deref().unwrap_or(&self.v_true);
        let rows = self.trace.t.iter().zip(&self.trace.i).zip(v).zip(&self.v_true);
        for (((t, i), v), v_true) in rows {
            wtr.write_record([t.to_string(), i.to_string(), v.to_string(), v_true.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

struct Profile {
    i: Vec<f64>,
    resets: Vec<usize>,
    pulses: Vec<PulseMark>,
}

fn build_profile(model: &CellModel, spec: &ProtocolSpec) -> Result<Profile> {
    let period = spec.period;
    let mut p = Profile {
        i: Vec::new(),
        resets: Vec::new(),
        pulses: Vec::new(),
    };
    match &spec.protocol {
        Protocol::Hppc(h) => {
            let sign = model.sign().factor();
            let b0 = period / model.qn();
            let move_mag = h.move_current.unwrap_or(h.pulse_current.abs() / 3.0);
            let n_settle = samples_for(h.settle.unwrap_or(h.relax_duration), period);
            let n_pulse = samples_for(h.pulse_duration, period);
            let n_relax = samples_for(h.relax_duration, period);
            let mut soc = spec.soc0;
            for &target in &h.soc_steps {
                let gap = target - soc;
                let n_move = (gap.abs() / (b0 * move_mag)).round() as usize;
                if n_move > 0 {
                    let ic = move_mag * gap.signum();
                    p.i.extend(std::iter::repeat_n(sign * ic, n_move));
                    soc += n_move as f64 * b0 * ic;
                }
                p.i.extend(std::iter::repeat_n(0.0, n_settle));
                if h.relaxed_start {
                    p.resets.push(p.i.len() - 1);
                }
                let start = p.i.len();
                p.i.extend(std::iter::repeat_n(h.pulse_current, n_pulse));
                soc += n_pulse as f64 * b0 * sign * h.pulse_current;
                p.pulses.push(PulseMark {
                    start,
                    end: p.i.len() - 1,
                    setpoint: target,
                });
                p.i.extend(std::iter::repeat_n(0.0, n_relax));
            }
        }
        Protocol::ConstantCurrent {
            current,
            duration,
            rest_before,
        } => {
            let lead = if *rest_before > 0.0 { samples_for(*rest_before, period) } else { 0 };
            p.i.extend(std::iter::repeat_n(0.0, lead));
            p.i.extend(std::iter::repeat_n(*current, samples_for(*duration, period) + 1));
        }
        Protocol::DriveCycle {
            profile,
            samples,
            peak_current,
        } => {
            p.i = match profile {
                Some(tpl) => resample_profile(tpl, period, *samples)?,
                None => urban_cycle(*samples, *peak_current)?,
            };
        }
    }
    Ok(p)
}

/// Builds the current profile of `spec`, simulates it with `model` and adds
/// seeded Gaussian noise to the voltage.
///
/// The run starts from a relaxed cell at `spec.soc0`. SOC leaving the OCV
/// table aborts with the offending sample index.
pub fn generate(model: &CellModel, spec: &ProtocolSpec) -> Result<Generated> {
    spec.validate(model.ocv())?;
    let profile = build_profile(model, spec)?;
    let full = Trace::uniform(0.0, spec.period, profile.i);
    let n = full.len();
    let nb = model.n_branches();
    let sign = model.sign().factor();
    let b0 = spec.period / model.qn();
    let dm = match spec.method {
        GenMethod::Caputo => Some(discretize_with_tol(model, spec.period, spec.tol)?),
        _ => None,
    };

    let mut bounds = vec![0];
    bounds.extend(profile.resets.iter().copied().filter(|&r| r > 0));
    bounds.push(n);
    bounds.dedup();
    let mut out = SimOutput {
        t: Vec::with_capacity(n),
        i: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        soc: Vec::with_capacity(n),
        u: vec![Vec::with_capacity(n); nb],
    };
    let mut charge = CompensatedSum::default();
    for w in bounds.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let block = Trace {
            t: full.t[lo..hi].to_vec(),
            i: full.i[lo..hi].to_vec(),
            v: None,
        };
        let init = CellState::relaxed(spec.soc0 + b0 * charge.value(), nb);
        let sim = match spec.method {
            GenMethod::Caputo => simulate_trace(dm.as_ref().expect("discretized above"), &init, &block),
            GenMethod::Gl => gl_simulate_trace(
                model,
                &init,
                &block,
                GlOptions {
                    memory: spec.gl_memory,
                    ..GlOptions::default()
                },
            )
            .map(|run| run.output),
            GenMethod::AnalyticPerInterval => simulate_trace_analytic(model, &init, &block, spec.tol),
        }
        .map_err(|e| match e {
            Error::SocExcursion { index, soc } => Error::SocExcursion { index: index + lo, soc },
            e => e,
        })?;
        out.t.extend(sim.t);
        out.i.extend(sim.i);
        out.v.extend(sim.v);
        out.soc.extend(sim.soc);
        for (dst, src) in out.u.iter_mut().zip(sim.u) {
            dst.extend(src);
        }
        for &i in &full.i[lo..hi] {
            charge.add(sign * i);
        }
    }

    let mut edges = Vec::new();
    for k in 1..n {
        if full.i[k] != full.i[k - 1] {
            let usum: f64 = out.u.iter().map(|u| u[k]).sum();
            let v_before = model.ocv().eval(out.soc[k])? + usum + model.r0() * sign * full.i[k - 1];
            edges.push(Edge {
                index: k,
                t: full.t[k],
                i_before: full.i[k - 1],
                i_after: full.i[k],
                v_before,
                v_after: out.v[k],
            });
        }
    }

    let v_true = out.v;
    let v_noisy = add_noise(&v_true, spec.noise_sigma, spec.seed)?;
    Ok(Generated {
        trace: Trace {
            t: full.t,
            i: full.i,
            v: Some(v_noisy),
        },
        v_true,
        truth: Truth {
            model: model.clone(),
            spec: spec.clone(),
            soc: out.soc,
            u: out.u,
            resets: profile.resets,
            edges,
            pulses: profile.pulses,
        },
    })
}

/// `v` plus seeded zero-mean Gaussian noise of standard deviation `sigma`.
/// The same `(sigma, seed)` always gives the same realization.
pub fn add_noise(v: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(v.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::domain(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(v.iter().map(|x| x + normal.sample(&mut rng)).collect())
}

/// Smooth, strictly increasing OCV(SOC) of an NMC-like cell.
pub fn reference_ocv_voltage(soc: f64) -> f64 {
    3.45 + 0.65 * soc + 0.06 * ((soc - 0.55) / 0.08).tanh() - 0.25 * (-14.0 * soc).exp()
}

/// [`reference_ocv_voltage`] tabulated on the standard 201-point grid.
pub fn reference_ocv() -> OcvTable {
    let soc: Vec<f64> = (0..OCV_GRID_POINTS)
        .map(|k| k as f64 / (OCV_GRID_POINTS - 1) as f64)
        .collect();
    let v = soc.iter().map(|&s| reference_ocv_voltage(s)).collect();
    OcvTable::new(soc, v).expect("reference curve is strictly increasing")
}

/// `(soc, v)` points of one OCV curve.
pub type Curve = Vec<(f64, f64)>;

/// Slow charge and discharge curves around [`reference_ocv_voltage`] with a
/// symmetric hysteresis of `h` volts, sampled at `points` SOC values.
pub fn ocv_curves(points: usize, h: f64) -> (Curve, Curve) {
    let grid = (0..points).map(|k| k as f64 / (points.max(2) - 1) as f64);
    let charge = grid.clone().map(|s| (s, reference_ocv_voltage(s) + h)).collect();
    let discharge = grid.map(|s| (s, reference_ocv_voltage(s) - h)).collect();
    (charge, discharge)
}
