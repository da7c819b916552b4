use serde::{Deserialize, Serialize};

use super::PulseSegment;
use crate::ecm::CurrentSign;
use crate::error::{Error, Result};
use crate::sum::CompensatedSum;
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    /// SOC at the first sample.
    pub soc0: f64,
    /// Capacity in coulombs.
    pub qn: f64,
    pub sign: CurrentSign,
    /// Samples with |i| at or below this count as rest. Defaults to
    /// `1e-3 * threshold` when `None`.
    pub rest_tol: Option<f64>,
}

/// A pulse that could not be turned into a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentIssue {
    pub pulse_start: usize,
    pub pulse_end: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Segmentation {
    pub segments: Vec<PulseSegment>,
    pub rejected: Vec<SegmentIssue>,
}

/// Splits an HPPC trace into pulses (runs with `|i| > threshold`) and the
/// rest that follows each one.
///
/// Edge voltages are the samples on either side of each current step:
/// `U_T1 = v[start-1]`, `U_T2 = v[start]`, `U_T3 = v[end]`, `U_T4 = v[end+1]`.
/// The relaxation runs from `end+1` up to the first sample that is not at rest.
pub fn segment_hppc(trace: &Trace, threshold: f64, opts: &SegmentOptions) -> Result<Segmentation> {
    let v = trace
        .v
        .as_ref()
        .ok_or_else(|| Error::Data("HPPC segmentation needs a voltage column".into()))?;
    if !(threshold > 0.0) {
        return Err(Error::domain(format!("pulse threshold must be positive, got {threshold}")));
    }
    if !(opts.qn > 0.0) {
        return Err(Error::domain("capacity must be positive"));
    }
    let n = trace.len();
    if n < 2 {
        return Ok(Segmentation::default());
    }
    let period = trace.period()?;
    let rest_tol = opts.rest_tol.unwrap_or(1e-3 * threshold);
    let sign = opts.sign.factor();
    let b0 = period / opts.qn;

    // soc[k]: state of charge at sample k, by pure accumulation
    let mut soc = Vec::with_capacity(n);
    let mut acc = CompensatedSum::default();
    for k in 0..n {
        soc.push(opts.soc0 + b0 * acc.value());
        acc.add(sign * trace.i[k]);
    }

    let in_pulse = |k: usize| trace.i[k].abs() > threshold;
    let mut runs = Vec::new();
    let mut k = 0;
    while k < n {
        if in_pulse(k) {
            let start = k;
            while k + 1 < n && in_pulse(k + 1) {
                k += 1;
            }
            runs.push((start, k));
        }
        k += 1;
    }

    let mut out = Segmentation::default();
    for (idx, &(start, end)) in runs.iter().enumerate() {
        let reject = |reason: String| SegmentIssue {
            pulse_start: start,
            pulse_end: end,
            reason,
        };
        if start == 0 {
            out.rejected.push(reject("pulse starts at the first sample; no pre-pulse voltage".into()));
            continue;
        }
        if end + 1 >= n {
            out.rejected.push(reject("pulse runs to the end of the trace; no relaxation".into()));
            continue;
        }
        let first = trace.i[start].signum();
        if trace.i[start..=end].iter().any(|i| i.signum() != first) {
            out.rejected.push(reject("current changes sign inside the pulse (overlapping pulses)".into()));
            continue;
        }
        let next_pulse = runs.get(idx + 1).map_or(n, |r| r.0);
        let r0 = end + 1;
        let mut r1 = r0;
        while r1 < next_pulse && trace.i[r1].abs() <= rest_tol {
            r1 += 1;
        }
        if r1 - r0 < 2 {
            out.rejected.push(reject(format!(
                "relaxation after the pulse has {} rest samples",
                r1 - r0
            )));
            continue;
        }
        let i_pulse = trace.i[start..=end].iter().map(|i| i.abs()).sum::<f64>() / (end - start + 1) as f64;
        out.segments.push(PulseSegment {
            soc_j: soc[start],
            soc_relax: soc[r0],
            i_pulse,
            polarity: sign * first,
            pulse_duration: trace.t[r0] - trace.t[start],
            u_t1: v[start - 1],
            u_t2: v[start],
            u_t3: v[end],
            u_t4: v[r0],
            relax_t: trace.t[r0..r1].iter().map(|t| t - trace.t[r0]).collect(),
            relax_v: v[r0..r1].to_vec(),
            pulse_start: start,
            pulse_end: end,
        });
    }
    Ok(out)
}
