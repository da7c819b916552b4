//! Model documents: a cell model plus its sampling period and, after
//! identification, the per-segment fits it came from.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ecm::{CellModel, FractionalBranch};
use crate::error::{Error, Result};
use crate::ident::{BranchParams, FitResult, PulseSegment};

/// Fit of one HPPC segment, as stored in a model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub index: usize,
    pub soc_j: f64,
    pub r0: f64,
    pub params: Vec<BranchParams>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SegmentFit {
    pub fn new(index: usize, seg: &PulseSegment, fit: &FitResult) -> Self {
        Self {
            index,
            soc_j: seg.soc_j,
            r0: fit.r0,
            params: fit.params.clone(),
            cost: fit.cost,
            iterations: fit.iterations,
            converged: fit.converged,
        }
    }
}

/// `{R0, Qn, T, sign, branches, ocv, segments}`; `T` and `segments` are
/// optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(flatten)]
    pub model: CellModel,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<SegmentFit>,
}

impl ModelDocument {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// The model to simulate from `soc`: the top-level model when there are
    /// no segment fits, otherwise one built from the fits.
    pub fn model_at(&self, soc: f64, selection: Selection) -> Result<CellModel> {
        if self.segments.is_empty() {
            return Ok(self.model.clone());
        }
        let fits = &self.segments;
        let (r0, params) = match selection {
            Selection::Nearest => {
                let best = fits
                    .iter()
                    .min_by(|a, b| (a.soc_j - soc).abs().total_cmp(&(b.soc_j - soc).abs()))
                    .expect("non-empty");
                (best.r0, best.params.clone())
            }
            Selection::Interpolate => interpolate(fits, soc)?,
        };
        let branches = params
            .iter()
            .map(|p| p.to_branch())
            .collect::<Result<Vec<FractionalBranch>>>()?;
        CellModel::new_sorted(r0.max(0.0), branches, self.model.qn(), self.model.ocv().clone(), self.model.sign())
    }
}

/// How a model is picked from per-segment fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// The segment whose pre-pulse SOC is closest.
    #[default]
    Nearest,
    /// Linear interpolation of every parameter between the two segments
    /// bracketing the SOC, clamped at the ends.
    Interpolate,
}

fn interpolate(fits: &[SegmentFit], soc: f64) -> Result<(f64, Vec<BranchParams>)> {
    let n = fits[0].params.len();
    if fits.iter().any(|f| f.params.len() != n) {
        return Err(Error::Data("segments have different branch counts; cannot interpolate".into()));
    }
    let mut sorted: Vec<&SegmentFit> = fits.iter().collect();
    sorted.sort_by(|a, b| a.soc_j.total_cmp(&b.soc_j));
    let hi = sorted.partition_point(|f| f.soc_j < soc);
    let (a, b) = if hi == 0 {
        (sorted[0], sorted[0])
    } else if hi == sorted.len() {
        (sorted[hi - 1], sorted[hi - 1])
    } else {
        (sorted[hi - 1], sorted[hi])
    };
    let w = if b.soc_j > a.soc_j { (soc - a.soc_j) / (b.soc_j - a.soc_j) } else { 0.0 };
    let lerp = |x: f64, y: f64| x + w * (y - x);
    let params = a
        .params
        .iter()
        .zip(&b.params)
        .map(|(p, q)| BranchParams {
            r: lerp(p.r, q.r),
            tau: lerp(p.tau, q.tau),
            alpha: lerp(p.alpha, q.alpha),
        })
        .collect();
    Ok((lerp(a.r0, b.r0), params))
}

/// Reads one named numeric column from a CSV file with a header row.
pub fn read_csv_column(path: impl AsRef<Path>, name: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Data(format!("CSV has no `{name}` column")))?;
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec?;
            let field = rec.get(col).unwrap_or("").trim();
            field
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("row {}: `{name}` value {field:?} is not a number", row + 1)))
        })
        .collect()
}
