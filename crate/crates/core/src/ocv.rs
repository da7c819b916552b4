//! Open-circuit voltage as a function of state of charge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points in a table produced by [`build_ocv`].
pub const OCV_GRID_POINTS: usize = 201;

/// Piecewise-linear OCV(SOC) curve with strictly increasing SOC and voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct OcvTable {
    soc: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    soc: Vec<f64>,
    v: Vec<f64>,
}

impl TryFrom<RawTable> for OcvTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        OcvTable::new(raw.soc, raw.v)
    }
}

impl From<OcvTable> for RawTable {
    fn from(t: OcvTable) -> Self {
        RawTable { soc: t.soc, v: t.v }
    }
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] > w[0])
}

impl OcvTable {
    pub fn new(soc: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if soc.len() != v.len() {
            return Err(Error::Dimension {
                expected: soc.len(),
                got: v.len(),
            });
        }
        if soc.len() < 2 {
            return Err(Error::domain("an OCV table needs at least two points"));
        }
        if soc.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::domain("OCV table contains non-finite values"));
        }
        if !strictly_increasing(&soc) {
            return Err(Error::domain("OCV table SOC grid must be strictly increasing"));
        }
        if soc[0] < 0.0 || soc[soc.len() - 1] > 1.0 {
            return Err(Error::domain("OCV table SOC grid must lie within [0, 1]"));
        }
        if !strictly_increasing(&v) {
            return Err(Error::domain("OCV must increase strictly with SOC"));
        }
        Ok(Self { soc, v })
    }

    pub fn soc_grid(&self) -> &[f64] {
        &self.soc
    }

    pub fn v_grid(&self) -> &[f64] {
        &self.v
    }

    pub fn soc_range(&self) -> (f64, f64) {
        (self.soc[0], self.soc[self.soc.len() - 1])
    }

    pub fn contains(&self, soc: f64) -> bool {
        let (lo, hi) = self.soc_range();
        soc >= lo && soc <= hi
    }

    /// Linear interpolation; no extrapolation outside the grid.
    pub fn eval(&self, soc: f64) -> Result<f64> {
        let (lo, hi) = self.soc_range();
        if !(soc >= lo && soc <= hi) {
            return Err(Error::OutOfRange {
                what: "soc",
                value: soc,
                lo,
                hi,
            });
        }
        // index of the first grid point strictly above soc
        let upper = self.soc.partition_point(|&s| s <= soc);
        if upper == 0 {
            return Ok(self.v[0]);
        }
        if upper == self.soc.len() {
            return Ok(self.v[self.v.len() - 1]);
        }
        let (s0, s1) = (self.soc[upper - 1], self.soc[upper]);
        let (v0, v1) = (self.v[upper - 1], self.v[upper]);
        if soc == s0 {
            return Ok(v0);
        }
        let w = (soc - s0) / (s1 - s0);
        Ok(v0 + w * (v1 - v0))
    }

    /// Reads a `soc,v` CSV file.
    pub fn from_csv_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        Self::from_csv_reader(&mut rdr)
    }

    pub fn from_csv_reader<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> Result<Self> {
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Data(format!("OCV CSV is missing the `{name}` column")))
        };
        let (is, iv) = (col("soc")?, col("v")?);
        let mut soc = Vec::new();
        let mut v = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            soc.push(parse_field(&rec, is, row)?);
            v.push(parse_field(&rec, iv, row)?);
        }
        Self::new(soc, v)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["soc", "v"])?;
        for (s, v) in self.soc.iter().zip(&self.v) {
            wtr.write_record([s.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn parse_field(rec: &csv::StringRecord, idx: usize, row: usize) -> Result<f64> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::Data(format!("row {}: missing column {idx}", row + 1)))?;
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("row {}: cannot parse `{raw}` as a number", row + 1)))
}

/// Builds the OCV curve as the pointwise average of a slow-charge and a
/// slow-discharge curve, both resampled onto a uniform 201-point SOC grid
/// spanning their common range.
pub fn build_ocv(charge: &[(f64, f64)], discharge: &[(f64, f64)]) -> Result<OcvTable> {
    let c = curve_from_pairs(charge, "charge")?;
    let d = curve_from_pairs(discharge, "discharge")?;
    let (c_lo, c_hi) = c.soc_range();
    let (d_lo, d_hi) = d.soc_range();
    let lo = c_lo.max(d_lo);
    let hi = c_hi.min(d_hi);
    if !(hi > lo) {
        return Err(Error::domain(format!(
            "charge [{c_lo}, {c_hi}] and discharge [{d_lo}, {d_hi}] SOC ranges do not overlap"
        )));
    }
    let n = OCV_GRID_POINTS;
    let mut soc = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for k in 0..n {
        let s = if k == n - 1 {
            hi
        } else {
            lo + (hi - lo) * k as f64 / (n - 1) as f64
        };
        soc.push(s);
        v.push(0.5 * (c.eval(s)? + d.eval(s)?));
    }
    OcvTable::new(soc, v)
}

fn curve_from_pairs(points: &[(f64, f64)], label: &str) -> Result<OcvTable> {
    let (soc, v): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    OcvTable::new(soc, v).map_err(|e| Error::domain(format!("{label} curve: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> OcvTable {
        OcvTable::new(vec![0.0, 0.5, 1.0], vec![3.0, 3.6, 4.2]).unwrap()
    }

    #[test]
    fn grid_points_and_midpoints() {
        let t = table();
        assert_eq!(t.eval(0.5).unwrap(), 3.6);
        assert_eq!(t.eval(1.0).unwrap(), 4.2);
        assert_eq!(t.eval(0.0).unwrap(), 3.0);
        assert!((t.eval(0.25).unwrap() - 3.3).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let t = table();
        assert!(matches!(t.eval(-1e-9), Err(Error::OutOfRange { .. })));
        assert!(matches!(t.eval(1.0 + 1e-12), Err(Error::OutOfRange { .. })));
        assert!(t.eval(f64::NAN).is_err());
    }

    #[test]
    fn rejects_non_monotone() {
        assert!(OcvTable::new(vec![0.0, 0.5, 0.4], vec![3.0, 3.5, 3.6]).is_err());
        assert!(OcvTable::new(vec![0.0, 0.5, 1.0], vec![3.0, 3.5, 3.5]).is_err());
        assert!(OcvTable::new(vec![0.0, 1.0], vec![3.0]).is_err());
    }

    #[test]
    fn identical_curves_average_to_themselves() {
        let pts: Vec<(f64, f64)> = (0..=10).map(|k| (k as f64 / 10.0, 3.0 + 0.1 * k as f64)).collect();
        let t = build_ocv(&pts, &pts).unwrap();
        assert_eq!(t.soc_grid().len(), OCV_GRID_POINTS);
        for &s in t.soc_grid() {
            assert!((t.eval(s).unwrap() - (3.0 + s)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_hysteresis_gives_midline() {
        let h = 0.015;
        let up: Vec<(f64, f64)> = (0..=20).map(|k| (k as f64 / 20.0, 3.2 + 0.9 * k as f64 / 20.0 + h)).collect();
        let down: Vec<(f64, f64)> = up.iter().map(|&(s, v)| (s, v - 2.0 * h)).collect();
        let t = build_ocv(&up, &down).unwrap();
        for &s in t.soc_grid() {
            assert!((t.eval(s).unwrap() - (3.2 + 0.9 * s)).abs() < 1e-12);
        }
    }

    #[test]
    fn polynomial_curves_average_on_shared_grid() {
        // 1001-point inputs share every 5th point with the 201-point output grid,
        // so the output must equal the closed-form average at each grid point
        let fc = |s: f64| 3.3 + 0.7 * s - 0.2 * s * s + 0.25 * s.powi(3) + 0.02;
        let fd = |s: f64| 3.28 + 0.74 * s - 0.3 * s * s + 0.28 * s.powi(3);
        let grid: Vec<f64> = (0..=1000).map(|k| k as f64 / 1000.0).collect();
        let c: Vec<(f64, f64)> = grid.iter().map(|&s| (s, fc(s))).collect();
        let d: Vec<(f64, f64)> = grid.iter().map(|&s| (s, fd(s))).collect();
        let t = build_ocv(&c, &d).unwrap();
        for &s in t.soc_grid() {
            let expect = 0.5 * (fc(s) + fd(s));
            assert!((t.eval(s).unwrap() - expect).abs() < 1e-12, "soc {s}");
        }
        // between grid points the chord error is bounded by h^2/8 max|f''|
        let h = 1.0 / 200.0;
        let bound = h * h / 8.0 * 1.5;
        for k in 0..=4000 {
            let s = k as f64 / 4000.0;
            let expect = 0.5 * (fc(s) + fd(s));
            assert!((t.eval(s).unwrap() - expect).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn non_overlapping_ranges() {
        let a = [(0.0, 3.0), (0.4, 3.5)];
        let b = [(0.5, 3.6), (1.0, 4.0)];
        assert!(matches!(build_ocv(&a, &b), Err(Error::Domain(_))));
    }

    #[test]
    fn csv_round_trip() {
        let t = table();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(OcvTable::from_csv_reader(&mut rdr).unwrap(), t);
    }

    proptest! {
        #[test]
        fn eval_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let t = table();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(t.eval(lo).unwrap() <= t.eval(hi).unwrap());
        }

        #[test]
        fn average_within_envelope(offset in 0.0f64..0.05, slope in 0.2f64..1.5) {
            let c: Vec<(f64, f64)> = (0..=30).map(|k| { let x = k as f64 / 30.0; (x, 3.0 + slope * x + offset) }).collect();
            let d: Vec<(f64, f64)> = (0..=17).map(|k| { let x = k as f64 / 17.0; (x, 3.0 + slope * x * x.sqrt() - offset) }).collect();
            let t = build_ocv(&c, &d).unwrap();
            let ct = curve_from_pairs(&c, "c").unwrap();
            let dt = curve_from_pairs(&d, "d").unwrap();
            for &s in t.soc_grid() {
                let (cv, dv) = (ct.eval(s).unwrap(), dt.eval(s).unwrap());
                let v = t.eval(s).unwrap();
                prop_assert!(v <= cv.max(dv) + 1e-15 && v >= cv.min(dv) - 1e-15);
            }
        }
    }
}
