//! Uniformly sampled current/voltage traces and their CSV form.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ocv::parse_field;

/// Relative tolerance on the sampling period.
pub const SAMPLING_REL_TOL: f64 = 1e-6;

/// Time, current and (optionally) measured terminal voltage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub t: Vec<f64>,
    pub i: Vec<f64>,
    pub v: Option<Vec<f64>>,
}

impl Trace {
    pub fn new(t: Vec<f64>, i: Vec<f64>, v: Option<Vec<f64>>) -> Result<Self> {
        if t.len() != i.len() {
            return Err(Error::Dimension {
                expected: t.len(),
                got: i.len(),
            });
        }
        if let Some(v) = &v {
            if v.len() != t.len() {
                return Err(Error::Dimension {
                    expected: t.len(),
                    got: v.len(),
                });
            }
        }
        if t.iter().chain(&i).any(|x| !x.is_finite()) {
            return Err(Error::Data("trace contains non-finite time or current".into()));
        }
        Ok(Self { t, i, v })
    }

    /// Uniform grid `t_k = t0 + k*period`.
    pub fn uniform(t0: f64, period: f64, i: Vec<f64>) -> Self {
        let t = (0..i.len()).map(|k| t0 + k as f64 * period).collect();
        Self { t, i, v: None }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Checks every step against `period` within [`SAMPLING_REL_TOL`].
    pub fn check_uniform(&self, period: f64) -> Result<()> {
        for (k, w) in self.t.windows(2).enumerate() {
            let step = w[1] - w[0];
            if !((step - period).abs() <= SAMPLING_REL_TOL * period) {
                return Err(Error::NonUniform {
                    index: k + 1,
                    step,
                    expected: period,
                });
            }
        }
        Ok(())
    }

    /// Sampling period inferred from the first step, then checked on all steps.
    pub fn period(&self) -> Result<f64> {
        if self.t.len() < 2 {
            return Err(Error::Data("a trace needs at least two samples to define its period".into()));
        }
        let period = self.t[1] - self.t[0];
        if !(period > 0.0) {
            return Err(Error::NonUniform {
                index: 1,
                step: period,
                expected: period,
            });
        }
        self.check_uniform(period)?;
        Ok(period)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        Self::from_csv_reader(&mut rdr)
    }

    /// Reads `t,i[,v]`; any other columns are ignored.
    pub fn from_csv_reader<R: std::io::Read>(rdr: &mut csv::Reader<R>) -> Result<Self> {
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let it = find("t").ok_or_else(|| Error::Data("trace CSV is missing the `t` column".into()))?;
        let ii = find("i").ok_or_else(|| Error::Data("trace CSV is missing the `i` column".into()))?;
        let iv = find("v");
        let (mut t, mut i) = (Vec::new(), Vec::new());
        let mut v = iv.map(|_| Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            t.push(parse_field(&rec, it, row)?);
            i.push(parse_field(&rec, ii, row)?);
            if let (Some(col), Some(v)) = (iv, v.as_mut()) {
                v.push(parse_field(&rec, col, row)?);
            }
        }
        Self::new(t, i, v)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        match &self.v {
            Some(v) => {
                wtr.write_record(["t", "i", "v"])?;
                for ((t, i), v) in self.t.iter().zip(&self.i).zip(v) {
                    wtr.write_record([t.to_string(), i.to_string(), v.to_string()])?;
                }
            }
            None => {
                wtr.write_record(["t", "i"])?;
                for k in 0..self.len() {
                    wtr.write_record([self.t[k].to_string(), self.i[k].to_string()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_extra_columns_and_optional_voltage() {
        let data = "t,i,v,v_true\n0,1.5,3.7,3.7\n1,2.5,3.8,3.8\n";
        let mut rdr = csv::Reader::from_reader(data.as_bytes());
        let tr = Trace::from_csv_reader(&mut rdr).unwrap();
        assert_eq!(tr.t, vec![0.0, 1.0]);
        assert_eq!(tr.v, Some(vec![3.7, 3.8]));

        let mut rdr = csv::Reader::from_reader("i,t\n4,0\n5,1\n".as_bytes());
        let tr = Trace::from_csv_reader(&mut rdr).unwrap();
        assert_eq!(tr.i, vec![4.0, 5.0]);
        assert!(tr.v.is_none());
    }

    #[test]
    fn missing_column_and_bad_number() {
        let mut rdr = csv::Reader::from_reader("t,v\n0,1\n".as_bytes());
        assert!(matches!(Trace::from_csv_reader(&mut rdr), Err(Error::Data(_))));
        let mut rdr = csv::Reader::from_reader("t,i\n0,abc\n".as_bytes());
        assert!(matches!(Trace::from_csv_reader(&mut rdr), Err(Error::Data(_))));
    }

    #[test]
    fn round_trip() {
        let tr = Trace::new(vec![0.0, 0.5, 1.0], vec![1.0, -2.0, 0.25], Some(vec![3.6, 3.5, 3.61])).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(Trace::from_csv_reader(&mut rdr).unwrap(), tr);
    }

    #[test]
    fn sampling_checks() {
        let tr = Trace::uniform(10.0, 0.1, vec![0.0; 100]);
        assert!((tr.period().unwrap() - 0.1).abs() < 1e-12);
        let mut bad = tr.clone();
        bad.t[40] += 1e-4;
        assert!(matches!(bad.period(), Err(Error::NonUniform { index: 40, .. })));
    }
}
