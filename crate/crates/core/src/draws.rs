//! Posterior draws shared by both engines, and their CSV form.

use std::io::{Read, Write};
use std::ops::AddAssign;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// One retained draw of `(β, η, σ²_η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    pub sigma2_eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitMeta {
    pub engine: &'static str,
    pub burnin: usize,
    pub retained: usize,
    pub thin: usize,
    pub iterations: usize,
    pub wall_time_secs: f64,
}

/// Retained draws plus bookkeeping. Equality of two fits means equal draws.
#[derive(Debug, Clone)]
pub struct FitDraws {
    pub draws: Vec<Draw>,
    pub meta: FitMeta,
}

impl PartialEq for FitDraws {
    fn eq(&self, other: &Self) -> bool {
        self.draws == other.draws
    }
}

impl FitDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn q(&self) -> usize {
        self.draws.first().map_or(0, |d| d.beta.len())
    }

    pub fn r(&self) -> usize {
        self.draws.first().map_or(0, |d| d.eta.len())
    }

    /// Posterior mean of the stacked `(β, η)` vector.
    pub fn mean_zeta(&self) -> DVector<f64> {
        let (q, r) = (self.q(), self.r());
        let mut acc = DVector::zeros(q + r);
        for d in &self.draws {
            acc.rows_mut(0, q).add_assign(&d.beta);
            acc.rows_mut(q, r).add_assign(&d.eta);
        }
        acc / self.draws.len().max(1) as f64
    }

    /// Chain of one stacked component (β then η).
    pub fn component(&self, j: usize) -> Vec<f64> {
        let q = self.q();
        self.draws
            .iter()
            .map(|d| if j < q { d.beta[j] } else { d.eta[j - q] })
            .collect()
    }

    /// Header `beta_1..beta_q, eta_1..eta_r, sigma2_eta`, prefixed by `run` when tagged.
    pub fn write_csv<W: Write>(&self, writer: W, run: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = Vec::new();
        if run.is_some() {
            header.push("run".into());
        }
        header.extend((1..=self.q()).map(|j| format!("beta_{j}")));
        header.extend((1..=self.r()).map(|j| format!("eta_{j}")));
        header.push("sigma2_eta".into());
        w.write_record(&header)?;
        for d in &self.draws {
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            if let Some(tag) = run {
                row.push(tag.to_string());
            }
            row.extend(d.beta.iter().chain(d.eta.iter()).map(|v| v.to_string()));
            row.push(d.sigma2_eta.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv). The `run` column, if present, is ignored.
    pub fn read_csv<R: Read>(reader: R, engine: &'static str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut q = 0;
        let mut r = 0;
        let mut offset = 0;
        for h in headers.iter() {
            if h == "run" {
                offset += 1;
            } else if h.starts_with("beta_") {
                q += 1;
            } else if h.starts_with("eta_") {
                r += 1;
            } else if h != "sigma2_eta" {
                return Err(Error::Data(format!("unexpected draws column `{h}`")));
            }
        }
        if headers.len() != offset + q + r + 1 {
            return Err(Error::Data("draws file must end with `sigma2_eta`".into()));
        }
        let mut draws = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let vals = record
                .iter()
                .skip(offset)
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("line {line}: {e}")))?;
            draws.push(Draw {
                beta: DVector::from_column_slice(&vals[..q]),
                eta: DVector::from_column_slice(&vals[q..q + r]),
                sigma2_eta: vals[q + r],
            });
        }
        let n = draws.len();
        Ok(Self {
            draws,
            meta: FitMeta {
                engine,
                burnin: 0,
                retained: n,
                thin: 1,
                iterations: 0,
                wall_time_secs: 0.0,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(vals in prop::collection::vec(-1e6f64..1e6, 6), s2 in 1e-6f64..1e3) {
            let fit = FitDraws {
                draws: vec![Draw {
                    beta: DVector::from_column_slice(&vals[..2]),
                    eta: DVector::from_column_slice(&vals[2..]),
                    sigma2_eta: s2,
                }],
                meta: FitMeta { engine: "gibbs", burnin: 0, retained: 1, thin: 1, iterations: 1, wall_time_secs: 0.0 },
            };
            let mut buf = Vec::new();
            fit.write_csv(&mut buf, Some("abc")).unwrap();
            let back = FitDraws::read_csv(buf.as_slice(), "gibbs").unwrap();
            prop_assert_eq!(back, fit);
        }
    }
}
