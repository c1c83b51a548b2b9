//! Per-step training records and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 6] = [
    "step",
    "total_loss",
    "interior_loss",
    "boundary_loss",
    "l2_rel_err",
    "wall_s",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub total_loss: f64,
    pub interior_loss: f64,
    pub boundary_loss: f64,
    /// Only evaluated every few steps; empty in the CSV otherwise.
    pub l2_rel_err: Option<f64>,
    pub wall_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
}

impl RunMetrics {
    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::InvalidParameter(format!(
                    "metric steps must increase: {} after {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&MetricRecord> {
        self.records.last()
    }

    /// Last evaluated L2 relative error.
    pub fn final_l2(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.l2_rel_err)
    }

    pub fn best_l2(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.l2_rel_err).reduce(f64::min)
    }

    /// First logged step whose L2 relative error is below `threshold`.
    pub fn steps_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.l2_rel_err.is_some_and(|e| e < threshold))
            .map(|r| r.step)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(METRICS_HEADER)?;
        for r in &self.records {
            out.write_record([
                r.step.to_string(),
                fmt(r.total_loss),
                fmt(r.interior_loss),
                fmt(r.boundary_loss),
                r.l2_rel_err.map(fmt).unwrap_or_default(),
                fmt(r.wall_s),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != METRICS_HEADER {
            return Err(Error::Format {
                what: "metrics csv",
                detail: format!("unexpected header {header:?}"),
            });
        }
        let mut metrics = Self::default();
        for rec in rdr.deserialize() {
            metrics.push(rec?)?;
        }
        Ok(metrics)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Shortest representation that round-trips.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}
