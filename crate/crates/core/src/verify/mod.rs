//! Executable numerical studies.
//!
//! Every study returns a [`StudyReport`]: a table of raw measurements
//! (written as CSV), fitted log-log slopes, derived values and a list of
//! checks (written as a JSON summary). Reports are deterministic given the
//! seed; repetitions run in parallel and are reduced in a fixed order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod comparison;
mod rates;
mod spectral;

pub use comparison::{
    aggregate_runs, comparison_table, l2_at_step, render_markdown, study_comparison, ComparisonRow, RunRecord, Spread,
    COMPARISON_CELLS,
};
pub use rates::{
    polynomial_taper_phi_norm, study_consistency, study_eigen_convergence, study_trapezoid, ConsistencyOptions,
};
pub use spectral::{
    equivalence_suite, expected_partial_sums, regularity_partial_sums, study_equivalence, study_regularity,
    RegularityOptions,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Study names accepted by [`run_named`].
pub const STUDIES: [&str; 5] = ["equivalence", "trapezoid", "eigen", "consistency", "regularity"];

/// One assertion of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Informational checks are reported but do not fail the study
    /// (slopes in quick mode).
    pub enforced: bool,
    pub passed: bool,
}

impl Check {
    pub fn within(name: impl Into<String>, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let passed = value.is_finite() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        Self {
            name: name.into(),
            value,
            lower,
            upper,
            enforced: true,
            passed,
        }
    }

    /// `|value - target| <= tol`.
    pub fn near(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self::within(name, value, Some(target - tol), Some(target + tol))
    }

    pub fn at_least(name: impl Into<String>, value: f64, lower: f64) -> Self {
        Self::within(name, value, Some(lower), None)
    }

    pub fn below(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self::within(name, value, None, Some(upper))
    }

    pub fn enforced(mut self, on: bool) -> Self {
        self.enforced = on;
        self
    }
}

/// Raw measurements, one row per measurement.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Index of a named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Round-trippable float formatting for tables.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub study: String,
    pub quick: bool,
    pub params: BTreeMap<String, serde_json::Value>,
    pub slopes: BTreeMap<String, f64>,
    pub values: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub passed: bool,
    #[serde(skip)]
    pub table: Table,
}

impl StudyReport {
    pub fn new(study: &str, quick: bool, table: Table) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            study: study.into(),
            quick,
            params: BTreeMap::new(),
            slopes: BTreeMap::new(),
            values: BTreeMap::new(),
            checks: Vec::new(),
            passed: true,
            table,
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.params.insert(key.into(), v);
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
        self.passed = self.checks.iter().filter(|c| c.enforced).all(|c| c.passed);
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.enforced && !c.passed).collect()
    }

    pub fn check_named(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `<study>.csv` and `<study>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.study));
        let json_path = dir.join(format!("{}.json", self.study));
        self.table.write_csv(std::fs::File::create(&csv_path)?)?;
        std::fs::write(&json_path, self.to_json()?)?;
        Ok((csv_path, json_path))
    }
}

/// Ordinary least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidParameter("a slope needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("log-log fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("all abscissae are equal".into()));
    }
    Ok(sxy / sxx)
}

/// Mean of values summed in sorted order, so the result does not depend on
/// the order in which parallel repetitions finished.
pub fn sorted_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    crate::norms::pairwise_sum(&v) / v.len() as f64
}

/// Sample mean and (n-1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let m = sorted_mean(values);
    if values.len() < 2 {
        return (m, None);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    (
        m,
        Some((sorted_mean(&dev) * values.len() as f64 / (values.len() - 1) as f64).sqrt()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct StudyOptions {
    pub quick: bool,
    pub seed: u64,
}

/// Runs one of the non-training studies at its default settings over every
/// dimension it covers.
pub fn run_named(name: &str, opts: StudyOptions) -> Result<Vec<StudyReport>> {
    match name {
        "equivalence" => Ok(vec![equivalence_suite(1000, 50, opts)?]),
        "trapezoid" => (1..=3).map(|d| study_trapezoid(d, opts.quick)).collect(),
        "eigen" | "eigenvalues" => (1..=3).map(|d| study_eigen_convergence(d, opts.quick)).collect(),
        "consistency" => (1..=2)
            .map(|d| study_consistency(d, &ConsistencyOptions::defaults(d, opts)))
            .collect(),
        "regularity" => Ok(vec![study_regularity(&RegularityOptions::defaults(2, opts))?]),
        other => Err(Error::Unknown {
            kind: "study",
            name: other.into(),
        }),
    }
}
