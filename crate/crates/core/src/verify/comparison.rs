//! PINN / SV-PINN comparison runs and their aggregation into tables.

use serde::{Deserialize, Serialize};

use super::{mean_std, num, Check, StudyReport, Table};
use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::train::{train, LossKind, OptimizerConfig, RunMetrics, RunSummary, TrainConfig};

/// One finished run as stored in a run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub summary: RunSummary,
    pub metrics: RunMetrics,
}

impl RunRecord {
    /// Reads `summary.json` and `metrics.csv` from a run directory.
    pub fn load(dir: &std::path::Path) -> Result<Self> {
        Ok(Self {
            summary: RunSummary::load(&dir.join("summary.json"))?,
            metrics: RunMetrics::load(&dir.join("metrics.csv"))?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    /// Absent for a single value.
    pub std: Option<f64>,
    pub count: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Self {
            mean,
            std,
            count: values.len(),
        })
    }

    fn render(&self, fmt: impl Fn(f64) -> String) -> String {
        match self.std {
            Some(s) => format!("{} ± {}", fmt(self.mean), fmt(s)),
            None => fmt(self.mean),
        }
    }
}

/// Latest evaluated L2 error at or before `step`. A run that stopped early
/// keeps its last error for later checkpoints.
pub fn l2_at_step(metrics: &RunMetrics, step: usize) -> Option<f64> {
    metrics
        .records
        .iter()
        .take_while(|r| r.step <= step)
        .filter_map(|r| r.l2_rel_err)
        .last()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub experiment: String,
    pub method: String,
    pub optimizer: String,
    pub runs: usize,
    pub checkpoints: Vec<(usize, Option<Spread>)>,
    pub final_l2: Option<Spread>,
    /// Over the runs that reached 1%; `reached_1pct` counts them.
    pub steps_to_1pct: Option<Spread>,
    pub reached_1pct: usize,
    pub wall_s: Option<Spread>,
}

/// Groups runs by (experiment, method, optimizer), in order of first
/// appearance, with mean and standard deviation over repetitions. Steps to
/// 1% are recomputed from the per-step metrics.
pub fn aggregate_runs(runs: &[RunRecord], checkpoints: &[usize]) -> Vec<ComparisonRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in runs {
        let k = (
            r.summary.experiment.clone(),
            r.summary.method.clone(),
            r.summary.optimizer.clone(),
        );
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(experiment, method, optimizer)| {
            let group: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| {
                    r.summary.experiment == experiment && r.summary.method == method && r.summary.optimizer == optimizer
                })
                .collect();
            let at = |c: usize| -> Vec<f64> { group.iter().filter_map(|r| l2_at_step(&r.metrics, c)).collect() };
            let finals: Vec<f64> = group.iter().filter_map(|r| r.metrics.final_l2()).collect();
            let reached: Vec<f64> = group
                .iter()
                .filter_map(|r| r.metrics.steps_to_threshold(0.01))
                .map(|s| s as f64)
                .collect();
            let walls: Vec<f64> = group.iter().map(|r| r.summary.wall_s).collect();
            ComparisonRow {
                experiment,
                method,
                optimizer,
                runs: group.len(),
                checkpoints: checkpoints.iter().map(|&c| (c, Spread::of(&at(c)))).collect(),
                final_l2: Spread::of(&finals),
                reached_1pct: reached.len(),
                steps_to_1pct: Spread::of(&reached),
                wall_s: Spread::of(&walls),
            }
        })
        .collect()
}

fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

fn spread_cell(s: &Option<Spread>, fmt: impl Fn(f64) -> String) -> String {
    s.as_ref().map(|s| s.render(fmt)).unwrap_or_else(|| "-".into())
}

/// Raw per-row table: means and standard deviations as separate columns.
/// Standard-deviation columns are omitted when every row has a single run.
pub fn comparison_table(rows: &[ComparisonRow], checkpoints: &[usize]) -> Table {
    let with_std = rows.iter().any(|r| r.runs > 1);
    let mut header: Vec<String> = ["experiment", "method", "optimizer", "runs"].map(String::from).to_vec();
    let mut cols: Vec<String> = checkpoints.iter().map(|c| format!("l2_at_{c}")).collect();
    cols.extend(["final_l2", "steps_to_1pct", "wall_s"].map(String::from));
    for c in &cols {
        header.push(format!("{c}_mean"));
        if with_std {
            header.push(format!("{c}_std"));
        }
    }
    header.push("reached_1pct".into());
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for r in rows {
        let mut row = vec![
            r.experiment.clone(),
            r.method.clone(),
            r.optimizer.clone(),
            r.runs.to_string(),
        ];
        let mut cells: Vec<&Option<Spread>> = r.checkpoints.iter().map(|(_, s)| s).collect();
        cells.extend([&r.final_l2, &r.steps_to_1pct, &r.wall_s]);
        for s in cells {
            row.push(s.map(|s| num(s.mean)).unwrap_or_default());
            if with_std {
                row.push(s.and_then(|s| s.std).map(num).unwrap_or_default());
            }
        }
        row.push(r.reached_1pct.to_string());
        table.push(row);
    }
    table
}

/// Markdown table: error at each checkpoint, final error, steps to reach
/// 1% error and wall time, as `mean ± std` over repetitions.
pub fn render_markdown(rows: &[ComparisonRow], checkpoints: &[usize]) -> String {
    let mut out = String::from("| Experiment | Method | Optimizer | Runs |");
    for c in checkpoints {
        out.push_str(&format!(" L2 RE @ {c} |"));
    }
    out.push_str(" Final L2 RE | Steps to 1% | Time (s) |\n|");
    for _ in 0..(checkpoints.len() + 7) {
        out.push_str("---|");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} |",
            r.experiment, r.method, r.optimizer, r.runs
        ));
        for (_, s) in &r.checkpoints {
            out.push_str(&format!(" {} |", spread_cell(s, sci)));
        }
        let steps = match &r.steps_to_1pct {
            Some(s) if s.count < r.runs => format!("{} ({}/{})", s.render(|v| format!("{v:.1}")), s.count, r.runs),
            other => spread_cell(other, |v| format!("{v:.1}")),
        };
        out.push_str(&format!(
            " {} | {} | {} |\n",
            spread_cell(&r.final_l2, sci),
            steps,
            spread_cell(&r.wall_s, |v| format!("{v:.1}"))
        ));
    }
    out
}

/// Method cells of the comparison: PINN with Adam, SV-PINN with Adam and
/// SV-PINN with L-BFGS.
pub const COMPARISON_CELLS: [(&str, &str); 3] = [("pinn", "gd"), ("svpinn", "gd"), ("svpinn", "lbfgs")];

/// Trains every cell of [`COMPARISON_CELLS`] for each seed with the same step
/// budget. `configure` adjusts each default configuration (e.g. sizes).
/// Checks that SV-PINN with L-BFGS ends no worse than PINN with Adam.
pub fn study_comparison(
    problem: &ProblemSpec,
    steps: usize,
    seeds: &[u64],
    configure: impl Fn(&mut TrainConfig),
) -> Result<(StudyReport, Vec<RunRecord>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("comparison needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    for (method, optimizer) in COMPARISON_CELLS {
        for &seed in seeds {
            let mut cfg =
                TrainConfig::default_for(problem, LossKind::parse(method)?, OptimizerConfig::parse(optimizer)?);
            cfg.steps = steps;
            cfg.seed = seed;
            configure(&mut cfg);
            let out = train(problem, &cfg)?;
            runs.push(RunRecord {
                summary: out.summary,
                metrics: out.metrics,
            });
        }
    }
    let mut checkpoints = vec![(steps / 5).max(1), steps];
    checkpoints.dedup();
    let rows = aggregate_runs(&runs, &checkpoints);
    let mut report = StudyReport::new(
        &format!("comparison_{}", problem.experiment().name()),
        false,
        comparison_table(&rows, &checkpoints),
    );
    report.param("experiment", problem.label());
    report.param("steps", steps);
    report.param("seeds", seeds);
    report.param("checkpoints", &checkpoints);
    for r in &rows {
        if let Some(f) = &r.final_l2 {
            report
                .values
                .insert(format!("final_l2_{}_{}", r.method, r.optimizer), f.mean);
        }
    }
    let get = |m: &str, o: &str| report.values.get(&format!("final_l2_{m}_{o}")).copied();
    if let (Some(sv), Some(pinn)) = (get("svpinn", "lbfgs"), get("pinn", "gd")) {
        report.check(Check::below("svpinn_lbfgs_vs_pinn_gd", sv - pinn, 0.0));
    }
    Ok((report, runs))
}
