use std::path::Path;
use std::process::{Command, Output};

use svpinn::sampler::TestFunctionBatch;
use svpinn::train::{RunMetrics, RunSummary};

fn svpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svpinn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn sample_writes_a_loadable_batch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("batch.bin");
    let o = svpinn(&[
        "sample",
        "--d",
        "2",
        "--n",
        "15",
        "--tau",
        "0.5",
        "--count",
        "7",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let b = TestFunctionBatch::load(&out).unwrap();
    assert_eq!((b.rows(), b.cols(), b.tau(), b.seed()), (7, 225, 0.5, 3));
    let again = svpinn::sampler::sample_wm_batch(&b.grid(), 0.5, 7, 3).unwrap();
    assert_eq!(b.values(), again.values());
}

#[test]
fn sample_rejects_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.bin");
    let o = svpinn(&[
        "sample",
        "--d",
        "1",
        "--n",
        "0",
        "--count",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn train_rejects_unknown_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let o = svpinn(&[
        "train",
        "--experiment",
        "exp9",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = svpinn(&[
        "train",
        "--experiment",
        "exp1",
        "--method",
        "bogus",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn default_train_logs_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = svpinn(&[
        "train",
        "--experiment",
        "exp1 a=1",
        "--method",
        "svpinn",
        "--optimizer",
        "lbfgs",
        "--steps",
        "200",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let m = RunMetrics::load(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(m.len(), 200);
    let s = RunSummary::load(&dir.path().join("summary.json")).unwrap();
    assert_eq!(
        (s.steps_run, s.method.as_str(), s.optimizer.as_str()),
        (200, "svpinn", "lbfgs")
    );
    assert!(dir.path().join("checkpoint.bin").is_file());
}

fn write_small_config(path: &Path) {
    let text = r#"
method = "svpinn"
steps = 5
seed = 11
lambda_b = 0.0

[optimizer]
kind = "lbfgs"
history = 50
tolerance = 1e-9
max_linesearch = 20
c1 = 1e-4
c2 = 0.9

[tau]
rule = "fixed"
tau = 0.1

[batch]
samples = 100

[features]
kind = "daff"
count = 8

[network]
width = 10
depth = 2
hard_boundary = true
"#;
    std::fs::write(path, text).unwrap();
}

#[test]
fn flags_override_config_and_reruns_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    write_small_config(&cfg);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = svpinn(&[
            "train",
            "--experiment",
            "exp1 a=2 n=63",
            "--config",
            cfg.to_str().unwrap(),
            "--steps",
            "7",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{o:?}");
        out
    };
    let a = run("a");
    let b = run("b");
    let ma = RunMetrics::load(&a.join("metrics.csv")).unwrap();
    let mb = RunMetrics::load(&b.join("metrics.csv")).unwrap();
    assert_eq!(ma.len(), 7);
    let strip = |m: &RunMetrics| -> Vec<_> {
        m.records
            .iter()
            .map(|r| {
                (
                    r.step,
                    r.total_loss.to_bits(),
                    r.interior_loss.to_bits(),
                    r.l2_rel_err.map(f64::to_bits),
                )
            })
            .collect()
    };
    assert_eq!(strip(&ma), strip(&mb));
    let s = RunSummary::load(&a.join("summary.json")).unwrap();
    assert_eq!((s.seed, s.steps_requested), (11, 7));
    let written = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(written.contains("width = 10") && written.contains("history = 50"));
}

#[test]
fn verify_equivalence_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = svpinn(&[
        "verify",
        "equivalence",
        "--quick",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("equivalence: PASS"));
    let json: String = std::fs::read_to_string(dir.path().join("equivalence.json")).unwrap();
    assert!(json.contains("\"passed\": true"));
    let csv = std::fs::read_to_string(dir.path().join("equivalence.csv")).unwrap();
    // 9 (d, tau) cells of 500 trials plus the header.
    assert_eq!(csv.lines().count(), 9 * 500 + 1);
}

#[test]
fn verify_quick_rate_studies_pass() {
    let dir = tempfile::tempdir().unwrap();
    for study in ["trapezoid", "eigen"] {
        let o = svpinn(&["verify", study, "--quick", "--out-dir", dir.path().to_str().unwrap()]);
        assert!(o.status.success(), "{study}: {o:?}");
    }
    assert!(dir.path().join("trapezoid_d2.json").is_file());
}

#[test]
fn verify_rejects_unknown_study() {
    let dir = tempfile::tempdir().unwrap();
    let o = svpinn(&["verify", "bogus", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn tiny_run(dir: &Path, cfg: &Path, method: &str, optimizer: &str, seed: &str) {
    let o = svpinn(&[
        "train",
        "--experiment",
        "exp1 a=1 n=31",
        "--config",
        cfg.to_str().unwrap(),
        "--method",
        method,
        "--optimizer",
        optimizer,
        "--seed",
        seed,
        "--steps",
        "20",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
}

#[test]
fn report_aggregates_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    write_small_config(&cfg);
    let runs = dir.path().join("runs");
    for seed in ["1", "2", "3"] {
        tiny_run(&runs.join(format!("sv{seed}")), &cfg, "svpinn", "lbfgs", seed);
    }
    tiny_run(&runs.join("pinn1"), &cfg, "pinn", "gd", "1");

    let out = dir.path().join("table");
    let o = svpinn(&[
        "report",
        runs.to_str().unwrap(),
        "--checkpoints",
        "10,20",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let md = stdout(&o);
    assert!(md.contains("L2 RE @ 10") && md.contains("±"));
    let mut rdr = csv_rows(&out.join("comparison.csv"));
    let header = rdr.remove(0);
    assert!(header.contains(&"final_l2_std".to_string()));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let sv = rdr.iter().find(|r| r[col("method")] == "svpinn").unwrap();
    assert_eq!(sv[col("runs")], "3");
    let pinn = rdr.iter().find(|r| r[col("method")] == "pinn").unwrap();
    assert_eq!(pinn[col("final_l2_std")], "");

    // Steps to 1% recomputed from the raw CSVs, after giving two runs known
    // error trajectories (only one of which crosses 1% within budget).
    for (seed, scale) in [("1", 0.5), ("3", 0.02)] {
        let path = runs.join(format!("sv{seed}")).join("metrics.csv");
        let mut m = RunMetrics::load(&path).unwrap();
        for r in &mut m.records {
            r.l2_rel_err = Some(scale / r.step as f64);
        }
        m.save(&path).unwrap();
    }
    let o = svpinn(&[
        "report",
        runs.to_str().unwrap(),
        "--checkpoints",
        "10,20",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let rows = csv_rows(&out.join("comparison.csv"));
    let sv = rows.iter().find(|r| r[col("method")] == "svpinn").unwrap();
    let mut reached = Vec::new();
    for seed in ["1", "2", "3"] {
        let m = RunMetrics::load(&runs.join(format!("sv{seed}")).join("metrics.csv")).unwrap();
        let first = m
            .records
            .iter()
            .find(|r| r.l2_rel_err.is_some_and(|e| e < 0.01))
            .map(|r| r.step);
        reached.extend(first.map(|s| s as f64));
    }
    // 0.5/s < 0.01 first at s = 51 (never within 20 steps); 0.02/s at s = 3.
    assert_eq!(reached, vec![3.0]);
    assert_eq!(sv[col("steps_to_1pct_mean")].parse::<f64>().unwrap(), 3.0);
    assert_eq!(sv[col("reached_1pct")], "1");
    assert!(stdout(&o).contains("(1/3)"));

    // A single run: no standard deviation columns at all.
    let o = svpinn(&[
        "report",
        runs.join("pinn1").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let rows = csv_rows(&out.join("comparison.csv"));
    assert!(!rows[0].iter().any(|h| h.ends_with("_std")));
    assert!(!stdout(&o).contains('±'));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
