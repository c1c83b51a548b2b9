use svpinn::net::load_checkpoint;
use svpinn::problems::ProblemSpec;
use svpinn::train::{train, FeatureConfig, LossKind, OptimizerConfig, RunMetrics, RunSummary, TrainConfig};

fn small_config(problem: &ProblemSpec, method: &str, optimizer: &str, steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default_for(
        problem,
        LossKind::parse(method).unwrap(),
        OptimizerConfig::parse(optimizer).unwrap(),
    );
    cfg.steps = steps;
    cfg.network.width = 12;
    cfg.network.depth = 2;
    cfg.batch.samples = 200;
    if let FeatureConfig::Daff { count } = &mut cfg.features {
        *count = 8;
    }
    cfg
}

fn loss_columns(m: &RunMetrics) -> Vec<(usize, u64, u64, u64, Option<u64>)> {
    m.records
        .iter()
        .map(|r| {
            (
                r.step,
                r.total_loss.to_bits(),
                r.interior_loss.to_bits(),
                r.boundary_loss.to_bits(),
                r.l2_rel_err.map(f64::to_bits),
            )
        })
        .collect()
}

#[test]
fn lbfgs_run_logs_every_step_and_is_deterministic() {
    let p = ProblemSpec::parse("exp1 a=1 n=63").unwrap();
    let cfg = small_config(&p, "svpinn", "lbfgs", 25);
    let a = train(&p, &cfg).unwrap();
    assert_eq!(a.metrics.len(), 25);
    assert!(a.summary.succeeded());
    assert_eq!(a.summary.armijo_violations, 0);
    for (i, r) in a.metrics.records.iter().enumerate() {
        assert_eq!(r.step, i + 1);
        assert_eq!(r.total_loss, r.interior_loss + cfg.lambda_b * r.boundary_loss);
        assert!(r.total_loss >= 0.0 && r.interior_loss >= 0.0 && r.boundary_loss >= 0.0);
        assert_eq!(r.l2_rel_err.is_some(), r.step % 10 == 0 || r.step == 25);
    }
    let first = a.metrics.records[0].total_loss;
    assert!(a.metrics.last().unwrap().total_loss < first);
    let b = train(&p, &cfg).unwrap();
    assert_eq!(loss_columns(&a.metrics), loss_columns(&b.metrics));
    assert_eq!(a.network, b.network);
}

#[test]
fn soft_boundary_run_balances_tau_and_writes_artifacts() {
    let p = ProblemSpec::parse("exp5 k=1 n=15").unwrap();
    let mut cfg = small_config(&p, "svpinn", "gd", 12);
    cfg.features = FeatureConfig::Fourier { rows: 4, sigma: 5.0 };
    let out = train(&p, &cfg).unwrap();
    let tau = out.summary.tau.unwrap();
    assert!(tau > 0.0);
    assert_eq!(out.metrics.len(), 12);
    for r in &out.metrics.records {
        assert_eq!(r.total_loss, r.interior_loss + r.boundary_loss);
    }
    let dir = tempfile::tempdir().unwrap();
    out.write_artifacts(dir.path(), &cfg).unwrap();
    assert_eq!(RunMetrics::load(&dir.path().join("metrics.csv")).unwrap(), out.metrics);
    assert_eq!(
        load_checkpoint(&dir.path().join("checkpoint.bin")).unwrap(),
        out.network
    );
    let summary = RunSummary::load(&dir.path().join("summary.json")).unwrap();
    assert_eq!(summary, out.summary);
    let text = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn pinn_run_and_target_stop() {
    let p = ProblemSpec::parse("exp1 a=1 n=31").unwrap();
    let mut cfg = small_config(&p, "pinn", "lbfgs", 200);
    cfg.target_l2 = Some(0.5);
    let out = train(&p, &cfg).unwrap();
    assert!(out.summary.steps_run < 200);
    assert!(out.summary.final_l2.unwrap() < 0.5);
    assert_eq!(out.summary.stop_reason, Some(svpinn::train::StopReason::Monitor));
}

#[test]
fn invalid_configs_are_rejected() {
    let p = ProblemSpec::parse("exp1 a=1 n=31").unwrap();
    let mut cfg = small_config(&p, "svpinn", "gd", 0);
    assert!(train(&p, &cfg).is_err());
    cfg.steps = 3;
    cfg.network.hard_boundary = false;
    assert!(train(&p, &cfg).is_err());
}
