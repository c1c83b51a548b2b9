//! Acceptance suite: one check per criterion, each printing a single
//! PASS/FAIL line. Criteria run one after another so that runtime budgets
//! are measured without competing for cores. Arguments not starting with
//! `-` filter criteria by name.

use std::f64::consts::PI;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svpinn::basis::{GridSpec, PointSet};
use svpinn::dst::{dst1, neg_laplacian_h};
use svpinn::net::{glorot_init_scaled, Network, NetworkParams};
use svpinn::norms::{empirical_phi_loss, expected_phi_loss, weight_matrix_loss, ResidualField};
use svpinn::problems::ProblemSpec;
use svpinn::sampler::sample_wm_batch;
use svpinn::train::{build_loss, train, LossKind, OptimizerConfig, TrainConfig, TrainOutcome};
use svpinn::verify::{
    study_consistency, study_eigen_convergence, study_equivalence, study_regularity, study_trapezoid,
    ConsistencyOptions, RegularityOptions, StudyOptions,
};

mod common;
use common::jet_vs_differences;

/// Prints the criterion line (outside the test harness capture) and fails
/// the test when the criterion does not hold.
fn verdict(id: u32, title: &str, passed: bool, detail: String) {
    let line = format!(
        "acceptance {id:>2} {} {title}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    assert!(passed, "{line}");
}

fn desk_config(problem: &ProblemSpec, method: &str, optimizer: &str, steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default_for(
        problem,
        LossKind::parse(method).unwrap(),
        OptimizerConfig::parse(optimizer).unwrap(),
    );
    cfg.steps = steps;
    cfg
}

fn run(spec: &str, method: &str, optimizer: &str, steps: usize) -> TrainOutcome {
    let p = ProblemSpec::parse(spec).unwrap();
    let out = train(&p, &desk_config(&p, method, optimizer, steps)).unwrap();
    assert!(
        out.summary.succeeded(),
        "{spec} {method} {optimizer}: {:?}",
        out.summary.error
    );
    out
}

fn final_l2(o: &TrainOutcome) -> f64 {
    o.summary.final_l2.unwrap()
}

fn criterion_01_norm_equivalence() {
    let t = Instant::now();
    let mut worst = Vec::new();
    let mut all = true;
    for d in 1..=3 {
        for tau in [0.1, 1.0, 10.0] {
            let r = study_equivalence(d, 50, 1000, tau, StudyOptions { quick: false, seed: 1 }).unwrap();
            all &= r.passed && r.values["violations"] == 0.0;
            worst.push(format!(
                "d{d}/tau{tau}: [{:.3e}, {:.3e}]",
                r.values["min_ratio"], r.values["max_ratio"]
            ));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        1,
        "norm-equivalence containment",
        all && secs < 10.0,
        format!(
            "9000 sets, 0 violations = {all}, {secs:.1}s < 10s; ratio ranges {}",
            worst.join(", ")
        ),
    );
}

fn smooth_residual(x: f64) -> f64 {
    (PI * x).sin() + 4.0 * x * (1.0 - x) * x.exp()
}

fn criterion_02_monte_carlo_phi_norm() {
    let t = Instant::now();
    let (n, samples, batches, tau) = (63usize, 10usize, 10_000u64, 1.0);
    let grid = GridSpec::new(1, n).unwrap();
    let field = ResidualField::from_fn(grid, |x| smooth_residual(x[0])).unwrap();
    let losses: Vec<f64> = (0..batches)
        .map(|s| empirical_phi_loss(&field, &sample_wm_batch(&grid, tau, samples, 1000 + s).unwrap()).unwrap())
        .collect();
    let m = losses.iter().sum::<f64>() / batches as f64;
    let var = losses.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / (batches - 1) as f64;

    // Closed form by explicit sine sums: tau^2 h^-1 n^-2 sum_k <R, phi_k>_h^2 / (1 + lambda_k^h).
    let h = grid.h();
    let nodes: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
    let mut closed = 0.0;
    for k in 1..=n {
        let pairing: f64 = nodes
            .iter()
            .map(|&x| smooth_residual(x) * 2f64.sqrt() * (k as f64 * PI * x).sin())
            .sum::<f64>()
            * h;
        let lam = 4.0 / (h * h) * (k as f64 * PI * h / 2.0).sin().powi(2);
        closed += pairing * pairing / (1.0 + lam);
    }
    closed *= tau * tau / (h * (n * n) as f64);
    let library = expected_phi_loss(&field, tau).unwrap();
    let z = (m - closed) / (var / batches as f64).sqrt();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        2,
        "Monte Carlo Phi-norm expectation",
        z.abs() < 4.0 && ((library - closed) / closed).abs() < 1e-12 && secs < 60.0,
        format!("mean {m:.6e} vs closed form {closed:.6e}, z = {z:.2} (< 4), {secs:.1}s < 60s"),
    );
}

fn criterion_03_dst() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_rt, mut worst_diag) = (0.0f64, 0.0f64);
    for d in 1..=3 {
        for n in [1usize, 2, 15, 64, 100, 255] {
            let grid = GridSpec::new(d, n).unwrap();
            let u: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hat = dst1(&u, &grid).unwrap();
            let back = dst1(&hat, &grid).unwrap();
            let rt = u.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_rt = worst_rt.max(rt);
            drop(back);
            // -Delta_h u = S Lambda S u
            let lam = grid.discrete_eigenvalues();
            let scaled: Vec<f64> = hat.iter().zip(&lam).map(|(c, l)| c * l).collect();
            drop(hat);
            let spectral = dst1(&scaled, &grid).unwrap();
            drop(scaled);
            let direct = neg_laplacian_h(&u, &grid).unwrap();
            let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let diag = direct
                .iter()
                .zip(&spectral)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / scale;
            worst_diag = worst_diag.max(diag);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        3,
        "DST-I round trip and diagonalisation",
        worst_rt < 1e-12 && worst_diag < 1e-10 && secs < 30.0,
        format!("round trip {worst_rt:.2e} < 1e-12, diagonalisation {worst_diag:.2e} < 1e-10, d <= 3, n <= 255, {secs:.1}s < 30s"),
    );
}

fn criterion_04_convergence_slopes() {
    let t = Instant::now();
    let opts = StudyOptions { quick: false, seed: 4 };
    let mut parts = Vec::new();
    let mut ok = true;
    for d in 1..=2 {
        let r = study_trapezoid(d, false).unwrap();
        for (name, s) in &r.slopes {
            ok &= (s - 2.0).abs() <= 0.15;
            parts.push(format!("trapezoid d{d} {name} {s:.3}"));
        }
    }
    let e = study_eigen_convergence(1, false).unwrap();
    for (name, s) in &e.slopes {
        ok &= (s - 2.0).abs() <= 0.1;
        parts.push(format!("eigen {name} {s:.3}"));
    }
    let ratio = e.values["ratio_k4_k1"] / e.values["ratio_predicted"];
    ok &= (ratio - 1.0).abs() <= 0.2;
    parts.push(format!("lambda^2 ratio {:.1}/256", e.values["ratio_k4_k1"]));
    for (d, floor) in [(1usize, 1.4), (2, 0.9)] {
        let r = study_consistency(d, &ConsistencyOptions::defaults(d, opts)).unwrap();
        let (h, n) = (r.slopes["h"], r.slopes["N"]);
        ok &= h >= floor;
        if d == 1 {
            ok &= (n + 0.5).abs() <= 0.1;
            parts.push(format!("N-slope d1 {n:.3}"));
        }
        parts.push(format!("h-slope d{d} {h:.3} (>= {floor})"));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        4,
        "convergence slopes",
        ok && secs < 900.0,
        format!("{}; {secs:.0}s < 900s", parts.join(", ")),
    );
}

fn criterion_05_trajectory_regularity() {
    let t = Instant::now();
    let opts = RegularityOptions::defaults(2, StudyOptions { quick: false, seed: 5 });
    let r = study_regularity(&opts).unwrap();
    let (lo, hi) = (opts.orders[0], opts.orders[1]);
    let bounded = r.values[&format!("last_step_ratio_t{lo}")];
    let growth = r.values[&format!("growth_t{hi}")];
    let secs = t.elapsed().as_secs_f64();
    verdict(
        5,
        "trajectory regularity (d = 2)",
        bounded < 1.05 && growth > 10.0 && secs < 300.0,
        format!(
            "t = {lo:.1}: last consecutive ratio {bounded:.4} (< 1.05); t = {hi:.1}: last/first {growth:.2} (> 10, expectation {:.2}); truncations {}..{} per axis; {secs:.0}s < 300s",
            r.values[&format!("expected_growth_t{hi}")],
            opts.truncations[0],
            opts.truncations[opts.truncations.len() - 1]
        ),
    );
}

fn random_interior(d: usize, count: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointSet::new(d, (0..d * count).map(|_| rng.random_range(0.02..0.98)).collect()).unwrap()
}

fn with_biases(mut p: NetworkParams, seed: u64) -> NetworkParams {
    if !p.architecture().hard_boundary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = p.layout().n_weights;
        for v in &mut p.values_mut()[n..] {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    p
}

fn criterion_06_input_derivatives() {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, spec) in ["exp1", "exp2", "exp3", "exp4", "exp5", "exp6"].iter().enumerate() {
        let p = ProblemSpec::parse(spec).unwrap();
        let cfg = desk_config(&p, "svpinn", "lbfgs", 1);
        let fmap = cfg.feature_map(p.dim()).unwrap();
        let arch = cfg.architecture(&fmap);
        let params = with_biases(
            glorot_init_scaled(arch, 60 + i as u64, cfg.network.init_gain),
            70 + i as u64,
        );
        let net = Network::new(fmap, params).unwrap();
        let (g, s) = jet_vs_differences(&net, &random_interior(p.dim(), 100, 80 + i as u64));
        ok &= g < 1e-6 && s < 1e-4;
        parts.push(format!("{spec} {g:.1e}/{s:.1e}"));
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        6,
        "jet derivatives vs finite differences",
        ok && secs < 60.0,
        format!(
            "gradient/second relative errors (< 1e-6 / < 1e-4): {}; {secs:.1}s < 60s",
            parts.join(", ")
        ),
    );
}

fn boundary_points(d: usize, count: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(d * count);
    for _ in 0..count {
        let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let axis = rng.random_range(0..d);
        x[axis] = if rng.random_bool(0.5) { 0.0 } else { 1.0 };
        coords.extend(x);
    }
    PointSet::new(d, coords).unwrap()
}

fn criterion_07_hard_constraint() {
    let mut worst = 0.0f64;
    for spec in ["exp1", "exp2", "exp6"] {
        let p = ProblemSpec::parse(spec).unwrap();
        let cfg = desk_config(&p, "svpinn", "lbfgs", 1);
        let fmap = cfg.feature_map(p.dim()).unwrap();
        let arch = cfg.architecture(&fmap);
        assert!(arch.hard_boundary);
        let points = boundary_points(p.dim(), 10_000, 7);
        for draw in 0..20u64 {
            let net = Network::new(fmap.clone(), glorot_init_scaled(arch, draw, 1.0)).unwrap();
            worst = net.values_at(&points).iter().fold(worst, |m, v| m.max(v.abs()));
        }
    }
    verdict(
        7,
        "hard boundary constraint",
        worst <= 1e-14,
        format!("max |u| = {worst:.1e} (<= 1e-14) over 10^4 boundary points x 20 draws, d = 1, 2, 3"),
    );
}

fn criterion_08_experiment1_a1() {
    let t = Instant::now();
    let out = run("exp1 a=1", "svpinn", "lbfgs", 1000);
    let e = final_l2(&out);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        8,
        "Experiment 1 (a = 1), SV-PINN + L-BFGS",
        e < 1e-3 && secs < 600.0,
        format!(
            "L2 RE {e:.3e} < 1e-3 after {} steps (full scale reference 9.239e-6); {secs:.0}s < 600s",
            out.summary.steps_run
        ),
    );
}

fn criterion_09_experiment1_a100() {
    let t = Instant::now();
    let steps = 1000;
    let sv = final_l2(&run("exp1 a=100", "svpinn", "lbfgs", steps));
    let pinn = final_l2(&run("exp1 a=100", "pinn", "gd", steps));
    let secs = t.elapsed().as_secs_f64();
    verdict(
        9,
        "Experiment 1 (a = 100), SV-PINN vs PINN",
        sv < 1e-2 && sv < pinn && secs < 900.0,
        format!("SV-PINN(L-BFGS) {sv:.3e} < 1e-2 and < PINN(GD) {pinn:.3e} at {steps} steps (full scale 1.614e-5 vs ~0.94); {secs:.0}s < 900s"),
    );
}

fn criterion_10_experiment2_a1() {
    let t = Instant::now();
    let p = ProblemSpec::parse("exp2 a=1").unwrap();
    let mut cfg = desk_config(&p, "svpinn", "lbfgs", 500);
    cfg.target_l2 = Some(1e-2);
    let out = train(&p, &cfg).unwrap();
    let reached = out.metrics.steps_to_threshold(1e-2);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        10,
        "Experiment 2 (a = 1), SV-PINN + L-BFGS",
        reached.is_some_and(|s| s <= 500) && secs < 2700.0,
        format!(
            "L2 RE < 1e-2 at step {} (<= 500; full scale 48.7 steps), final {:.3e}; {secs:.0}s < 2700s",
            reached.map_or("never".to_string(), |s| s.to_string()),
            out.summary.final_l2.unwrap_or(f64::NAN)
        ),
    );
}

/// Equal step budget for both Experiment-5 cells.
const EXP5_STEPS: usize = 200;

fn criterion_11_experiment5_k1() {
    let t = Instant::now();
    let sv = run("exp5 k=1", "svpinn", "lbfgs", EXP5_STEPS);
    let pinn = run("exp5 k=1", "pinn", "gd", EXP5_STEPS);
    let (e_sv, e_pinn) = (final_l2(&sv), final_l2(&pinn));
    let secs = t.elapsed().as_secs_f64();
    verdict(
        11,
        "Experiment 5 (k = 1), soft boundary, balanced tau",
        e_sv < 5e-2 && e_sv < e_pinn && secs < 2700.0,
        format!(
            "SV-PINN(L-BFGS) {e_sv:.3e} < 5e-2 and < PINN(GD) {e_pinn:.3e} at {EXP5_STEPS} steps, tau = {:.3e} (full scale 1.363e-4 vs 0.91); {secs:.0}s < 2700s",
            sv.summary.tau.unwrap()
        ),
    );
}

fn criterion_12_tau_balancing() {
    let p = ProblemSpec::parse("exp5 k=1").unwrap();
    let cfg = desk_config(&p, "svpinn", "lbfgs", 1);
    let fmap = cfg.feature_map(2).unwrap();
    let params = glorot_init_scaled(cfg.architecture(&fmap), cfg.param_seed(), cfg.network.init_gain);
    let (ev, tau) = build_loss(&p, &cfg, &fmap, &params).unwrap();
    let l = ev.loss(&params).unwrap();
    let rel = ((l.interior - l.boundary) / l.boundary).abs();
    verdict(
        12,
        "tau balancing at initialisation",
        rel < 1e-10,
        format!(
            "interior {:.6e} vs boundary {:.6e}, relative gap {rel:.1e} < 1e-10 (tau = {:.4e})",
            l.interior,
            l.boundary,
            tau.unwrap()
        ),
    );
}

fn criterion_13_loss_quadratic_form() {
    let grid = GridSpec::new(1, 15).unwrap();
    let batch = sample_wm_batch(&grid, 0.1, 50, 13).unwrap();
    let field = ResidualField::from_fn(grid, |x| smooth_residual(x[0]) - 0.3).unwrap();
    // Oracle: explicit double sum with w_ii' = sum_j phi_j(x_i) phi_j(x_i').
    let (nc, nb) = (batch.cols(), batch.rows());
    let mut q = 0.0;
    for i in 0..nc {
        for k in 0..nc {
            let w: f64 = (0..nb).map(|j| batch.row(j)[i] * batch.row(j)[k]).sum();
            q += w * field.r[i] * field.r[k];
        }
    }
    q /= (nb * nc * nc) as f64;
    let emp = empirical_phi_loss(&field, &batch).unwrap();
    let wm = weight_matrix_loss(&field, &batch).unwrap();
    let (r1, r2) = (((emp - q) / q).abs(), ((wm - q) / q).abs());
    verdict(
        13,
        "loss equals weighted quadratic form",
        r1 < 1e-10 && r2 < 1e-10,
        format!("empirical {emp:.12e}, quadratic form {q:.12e}, relative {r1:.1e} / {r2:.1e} < 1e-10 (d = 1, n = 15, N = 50)"),
    );
}

const CRITERIA: [(&str, fn()); 13] = [
    ("criterion_01_norm_equivalence", criterion_01_norm_equivalence),
    ("criterion_02_monte_carlo_phi_norm", criterion_02_monte_carlo_phi_norm),
    ("criterion_03_dst", criterion_03_dst),
    ("criterion_04_convergence_slopes", criterion_04_convergence_slopes),
    ("criterion_05_trajectory_regularity", criterion_05_trajectory_regularity),
    ("criterion_06_input_derivatives", criterion_06_input_derivatives),
    ("criterion_07_hard_constraint", criterion_07_hard_constraint),
    ("criterion_08_experiment1_a1", criterion_08_experiment1_a1),
    ("criterion_09_experiment1_a100", criterion_09_experiment1_a100),
    ("criterion_10_experiment2_a1", criterion_10_experiment2_a1),
    ("criterion_11_experiment5_k1", criterion_11_experiment5_k1),
    ("criterion_12_tau_balancing", criterion_12_tau_balancing),
    ("criterion_13_loss_quadratic_form", criterion_13_loss_quadratic_form),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    // Keep panic messages of failing criteria out of the summary lines.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, f) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        if let Err(e) = catch_unwind(AssertUnwindSafe(f)) {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            if !msg.starts_with("acceptance") {
                println!("acceptance {name} FAIL (error): {msg}");
            }
            failed.push(name);
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("acceptance failures: {}", failed.join(", "));
        std::process::exit(1);
    }
}
