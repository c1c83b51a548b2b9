use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svpinn::basis::GridSpec;
use svpinn::net::{glorot_init, Architecture, FeatureMap, NetworkParams};
use svpinn::norms::{empirical_phi_loss, weight_matrix_loss, ResidualField};
use svpinn::problems::{make_experiment1, make_experiment5, ProblemSpec};
use svpinn::sampler::sample_wm_batch;
use svpinn::train::{
    balance_tau, lbfgs_run, pinn_loss, svpinn_loss, Control, FnObjective, LbfgsConfig, LossEvaluator, LossKind,
};

fn perturbed(arch: Architecture, seed: u64) -> NetworkParams {
    let mut p = glorot_init(arch, seed);
    if !arch.hard_boundary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        let n = p.layout().n_weights;
        for v in &mut p.values_mut()[n..] {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    p
}

fn check_gradient(ev: &LossEvaluator, params: &NetworkParams, seed: u64) {
    let (loss, grad) = ev.loss_and_grad(params).unwrap();
    let direct = ev.loss(params).unwrap();
    assert!((loss.total - direct.total).abs() <= 1e-12 * direct.total.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = params.values().len();
    let eps = 1e-6;
    for _ in 0..25 {
        let i = rng.random_range(0..total);
        let mut p = params.clone();
        p.values_mut()[i] += eps;
        let up = ev.loss(&p).unwrap().total;
        p.values_mut()[i] -= 2.0 * eps;
        let down = ev.loss(&p).unwrap().total;
        let fd = (up - down) / (2.0 * eps);
        let scale = fd.abs().max(grad[i].abs()).max(1e-6 * loss.total);
        assert!((fd - grad[i]).abs() / scale < 1e-5, "param {i}: fd {fd} vs {}", grad[i]);
    }
}

fn small_exp5() -> ProblemSpec {
    make_experiment5(1).unwrap().with_grid_n(12).unwrap()
}

#[test]
fn svpinn_gradient_matches_differences() {
    let p = make_experiment1(3.0).unwrap().with_grid_n(31).unwrap();
    let fmap = FeatureMap::daff(1, 8).unwrap();
    let arch = Architecture::new(8, 10, 2).hard(true);
    let batch = sample_wm_batch(&p.grid(), 0.1, 40, 3).unwrap();
    let ev = LossEvaluator::new(&p, &fmap, true, LossKind::Svpinn, Some(batch), 0.0, false).unwrap();
    check_gradient(&ev, &perturbed(arch, 1), 10);
}

#[test]
fn soft_boundary_gradients_match_differences() {
    let p = small_exp5();
    let fmap = FeatureMap::fourier(2, 4, 2.0, 1).unwrap();
    let arch = Architecture::new(8, 6, 2);
    let params = perturbed(arch, 2);
    let batch = sample_wm_batch(&p.grid(), 1.0, 30, 4).unwrap();
    let sv = LossEvaluator::new(&p, &fmap, false, LossKind::Svpinn, Some(batch), 0.7, false).unwrap();
    check_gradient(&sv, &params, 11);
    let pinn = LossEvaluator::new(&p, &fmap, false, LossKind::Pinn, None, 0.7, false).unwrap();
    check_gradient(&pinn, &params, 12);
}

#[test]
fn offset_residuals_keep_gradients_exact() {
    let p = make_experiment1(1.0).unwrap().with_grid_n(31).unwrap();
    let fmap = FeatureMap::daff(1, 6).unwrap();
    let batch = sample_wm_batch(&p.grid(), 0.1, 20, 5).unwrap();
    let ev = LossEvaluator::new(&p, &fmap, true, LossKind::Svpinn, Some(batch), 0.0, true).unwrap();
    check_gradient(&ev, &perturbed(Architecture::new(6, 5, 1).hard(true), 3), 13);
}

/// Readout-only network whose output is exactly the Experiment-1 solution
/// for a = 1: u = sin(2 pi x) + 0.1 sin(pi x), with features sqrt(2) sin(k pi x).
fn exact_exp1_params() -> (FeatureMap, NetworkParams) {
    let fmap = FeatureMap::daff(1, 4).unwrap();
    let arch = Architecture::new(4, 3, 0).hard(true);
    let mut params = NetworkParams::zeros(arch);
    let w = params.layout().w_out;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    params.values_mut()[w] = 0.1 * s;
    params.values_mut()[w + 1] = s;
    (fmap, params)
}

#[test]
fn exact_parameters_have_zero_interior_loss() {
    let p = make_experiment1(1.0).unwrap().with_grid_n(63).unwrap();
    let (fmap, params) = exact_exp1_params();
    let batch = sample_wm_batch(&p.grid(), 0.1, 100, 1).unwrap();
    let sv = svpinn_loss(&params, &fmap, &p, &batch, 0.0).unwrap();
    assert!(sv.interior < 1e-12, "{}", sv.interior);
    assert_eq!(sv.boundary, 0.0);
    assert_eq!(sv.total, sv.interior);
    let pinn = pinn_loss(&params, &fmap, &p, 0.0).unwrap();
    assert!(pinn.interior < 1e-12, "{}", pinn.interior);
}

#[test]
fn svpinn_loss_matches_quadratic_form() {
    let p = make_experiment1(3.0).unwrap().with_grid_n(15).unwrap();
    let fmap = FeatureMap::daff(1, 6).unwrap();
    let params = perturbed(Architecture::new(6, 8, 2).hard(true), 4);
    let batch = sample_wm_batch(&p.grid(), 0.1, 50, 6).unwrap();
    let ev = LossEvaluator::new(&p, &fmap, true, LossKind::Svpinn, Some(batch.clone()), 0.0, false).unwrap();
    let r = ev.residuals(&params);
    let field = ResidualField::new(p.grid(), r).unwrap();
    let quad = weight_matrix_loss(&field, &batch).unwrap();
    let loss = svpinn_loss(&params, &fmap, &p, &batch, 0.0).unwrap();
    assert!(((loss.interior - quad) / quad).abs() < 1e-10);
    assert!(((empirical_phi_loss(&field, &batch).unwrap() - quad) / quad).abs() < 1e-10);
}

#[test]
fn pinn_loss_is_mean_square_residual() {
    let p = make_experiment1(5.0).unwrap().with_grid_n(63).unwrap();
    let fmap = FeatureMap::daff(1, 8).unwrap();
    let params = perturbed(Architecture::new(8, 6, 2).hard(true), 5);
    let ev = LossEvaluator::new(&p, &fmap, true, LossKind::Pinn, None, 0.0, false).unwrap();
    let r = ev.residuals(&params);
    let mut naive = 0.0;
    for v in &r {
        naive += v * v;
    }
    naive /= r.len() as f64;
    let loss = pinn_loss(&params, &fmap, &p, 0.0).unwrap();
    assert!(((loss.interior - naive) / naive).abs() < 1e-12);
    assert_eq!(ev.interior_loss(&[2.0; 17]), 4.0);
}

#[test]
fn grid_mismatch_is_rejected() {
    let p = make_experiment1(1.0).unwrap().with_grid_n(15).unwrap();
    let fmap = FeatureMap::daff(1, 4).unwrap();
    let params = glorot_init(Architecture::new(4, 3, 1).hard(true), 0);
    let batch = sample_wm_batch(&GridSpec::new(1, 31).unwrap(), 0.1, 5, 0).unwrap();
    assert!(svpinn_loss(&params, &fmap, &p, &batch, 0.0).is_err());
}

#[test]
fn balanced_tau_equalises_terms() {
    let p = small_exp5();
    let fmap = FeatureMap::fourier(2, 8, 5.0, 2).unwrap();
    let params = glorot_init(Architecture::new(16, 12, 2), 7);
    let batch = sample_wm_batch(&p.grid(), 1.0, 200, 8).unwrap();
    let mut ev = LossEvaluator::new(&p, &fmap, false, LossKind::Svpinn, Some(batch.clone()), 1.0, false).unwrap();
    let tau = balance_tau(&params, &ev).unwrap();
    ev.set_batch(batch.with_tau(tau).unwrap()).unwrap();
    let l = ev.loss(&params).unwrap();
    assert!(((l.interior - l.boundary) / l.boundary).abs() < 1e-10);

    let hard = glorot_init(Architecture::new(16, 12, 2).hard(true), 7);
    let daff = FeatureMap::daff(2, 16).unwrap();
    let ev = LossEvaluator::new(&p, &daff, true, LossKind::Svpinn, Some(batch), 0.0, false).unwrap();
    assert!(balance_tau(&hard, &ev).is_err());
}

#[test]
fn lbfgs_solves_rosenbrock() {
    let rosen = |x: &[f64]| {
        let (a, b) = (1.0, 100.0);
        let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
        let g = vec![
            -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]),
            2.0 * b * (x[1] - x[0] * x[0]),
        ];
        (f, g)
    };
    let mut obj = FnObjective(rosen);
    let report = lbfgs_run(&LbfgsConfig::default(), vec![-1.2, 1.0], &mut obj, 100, |_, _, _| {
        Ok(Control::Continue)
    })
    .unwrap();
    assert!(report.steps <= 100);
    assert!(
        (report.theta[0] - 1.0).abs() < 1e-6 && (report.theta[1] - 1.0).abs() < 1e-6,
        "{:?}",
        report.theta
    );
    assert_eq!(report.armijo_violations, 0);
}
