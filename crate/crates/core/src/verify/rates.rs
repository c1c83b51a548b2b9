//! Convergence-rate studies: trapezoidal quadrature, discrete eigenvalues
//! and the decay of the corrected loss estimator in `h` and `N`.

use std::f64::consts::{E, PI, SQRT_2};

use super::{loglog_slope, num, sorted_mean, Check, StudyOptions, StudyReport, Table};
use crate::basis::{discrete_eigenvalue, eigenvalue, EigenIndex, GridSpec};
use crate::error::{Error, Result};
use crate::norms::{corrected_phi_loss, correction_factor, expected_phi_loss, pairwise_sum, ResidualField};
use crate::sampler::sample_wm_batch;

const GRID_SIZES: [usize; 6] = [15, 31, 63, 127, 255, 511];

fn sizes_for(d: usize, quick: bool) -> Vec<usize> {
    let max = match d {
        1 | 2 => 511,
        _ => 127,
    };
    let mut v: Vec<usize> = GRID_SIZES.iter().copied().filter(|n| *n <= max).collect();
    if quick {
        v.pop();
    }
    v
}

/// `h^d sum_i u(x_i)` over the interior nodes; the boundary terms vanish.
fn trapezoid(grid: &GridSpec, u: impl Fn(&[f64]) -> f64) -> f64 {
    let d = grid.dim();
    let vals: Vec<f64> = (0..grid.len()).map(|i| u(&grid.node(i)[..d])).collect();
    grid.h().powi(d as i32) * pairwise_sum(&vals)
}

/// Trapezoidal-rule errors for `prod sin(pi x_j)` and
/// `prod e^{x_j} sin(pi x_j)` against their closed-form integrals.
pub fn study_trapezoid(d: usize, quick: bool) -> Result<StudyReport> {
    crate::basis::check_dim(d)?;
    let sizes = sizes_for(d, quick);
    let sin_exact = (2.0 / PI).powi(d as i32);
    let exp_exact = (PI * (1.0 + E) / (1.0 + PI * PI)).powi(d as i32);
    let mut table = Table::new(&["d", "family", "n", "h", "quadrature", "exact", "abs_error"]);
    let mut report_rows = Vec::new();
    let mut zero_max: f64 = 0.0;
    for &n in &sizes {
        let grid = GridSpec::new(d, n)?;
        let s = trapezoid(&grid, |x| x.iter().map(|t| (PI * t).sin()).product());
        let e = trapezoid(&grid, |x| x.iter().map(|t| t.exp() * (PI * t).sin()).product());
        let z = trapezoid(&grid, |_| 0.0);
        zero_max = zero_max.max(z.abs());
        for (family, q, exact) in [("sin", s, sin_exact), ("sin_exp", e, exp_exact)] {
            let err = (q - exact).abs();
            table.push(vec![
                d.to_string(),
                family.into(),
                n.to_string(),
                num(grid.h()),
                num(q),
                num(exact),
                num(err),
            ]);
            report_rows.push((family, grid.h(), err));
        }
    }
    let mut report = StudyReport::new(&format!("trapezoid_d{d}"), quick, table);
    report.param("d", d);
    report.param("sizes", &sizes);
    let tol = if d == 1 { 0.1 } else { 0.15 };
    for family in ["sin", "sin_exp"] {
        let (h, err): (Vec<f64>, Vec<f64>) = report_rows.iter().filter(|r| r.0 == family).map(|r| (r.1, r.2)).unzip();
        let slope = loglog_slope(&h, &err)?;
        report.slopes.insert(family.into(), slope);
        report.check(Check::near(format!("slope_{family}"), slope, 2.0, tol).enforced(!quick));
    }
    report.check(Check::below("zero_function_error", zero_max, 0.0));
    Ok(report)
}

/// Errors of the closed-form discrete eigenvalues of the diagonal modes
/// `(k, .., k)`, `k in {1, 2, 4}`, and the `lambda^2` scaling at the finest grid.
pub fn study_eigen_convergence(d: usize, quick: bool) -> Result<StudyReport> {
    crate::basis::check_dim(d)?;
    let mut sizes: Vec<usize> = GRID_SIZES.to_vec();
    if quick {
        sizes.pop();
    }
    let modes = [1usize, 2, 4];
    let mut table = Table::new(&["d", "k", "n", "h", "lambda", "lambda_h", "abs_error"]);
    let mut errors = vec![Vec::new(); modes.len()];
    let mut hs = Vec::new();
    for &n in &sizes {
        let grid = GridSpec::new(d, n)?;
        hs.push(grid.h());
        for (m, &k) in modes.iter().enumerate() {
            let idx = EigenIndex::from_components(vec![k; d])?;
            let exact = eigenvalue(&idx);
            let disc = discrete_eigenvalue(&grid, &idx)?;
            let err = (exact - disc).abs();
            errors[m].push(err);
            table.push(vec![
                d.to_string(),
                k.to_string(),
                n.to_string(),
                num(grid.h()),
                num(exact),
                num(disc),
                num(err),
            ]);
        }
    }
    let mut report = StudyReport::new(&format!("eigen_d{d}"), quick, table);
    report.param("d", d);
    report.param("sizes", &sizes);
    for (m, &k) in modes.iter().enumerate() {
        let slope = loglog_slope(&hs, &errors[m])?;
        report.slopes.insert(format!("k{k}"), slope);
        report.check(Check::near(format!("slope_k{k}"), slope, 2.0, 0.1).enforced(!quick));
    }
    let last = hs.len() - 1;
    let ratio = errors[2][last] / errors[0][last];
    let l1 = eigenvalue(&EigenIndex::from_components(vec![1; d])?);
    let l4 = eigenvalue(&EigenIndex::from_components(vec![4; d])?);
    let predicted = (l4 / l1).powi(2);
    report.values.insert("ratio_k4_k1".into(), ratio);
    report.values.insert("ratio_predicted".into(), predicted);
    report.check(Check::near("lambda_squared_scaling", ratio / predicted, 1.0, 0.2));
    Ok(report)
}

/// The synthetic residual `prod sin(pi x_j) + prod 4 x_j (1 - x_j)`: smooth,
/// zero on the boundary, in `H^2` but not `H^{5/2}`, with closed-form sine
/// coefficients.
pub fn synthetic_residual(x: &[f64]) -> f64 {
    let s: f64 = x.iter().map(|t| (PI * t).sin()).product();
    let p: f64 = x.iter().map(|t| 4.0 * t * (1.0 - t)).product();
    s + p
}

fn sine_coefficient(k: usize) -> f64 {
    if k == 1 {
        1.0 / SQRT_2
    } else {
        0.0
    }
}

fn taper_coefficient(k: usize) -> f64 {
    if k % 2 == 1 {
        16.0 * SQRT_2 / (k as f64 * PI).powi(3)
    } else {
        0.0
    }
}

/// `||R||_Phi^2 = tau^2 sum_k a_k^2 / (1 + lambda_k)` for [`synthetic_residual`],
/// summed over odd multi-indices up to a cut-off far beyond double precision.
pub fn polynomial_taper_phi_norm(d: usize, tau: f64) -> Result<f64> {
    crate::basis::check_dim(d)?;
    let cutoff = match d {
        1 => 20001,
        2 => 2001,
        _ => 201,
    };
    let odd: Vec<usize> = (1..=cutoff).step_by(2).collect();
    let m = odd.len();
    let total = m.pow(d as u32);
    let mut terms = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let ks: Vec<usize> = idx.iter().map(|&i| odd[i]).collect();
        let a = ks.iter().map(|&k| sine_coefficient(k)).product::<f64>()
            + ks.iter().map(|&k| taper_coefficient(k)).product::<f64>();
        let lambda = PI * PI * ks.iter().map(|&k| (k * k) as f64).sum::<f64>();
        terms.push(a * a / (1.0 + lambda));
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < m {
                break;
            }
            idx[j] = 0;
        }
    }
    terms.sort_by(f64::total_cmp);
    Ok(tau * tau * pairwise_sum(&terms))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyOptions {
    pub d: usize,
    pub tau: f64,
    /// Grids for the `h` sweep (evaluated through the closed-form expectation).
    pub h_sizes: Vec<usize>,
    /// Fixed grid for the `N` sweep.
    pub n_fixed: usize,
    pub sample_sizes: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub quick: bool,
}

impl ConsistencyOptions {
    pub fn defaults(d: usize, opts: StudyOptions) -> Self {
        let (h_sizes, n_fixed, sample_sizes, reps) = match d {
            1 => (GRID_SIZES.to_vec(), 255, vec![100, 300, 1000, 3000, 10000], 200),
            2 => (vec![15, 31, 63, 127, 255], 15, vec![100, 300, 1000, 3000], 100),
            _ => (vec![7, 15, 31, 63], 7, vec![100, 300, 1000, 3000], 50),
        };
        Self {
            d,
            tau: 1.0,
            h_sizes,
            n_fixed,
            sample_sizes,
            repetitions: if opts.quick { reps / 2 } else { reps },
            seed: opts.seed,
            quick: opts.quick,
        }
    }
}

/// Deviation of the corrected estimator `(n^2 h)^d L` from `||R||_Phi^2`.
///
/// The `h` sweep uses the exact batch expectation of the estimator (the
/// `N -> infinity` limit), since Monte Carlo noise at any affordable `N`
/// would hide the discretisation bias; the `N` sweep averages
/// `|estimate - ||R||_Phi^2|` over independent batches on a fixed grid.
pub fn study_consistency(d: usize, opts: &ConsistencyOptions) -> Result<StudyReport> {
    if opts.d != d {
        return Err(Error::InvalidParameter(format!(
            "options are for d = {}, not {d}",
            opts.d
        )));
    }
    if opts.repetitions == 0 {
        return Err(Error::InvalidParameter("consistency study needs repetitions".into()));
    }
    let exact = polynomial_taper_phi_norm(d, opts.tau)?;
    let mut table = Table::new(&["sweep", "n", "h", "samples", "repetitions", "deviation", "phi_norm_sq"]);

    let mut hs = Vec::new();
    let mut h_dev = Vec::new();
    for &n in &opts.h_sizes {
        let grid = GridSpec::new(d, n)?;
        let field = ResidualField::from_fn(grid, synthetic_residual)?;
        let limit = correction_factor(&grid) * expected_phi_loss(&field, opts.tau)?;
        let dev = (limit - exact).abs();
        hs.push(grid.h());
        h_dev.push(dev);
        table.push(vec![
            "h".into(),
            n.to_string(),
            num(grid.h()),
            "inf".into(),
            "0".into(),
            num(dev),
            num(exact),
        ]);
    }

    let grid = GridSpec::new(d, opts.n_fixed)?;
    let field = ResidualField::from_fn(grid, synthetic_residual)?;
    let mut ns = Vec::new();
    let mut n_dev = Vec::new();
    for (si, &samples) in opts.sample_sizes.iter().enumerate() {
        let devs: Vec<f64> = (0..opts.repetitions)
            .map(|r| {
                let seed = opts.seed.wrapping_add(((si as u64) << 32) | r as u64);
                let batch = sample_wm_batch(&grid, opts.tau, samples, seed)?;
                Ok((corrected_phi_loss(&field, &batch)? - exact).abs())
            })
            .collect::<Result<_>>()?;
        let mean = sorted_mean(&devs);
        ns.push(samples as f64);
        n_dev.push(mean);
        table.push(vec![
            "N".into(),
            opts.n_fixed.to_string(),
            num(grid.h()),
            samples.to_string(),
            opts.repetitions.to_string(),
            num(mean),
            num(exact),
        ]);
    }

    let zero = ResidualField::new(grid, vec![0.0; grid.len()])?;
    let zero_batch = sample_wm_batch(&grid, opts.tau, 10, opts.seed)?;
    let zero_dev = corrected_phi_loss(&zero, &zero_batch)?.abs() + expected_phi_loss(&zero, opts.tau)?.abs();

    let mut report = StudyReport::new(&format!("consistency_d{d}"), opts.quick, table);
    report.param("d", d);
    report.param("tau", opts.tau);
    report.param("h_sizes", &opts.h_sizes);
    report.param("n_fixed", opts.n_fixed);
    report.param("sample_sizes", &opts.sample_sizes);
    report.param("repetitions", opts.repetitions);
    report.param("seed", opts.seed);
    report.values.insert("phi_norm_sq".into(), exact);
    let h_slope = loglog_slope(&hs, &h_dev)?;
    let n_slope = loglog_slope(&ns, &n_dev)?;
    report.slopes.insert("h".into(), h_slope);
    report.slopes.insert("N".into(), n_slope);
    let h_floor = 2.0 - d as f64 / 2.0 - 0.1;
    report.check(Check::at_least("h_slope", h_slope, h_floor).enforced(!opts.quick));
    report.check(Check::near("N_slope", n_slope, -0.5, 0.1).enforced(!opts.quick));
    report.check(Check::below("zero_residual_deviation", zero_dev, 0.0));
    Ok(report)
}
