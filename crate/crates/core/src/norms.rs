//! Spectral dual norms, the Phi-norm, discrete inner products and the
//! empirical losses built from sampled test functions.

use rayon::prelude::*;

use crate::basis::GridSpec;
use crate::dst::dst1;
use crate::error::{Error, Result};
use crate::sampler::TestFunctionBatch;

/// Pairs `(lambda_k, a_k)` with `a_k` the residual applied to the k-th
/// normalised eigenfunction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpectralCoefficients {
    pairs: Vec<(f64, f64)>,
}

impl SpectralCoefficients {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(&(l, _)) = pairs.iter().find(|(l, _)| !(*l > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "eigenvalues must be positive, got {l}"
            )));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Residual `L u - f` sampled at the interior nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualField {
    pub grid: GridSpec,
    pub r: Vec<f64>,
}

impl ResidualField {
    pub fn new(grid: GridSpec, r: Vec<f64>) -> Result<Self> {
        if r.len() != grid.len() {
            return Err(Error::SizeMismatch {
                expected: grid.len(),
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("residual has non-finite entries".into()));
        }
        Ok(Self { grid, r })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = grid.dim();
        let r = (0..grid.len()).map(|i| f(&grid.node(i)[..d])).collect();
        Self::new(grid, r)
    }
}

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation with a fixed split, so the result depends
/// only on the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= PAIRWISE_BLOCK {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Pairwise-summed dot product.
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= PAIRWISE_BLOCK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let mid = a.len() / 2;
    pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
}

/// `sum_k lambda_k^{-s} a_k^2` over the provided coefficients.
pub fn dual_norm_sq(coeffs: &SpectralCoefficients, s: f64) -> f64 {
    coeffs.pairs.iter().map(|(l, a)| l.powf(-s) * a * a).sum()
}

/// `tau^2 sum_k (1 + lambda_k)^{-1} a_k^2`.
pub fn phi_norm_sq_exact(coeffs: &SpectralCoefficients, tau: f64) -> f64 {
    tau * tau * phi_norm_unit(coeffs)
}

fn phi_norm_unit(coeffs: &SpectralCoefficients) -> f64 {
    coeffs.pairs.iter().map(|(l, a)| a * a / (1.0 + l)).sum()
}

/// Ratio `||R||_{-1}^2 / ||R||_Phi^2` with the equivalence constants
/// computed over the same eigenvalue set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalenceBounds {
    pub ratio: f64,
    /// `inf_k (1 + lambda_k) / (tau^2 lambda_k)`
    pub lower: f64,
    /// `sup_k (1 + lambda_k) / (tau^2 lambda_k)`
    pub upper: f64,
}

impl EquivalenceBounds {
    pub fn contains_ratio(&self) -> bool {
        // Both ends are attained by single-mode sums, allow rounding there.
        let slack = 1e-12 * self.upper;
        self.lower - slack <= self.ratio && self.ratio <= self.upper + slack
    }
}

pub fn equivalence_ratio_bounds(coeffs: &SpectralCoefficients, tau: f64) -> Result<EquivalenceBounds> {
    if coeffs.pairs.iter().all(|(_, a)| *a == 0.0) {
        return Err(Error::UndefinedRatio);
    }
    let tau2 = tau * tau;
    let (lower, upper) = coeffs
        .pairs
        .iter()
        .map(|(l, _)| (1.0 + l) / (tau2 * l))
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), w| (lo.min(w), hi.max(w)));
    Ok(EquivalenceBounds {
        ratio: dual_norm_sq(coeffs, 1.0) / phi_norm_sq_exact(coeffs, tau),
        lower,
        upper,
    })
}

/// `h^d sum u v` over the interior nodes.
pub fn discrete_inner(u: &[f64], v: &[f64], grid: &GridSpec) -> Result<f64> {
    for len in [u.len(), v.len()] {
        if len != grid.len() {
            return Err(Error::SizeMismatch {
                expected: grid.len(),
                got: len,
            });
        }
    }
    Ok(grid.h().powi(grid.dim() as i32) * pairwise_dot(u, v))
}

/// `(1/N_c) sum_i R(x_i) phi_j(x_i)` for every row `j` of the batch.
pub fn phi_pairings(residual: &[f64], batch: &TestFunctionBatch) -> Vec<f64> {
    let nc = batch.cols() as f64;
    (0..batch.rows())
        .into_par_iter()
        .map(|j| pairwise_dot(batch.row(j), residual) / nc)
        .collect()
}

fn check_grids(residual: &ResidualField, batch: &TestFunctionBatch) -> Result<()> {
    if residual.grid != batch.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// `(1/N) sum_j [(1/N_c) sum_i R(x_i) phi_j(x_i)]^2`.
pub fn empirical_phi_loss(residual: &ResidualField, batch: &TestFunctionBatch) -> Result<f64> {
    check_grids(residual, batch)?;
    let p: Vec<f64> = phi_pairings(&residual.r, batch);
    Ok(pairwise_dot(&p, &p) / batch.rows() as f64)
}

/// `(n^2 h)^d` times the empirical loss, the estimator of `||R||_Phi^2`.
pub fn corrected_phi_loss(residual: &ResidualField, batch: &TestFunctionBatch) -> Result<f64> {
    Ok(correction_factor(&residual.grid) * empirical_phi_loss(residual, batch)?)
}

/// `(n^2 h)^d`.
pub fn correction_factor(grid: &GridSpec) -> f64 {
    let n = grid.n() as f64;
    (n * n * grid.h()).powi(grid.dim() as i32)
}

/// Closed-form expectation of the empirical loss over batches at scale
/// `tau`: `tau^2 h^{-d} n^{-2d} sum_k |<R, phi_k>_h|^2 / (1 + lambda_k^{(h)})`,
/// with the discrete pairings obtained from one DST of the residual.
pub fn expected_phi_loss(residual: &ResidualField, tau: f64) -> Result<f64> {
    let grid = residual.grid;
    let d = grid.dim() as i32;
    let h = grid.h();
    let hat = dst1(&residual.r, &grid)?;
    let terms: Vec<f64> = hat
        .iter()
        .zip(grid.discrete_eigenvalues())
        .map(|(c, l)| {
            // <R, phi_k>_h = h^{d/2} DST(R)_k
            let pairing_sq = h.powi(d) * c * c;
            pairing_sq / (1.0 + l)
        })
        .collect();
    let n = grid.n() as f64;
    Ok(tau * tau * h.powi(-d) * n.powi(-2 * d) * pairwise_sum(&terms))
}

/// The same loss written as a weighted quadratic form in the residuals,
/// `(1/(N N_c^2)) [sum_i w_ii R_i^2 + sum_{i != i'} w_ii' R_i R_i']` with
/// `w_ii' = sum_j phi_j(x_i) phi_j(x_i')`. Builds the dense weight matrix,
/// so intended for small grids only.
pub fn weight_matrix_loss(residual: &ResidualField, batch: &TestFunctionBatch) -> Result<f64> {
    check_grids(residual, batch)?;
    let nc = batch.cols();
    let mut weights = vec![0.0; nc * nc];
    for j in 0..batch.rows() {
        let row = batch.row(j);
        for i in 0..nc {
            for k in 0..nc {
                weights[i * nc + k] += row[i] * row[k];
            }
        }
    }
    let r = &residual.r;
    let mut diagonal = 0.0;
    let mut cross = 0.0;
    for i in 0..nc {
        for k in 0..nc {
            let term = weights[i * nc + k] * r[i] * r[k];
            if i == k {
                diagonal += term;
            } else {
                cross += term;
            }
        }
    }
    Ok((diagonal + cross) / (batch.rows() as f64 * (nc * nc) as f64))
}

/// Mean squared boundary mismatch `(1/N_b) sum (u_b - g_b)^2`.
pub fn boundary_penalty(u: &[f64], g: &[f64]) -> Result<f64> {
    if u.len() != g.len() {
        return Err(Error::SizeMismatch {
            expected: g.len(),
            got: u.len(),
        });
    }
    if u.is_empty() {
        return Ok(0.0);
    }
    let sq: Vec<f64> = u.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok(pairwise_sum(&sq) / u.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{eigenfunction, EigenIndex};
    use crate::sampler::sample_wm_batch;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn coeffs(pairs: &[(f64, f64)]) -> SpectralCoefficients {
        SpectralCoefficients::new(pairs.to_vec()).unwrap()
    }

    #[test]
    fn dual_norm_examples() {
        let single = coeffs(&[(PI * PI, 1.0)]);
        assert_relative_eq!(dual_norm_sq(&single, 1.0), 0.101_321_183_642_337_77, epsilon = 1e-15);
        assert_eq!(dual_norm_sq(&coeffs(&[(1.0, 0.0), (4.0, 0.0)]), 1.0), 0.0);
        let set = coeffs(&[(2.0, 3.0), (5.0, -1.0)]);
        assert_relative_eq!(dual_norm_sq(&set, 0.0), 10.0, epsilon = 1e-15);
    }

    #[test]
    fn phi_norm_examples() {
        let single = coeffs(&[(PI * PI, 1.0)]);
        assert_relative_eq!(phi_norm_sq_exact(&single, 1.0), 1.0 / (1.0 + PI * PI), epsilon = 1e-15);
        assert!((phi_norm_sq_exact(&single, 1.0) - 0.091_999_7).abs() < 1e-7);
        let set = coeffs(&[(3.0, 0.2), (9.0, 1.5), (40.0, -2.0)]);
        assert_relative_eq!(
            phi_norm_sq_exact(&set, 3.0),
            9.0 * phi_norm_sq_exact(&set, 1.0),
            max_relative = 1e-15
        );
    }

    #[test]
    fn equivalence_single_mode_is_exact() {
        let l = 4.0 * PI * PI;
        let b = equivalence_ratio_bounds(&coeffs(&[(PI * PI, 0.0), (l, 2.5)]), 0.5).unwrap();
        assert_relative_eq!(b.ratio, (1.0 + l) / (0.25 * l), max_relative = 1e-14);
        assert!(b.contains_ratio());
        let first = equivalence_ratio_bounds(&coeffs(&[(PI * PI, 1.0)]), 1.0).unwrap();
        assert_relative_eq!(first.upper, (1.0 + PI * PI) / (PI * PI), epsilon = 1e-14);
        assert!((first.upper - 1.1013).abs() < 1e-4);
    }

    #[test]
    fn equivalence_lower_constant_tends_to_inverse_tau_squared() {
        let pairs: Vec<_> = (1..=2000).map(|k| (PI * PI * (k * k) as f64, 1.0)).collect();
        let b = equivalence_ratio_bounds(&coeffs(&pairs), 1.0).unwrap();
        assert!((b.lower - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_coefficients_have_no_ratio() {
        assert!(matches!(
            equivalence_ratio_bounds(&coeffs(&[(1.0, 0.0)]), 1.0),
            Err(Error::UndefinedRatio)
        ));
    }

    #[test]
    fn discrete_inner_examples() {
        let g = GridSpec::new(1, 63).unwrap();
        let k1 = EigenIndex::new(&[1]).unwrap();
        let k2 = EigenIndex::new(&[5]).unwrap();
        let phi1: Vec<f64> = (0..g.len()).map(|i| eigenfunction(&k1, &g.node(i)[..1])).collect();
        let phi2: Vec<f64> = (0..g.len()).map(|i| eigenfunction(&k2, &g.node(i)[..1])).collect();
        assert!((discrete_inner(&phi1, &phi1, &g).unwrap() - 1.0).abs() < 2e-3);
        assert!(discrete_inner(&phi1, &phi2, &g).unwrap().abs() < 1e-14);
        assert_eq!(discrete_inner(&vec![0.0; 63], &phi1, &g).unwrap(), 0.0);
        assert!(discrete_inner(&phi1[..10], &phi1, &g).is_err());
    }

    #[test]
    fn empirical_loss_of_zero_residual_is_zero() {
        let g = GridSpec::new(2, 7).unwrap();
        let batch = sample_wm_batch(&g, 1.0, 20, 1).unwrap();
        let r = ResidualField::new(g, vec![0.0; g.len()]).unwrap();
        assert_eq!(empirical_phi_loss(&r, &batch).unwrap(), 0.0);
        assert_eq!(corrected_phi_loss(&r, &batch).unwrap(), 0.0);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let batch = sample_wm_batch(&GridSpec::new(1, 7).unwrap(), 1.0, 3, 1).unwrap();
        let r = ResidualField::new(GridSpec::new(1, 8).unwrap(), vec![1.0; 8]).unwrap();
        assert!(matches!(empirical_phi_loss(&r, &batch), Err(Error::GridMismatch)));
    }

    #[test]
    fn correction_factor_example() {
        assert_relative_eq!(correction_factor(&GridSpec::new(1, 3).unwrap()), 2.25, epsilon = 1e-15);
    }

    #[test]
    fn boundary_penalty_examples() {
        assert_eq!(boundary_penalty(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(boundary_penalty(&[3.0, 2.0, 0.0], &[1.0, 0.0, -2.0]).unwrap(), 4.0);
        assert_eq!(boundary_penalty(&[1.0, -1.0, 2.0, 0.0], &[0.0; 4]).unwrap(), 1.5);
        assert!(boundary_penalty(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(pairwise_dot(&v, &v), (0..1000).map(|i| (i * i) as f64).sum::<f64>());
    }
}
