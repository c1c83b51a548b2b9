//! Input encodings and their exact input derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basis::{check_dim, normalisation, select_daff_indices, sin_pi, EigenIndex};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureKind {
    /// Dirichlet-Laplacian eigenfunctions; vanish on the boundary.
    Daff(Vec<EigenIndex>),
    /// `[sin(A x), cos(A x)]` with Gaussian `A` (`rows x d`, row-major).
    Fourier {
        matrix: Vec<f64>,
        sigma: f64,
        seed: u64,
    },
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    d: usize,
    kind: FeatureKind,
}

impl FeatureMap {
    /// The `m` lowest modes (ties lexicographic). A component of a mode
    /// among the lowest `m` never exceeds `m`, so that bound is exhaustive.
    pub fn daff(d: usize, m: usize) -> Result<Self> {
        Self::daff_with(d, select_daff_indices(d, m, m.max(1))?)
    }

    pub fn daff_with(d: usize, indices: Vec<EigenIndex>) -> Result<Self> {
        check_dim(d)?;
        if let Some(k) = indices.iter().find(|k| k.dim() != d) {
            return Err(Error::IndexDimension {
                expected: d,
                got: k.dim(),
            });
        }
        Ok(Self {
            d,
            kind: FeatureKind::Daff(indices),
        })
    }

    /// `rows` Gaussian frequency rows with standard deviation `sigma`.
    pub fn fourier(d: usize, rows: usize, sigma: f64, seed: u64) -> Result<Self> {
        check_dim(d)?;
        if !(sigma > 0.0) || rows == 0 {
            return Err(Error::InvalidParameter(format!(
                "fourier features need rows >= 1 and sigma > 0, got {rows}, {sigma}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = (0..rows * d)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::fourier_with(d, matrix, sigma, seed)
    }

    pub fn fourier_with(d: usize, matrix: Vec<f64>, sigma: f64, seed: u64) -> Result<Self> {
        check_dim(d)?;
        if matrix.is_empty() || !matrix.len().is_multiple_of(d) {
            return Err(Error::SizeMismatch {
                expected: (matrix.len() / d).max(1) * d,
                got: matrix.len(),
            });
        }
        Ok(Self {
            d,
            kind: FeatureKind::Fourier { matrix, sigma, seed },
        })
    }

    pub fn identity(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self {
            d,
            kind: FeatureKind::Identity,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn is_daff(&self) -> bool {
        matches!(self.kind, FeatureKind::Daff(_))
    }

    pub fn output_dim(&self) -> usize {
        match &self.kind {
            FeatureKind::Daff(idx) => idx.len(),
            FeatureKind::Fourier { matrix, .. } => 2 * (matrix.len() / self.d),
            FeatureKind::Identity => self.d,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let m = self.output_dim();
        let mut out = vec![0.0; m];
        self.jet_into(x, 1, m, &mut out);
        out
    }

    /// Writes the feature jet of one point into a channel-major block:
    /// channel `c` of feature `i` goes to `out[c * stride + i]`. Channels
    /// are value, then `d` first derivatives, then `d` pure second
    /// derivatives; only the first `channels` are written (1 or `1 + 2d`).
    pub fn jet_into(&self, x: &[f64], channels: usize, stride: usize, out: &mut [f64]) {
        let d = self.d;
        debug_assert_eq!(x.len(), d);
        debug_assert!(channels == 1 || channels == 1 + 2 * d);
        let derivs = channels > 1;
        match &self.kind {
            FeatureKind::Daff(indices) => {
                let c = normalisation(d);
                for (i, k) in indices.iter().enumerate() {
                    let mut s = [0.0; 3];
                    let mut co = [0.0; 3];
                    let mut w = [0.0; 3];
                    for j in 0..d {
                        let kj = k.components()[j] as f64;
                        w[j] = kj * std::f64::consts::PI;
                        s[j] = sin_pi(kj * x[j]);
                        if derivs {
                            co[j] = (w[j] * x[j]).cos();
                        }
                    }
                    let value = c * s[..d].iter().product::<f64>();
                    out[i] = value;
                    if derivs {
                        for j in 0..d {
                            let mut g = c * w[j] * co[j];
                            for (a, sa) in s[..d].iter().enumerate() {
                                if a != j {
                                    g *= sa;
                                }
                            }
                            out[(1 + j) * stride + i] = g;
                            out[(1 + d + j) * stride + i] = -w[j] * w[j] * value;
                        }
                    }
                }
            }
            FeatureKind::Fourier { matrix, .. } => {
                let rows = matrix.len() / d;
                for r in 0..rows {
                    let a = &matrix[r * d..(r + 1) * d];
                    let arg: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
                    let (sn, cs) = arg.sin_cos();
                    out[r] = sn;
                    out[rows + r] = cs;
                    if derivs {
                        for j in 0..d {
                            out[(1 + j) * stride + r] = a[j] * cs;
                            out[(1 + j) * stride + rows + r] = -a[j] * sn;
                            out[(1 + d + j) * stride + r] = -a[j] * a[j] * sn;
                            out[(1 + d + j) * stride + rows + r] = -a[j] * a[j] * cs;
                        }
                    }
                }
            }
            FeatureKind::Identity => {
                for j in 0..d {
                    out[j] = x[j];
                    if derivs {
                        for a in 0..d {
                            out[(1 + a) * stride + j] = if a == j { 1.0 } else { 0.0 };
                            out[(1 + d + a) * stride + j] = 0.0;
                        }
                    }
                }
            }
        }
    }
}
