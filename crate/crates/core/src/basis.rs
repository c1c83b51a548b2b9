//! Dirichlet-Laplacian eigenpairs on the unit hypercube `(0,1)^d`, their
//! second-difference counterparts on uniform interior grids, and index
//! selection for domain-aware feature layers.
//!
//! Mode `k = (k_1, ..., k_d)` has eigenvalue `pi^2 * sum k_j^2` and
//! eigenfunction `2^{d/2} prod sin(k_j pi x_j)`, orthonormal in `L^2`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial dimensions supported by every module of the crate.
pub const MAX_DIM: usize = 3;

pub fn check_dim(d: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::Dimension(d))
    }
}

/// Multi-index of a Dirichlet-Laplacian mode. Every component is `>= 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EigenIndex(Vec<usize>);

impl EigenIndex {
    pub fn new(components: &[i64]) -> Result<Self> {
        check_dim(components.len())?;
        if components.iter().any(|&k| k < 1) {
            return Err(Error::InvalidIndex(components.to_vec()));
        }
        Ok(Self(components.iter().map(|&k| k as usize).collect()))
    }

    pub fn from_components(components: Vec<usize>) -> Result<Self> {
        check_dim(components.len())?;
        if components.contains(&0) {
            return Err(Error::InvalidIndex(components.iter().map(|&k| k as i64).collect()));
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[usize] {
        &self.0
    }

    /// `sum k_j^2`, the eigenvalue in units of `pi^2`.
    pub fn squared_norm(&self) -> usize {
        self.0.iter().map(|k| k * k).sum()
    }

    fn cmp_spectral(&self, other: &Self) -> Ordering {
        self.squared_norm()
            .cmp(&other.squared_norm())
            .then_with(|| self.0.cmp(&other.0))
    }
}

/// Continuum eigenvalue `pi^2 sum k_j^2`.
pub fn eigenvalue(k: &EigenIndex) -> f64 {
    PI * PI * k.squared_norm() as f64
}

/// `2^{d/2} prod_j sin(k_j pi x_j)`.
pub fn eigenfunction(k: &EigenIndex, x: &[f64]) -> f64 {
    let d = k.dim();
    debug_assert_eq!(x.len(), d);
    let mut v = normalisation(d);
    for (kj, xj) in k.components().iter().zip(x) {
        v *= sin_pi(*kj as f64 * xj);
    }
    v
}

/// `sin(pi t)` that returns an exact zero at integer `t`, so eigenfunctions
/// and feature maps vanish bit-exactly on the boundary.
#[inline]
pub fn sin_pi(t: f64) -> f64 {
    if t == t.round() {
        0.0
    } else {
        (PI * t).sin()
    }
}

#[inline]
pub fn normalisation(d: usize) -> f64 {
    match d {
        1 => std::f64::consts::SQRT_2,
        2 => 2.0,
        _ => 2.0 * std::f64::consts::SQRT_2,
    }
}

/// Ordered set of eigenpairs, sorted by eigenvalue with lexicographic
/// tie-breaking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenBasis {
    d: usize,
    indices: Vec<EigenIndex>,
}

impl EigenBasis {
    pub fn new(d: usize, mut indices: Vec<EigenIndex>) -> Result<Self> {
        check_dim(d)?;
        for k in &indices {
            if k.dim() != d {
                return Err(Error::IndexDimension {
                    expected: d,
                    got: k.dim(),
                });
            }
        }
        indices.sort_by(EigenIndex::cmp_spectral);
        Ok(Self { d, indices })
    }

    /// The `count` lowest modes among those with every component `<= max_component`.
    pub fn lowest(d: usize, count: usize, max_component: usize) -> Result<Self> {
        let indices = select_daff_indices(d, count, max_component)?;
        Ok(Self { d, indices })
    }

    /// Every mode with all components `<= max_component` (a full tensor band).
    pub fn band(d: usize, max_component: usize) -> Result<Self> {
        let count = max_component.pow(d as u32);
        Self::lowest(d, count, max_component)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[EigenIndex] {
        &self.indices
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.indices.iter().map(eigenvalue).collect()
    }

    pub fn eigenvalue(&self, k: &EigenIndex) -> Result<f64> {
        self.check(k)?;
        Ok(eigenvalue(k))
    }

    pub fn evaluate(&self, k: &EigenIndex, x: &[f64]) -> Result<f64> {
        self.check(k)?;
        if x.len() != self.d {
            return Err(Error::SizeMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(eigenfunction(k, x))
    }

    fn check(&self, k: &EigenIndex) -> Result<()> {
        if k.dim() != self.d {
            return Err(Error::IndexDimension {
                expected: self.d,
                got: k.dim(),
            });
        }
        Ok(())
    }
}

/// Uniform interior grid with `n` nodes per axis and spacing `h = 1/(n+1)`.
///
/// Nodes are stored row-major over `(k_1, ..., k_d)`: the last axis varies
/// fastest. Every module that works with grid values uses this ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    d: usize,
    n: usize,
}

impl GridSpec {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        check_dim(d)?;
        if n == 0 {
            return Err(Error::InvalidParameter("grid needs n >= 1".into()));
        }
        Ok(Self { d, n })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    /// Number of interior nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// One-based multi-index of the node at flat position `flat`.
    pub fn multi_index(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for axis in (0..self.d).rev() {
            out[axis] = flat % self.n + 1;
            flat /= self.n;
        }
        out
    }

    pub fn node(&self, flat: usize) -> [f64; MAX_DIM] {
        let h = self.h();
        let k = self.multi_index(flat);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.d {
            x[axis] = k[axis] as f64 * h;
        }
        x
    }

    /// All nodes as a flat `len() x d` array.
    pub fn nodes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.d);
        for i in 0..self.len() {
            out.extend_from_slice(&self.node(i)[..self.d]);
        }
        out
    }

    /// Discrete eigenvalues `lambda^{(h)}` in node ordering: position `i`
    /// holds the eigenvalue of the mode whose multi-index equals the
    /// multi-index of node `i`.
    pub fn discrete_eigenvalues(&self) -> Vec<f64> {
        let axis: Vec<f64> = (1..=self.n).map(|k| discrete_axis_eigenvalue(self.h(), k)).collect();
        (0..self.len())
            .map(|i| {
                let k = self.multi_index(i);
                (0..self.d).map(|a| axis[k[a] - 1]).sum()
            })
            .collect()
    }
}

#[inline]
fn discrete_axis_eigenvalue(h: f64, k: usize) -> f64 {
    let s = (PI * k as f64 * h / 2.0).sin();
    4.0 / (h * h) * s * s
}

/// Eigenvalue of the second-difference Laplacian on `grid` for mode `k`:
/// `(4/h^2) sum_j sin^2(pi k_j h / 2)`.
pub fn discrete_eigenvalue(grid: &GridSpec, k: &EigenIndex) -> Result<f64> {
    if k.dim() != grid.dim() {
        return Err(Error::IndexDimension {
            expected: grid.dim(),
            got: k.dim(),
        });
    }
    let h = grid.h();
    k.components()
        .iter()
        .map(|&kj| {
            if kj > grid.n() {
                Err(Error::OutOfBand {
                    component: kj,
                    n: grid.n(),
                })
            } else {
                Ok(discrete_axis_eigenvalue(h, kj))
            }
        })
        .sum()
}

/// The `m` indices with the smallest eigenvalue among all indices whose
/// components are at most `max_component`; ties are broken lexicographically.
pub fn select_daff_indices(d: usize, m: usize, max_component: usize) -> Result<Vec<EigenIndex>> {
    check_dim(d)?;
    let available = max_component.checked_pow(d as u32).unwrap_or(usize::MAX);
    if m > available || max_component == 0 {
        return Err(Error::TooManyIndices {
            requested: m,
            available,
            max_component,
        });
    }
    let mut all: Vec<EigenIndex> = Vec::with_capacity(available);
    let mut k = vec![1usize; d];
    loop {
        all.push(EigenIndex(k.clone()));
        let mut axis = d;
        loop {
            if axis == 0 {
                all.sort_by(EigenIndex::cmp_spectral);
                all.truncate(m);
                return Ok(all);
            }
            axis -= 1;
            if k[axis] < max_component {
                k[axis] += 1;
                break;
            }
            k[axis] = 1;
        }
    }
}

/// Fitted Weyl constants `(c, C)` with `c k^{2/d} <= lambda_(k) <= C k^{2/d}`
/// over the first `count` eigenvalues (sorted ascending).
pub fn weyl_constants(d: usize, count: usize) -> Result<(f64, f64)> {
    let side = (count as f64).powf(1.0 / d as f64).ceil() as usize + 1;
    let basis = EigenBasis::lowest(d, count, side.max(1))?;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (rank, lambda) in basis.eigenvalues().into_iter().enumerate() {
        let scale = ((rank + 1) as f64).powf(2.0 / d as f64);
        lo = lo.min(lambda / scale);
        hi = hi.max(lambda / scale);
    }
    Ok((lo, hi))
}

/// A flat list of points in `[0,1]^d`, `d` coordinates per point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    d: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(d: usize, coords: Vec<f64>) -> Result<Self> {
        check_dim(d)?;
        if !coords.len().is_multiple_of(d) {
            return Err(Error::SizeMismatch {
                expected: coords.len() / d * d,
                got: coords.len(),
            });
        }
        Ok(Self { d, coords })
    }

    /// Interior nodes of `grid` in node ordering.
    pub fn from_grid(grid: &GridSpec) -> Self {
        Self {
            d: grid.dim(),
            coords: grid.nodes(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.d)
    }
}
