//! Rough random test functions drawn from the discretised Whittle-Matern
//! field `(1 - Delta_h)^{1/2} Phi = tau W` with zero Dirichlet data.
//!
//! The grid path solves the discrete SPDE exactly with two orthonormal DST-I
//! passes. The truncated spectral path evaluates the Karhunen-Loeve sum
//! directly and serves as an independent cross-check.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::basis::{eigenfunction, EigenBasis, EigenIndex, GridSpec};
use crate::dst::DstPlan;
use crate::error::{Error, Result};

/// Generator for stream `stream` of seed `seed`. Rows of a batch use their
/// row number as the stream, so any row can be regenerated independently.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// White-noise values, one standard Gaussian per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField {
    pub grid: GridSpec,
    pub w: Vec<f64>,
}

impl NoiseField {
    pub fn draw(grid: GridSpec, seed: u64, stream: u64) -> Self {
        let mut rng = stream_rng(seed, stream);
        let mut w = vec![0.0; grid.len()];
        fill_normal(&mut rng, &mut w);
        Self { grid, w }
    }
}

fn fill_normal<R: Rng>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

/// `N` sampled test functions evaluated on every interior node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunctionBatch {
    grid: GridSpec,
    tau: f64,
    seed: u64,
    rows: usize,
    values: Vec<f64>,
}

impl TestFunctionBatch {
    pub fn from_values(grid: GridSpec, tau: f64, seed: u64, rows: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::InvalidParameter("a batch needs at least one row".into()));
        }
        if values.len() != rows * grid.len() {
            return Err(Error::SizeMismatch {
                expected: rows * grid.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            grid,
            tau,
            seed,
            rows,
            values,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let c = self.cols();
        &self.values[j * c..(j + 1) * c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The same draws at scale `tau`, bit-identical to sampling at `tau`
    /// directly. Sampling applies `tau` as its last multiplication, so a unit
    /// batch is rescaled in place; other batches are regenerated.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        if self.tau == 1.0 && tau > 0.0 && tau.is_finite() {
            let values = self.values.iter().map(|v| v * tau).collect();
            return Self::from_values(self.grid, tau, self.seed, self.rows, values);
        }
        sample_wm_batch(&self.grid, tau, self.rows, self.seed)
    }

    /// Writes the little-endian binary layout: `d, n, N, tau, seed` as 64-bit
    /// words followed by the row-major payload.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.grid.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.n() as u64).to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&self.tau.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let d = u64::from_le_bytes(next(&mut r)?) as usize;
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let rows = u64::from_le_bytes(next(&mut r)?) as usize;
        let tau = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let grid = GridSpec::new(d, n)?;
        let len = rows.checked_mul(grid.len()).ok_or_else(|| Error::Format {
            what: "batch header",
            detail: "payload size overflows".into(),
        })?;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_le_bytes(next(&mut r)?));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format {
                what: "batch file",
                detail: "trailing bytes after payload".into(),
            });
        }
        Self::from_values(grid, tau, seed, rows, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Draws `count` independent realisations of the discrete field on `grid`:
/// `tau * DST[(1 + lambda_h)^{-1/2} DST(w)]` with `w` white noise.
pub fn sample_wm_batch(grid: &GridSpec, tau: f64, count: usize, seed: u64) -> Result<TestFunctionBatch> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    if count == 0 {
        return Err(Error::InvalidParameter("count must be >= 1".into()));
    }
    let cols = grid.len();
    let filter: Vec<f64> = grid
        .discrete_eigenvalues()
        .into_iter()
        .map(|l| (1.0 + l).powf(-0.5))
        .collect();
    let mut values = vec![0.0; count * cols];
    values.par_chunks_mut(cols).enumerate().for_each_init(
        || DstPlan::new(*grid),
        |plan, (j, row)| {
            let mut rng = stream_rng(seed, j as u64);
            fill_normal(&mut rng, row);
            plan.apply(row).expect("row length matches grid");
            for (v, f) in row.iter_mut().zip(&filter) {
                *v *= f;
            }
            plan.apply(row).expect("row length matches grid");
            for v in row.iter_mut() {
                *v *= tau;
            }
        },
    );
    TestFunctionBatch::from_values(*grid, tau, seed, count, values)
}

/// Coefficients `tau (1 + lambda_k)^{-1/2} w_k` of one truncated spectral draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDraw {
    pub eigenvalues: Vec<f64>,
    pub coefficients: Vec<f64>,
}

impl SpectralDraw {
    pub fn from_weights(eigenvalues: &[f64], tau: f64, weights: &[f64]) -> Self {
        let coefficients = eigenvalues
            .iter()
            .zip(weights)
            .map(|(l, w)| tau * (1.0 + l).powf(-0.5) * w)
            .collect();
        Self {
            eigenvalues: eigenvalues.to_vec(),
            coefficients,
        }
    }

    pub fn draw<R: Rng>(eigenvalues: &[f64], tau: f64, rng: &mut R) -> Self {
        let mut w = vec![0.0; eigenvalues.len()];
        fill_normal(rng, &mut w);
        Self::from_weights(eigenvalues, tau, &w)
    }

    /// Evaluates the truncated expansion at a point.
    pub fn evaluate(&self, indices: &[EigenIndex], x: &[f64]) -> f64 {
        indices
            .iter()
            .zip(&self.coefficients)
            .map(|(k, c)| c * eigenfunction(k, x))
            .sum()
    }
}

/// `sum_k lambda_k^t |c_k|^2`, the squared `H^t` norm of a truncated draw.
pub fn partial_sum_sobolev_norm(draw: &SpectralDraw, t: f64) -> f64 {
    draw.eigenvalues
        .iter()
        .zip(&draw.coefficients)
        .map(|(l, c)| l.powf(t) * c * c)
        .sum()
}

/// Truncated Karhunen-Loeve draws at arbitrary points, using the continuum
/// eigenvalues of `basis`. Returns a row-major `count x points` array.
pub fn sample_truncated_spectral(
    basis: &EigenBasis,
    tau: f64,
    points: &[Vec<f64>],
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    sample_truncated_spectral_with(basis.indices(), &basis.eigenvalues(), tau, points, count, seed)
}

/// As [`sample_truncated_spectral`] with caller-supplied eigenvalues, e.g.
/// the discrete ones when matching the grid sampler.
pub fn sample_truncated_spectral_with(
    indices: &[EigenIndex],
    eigenvalues: &[f64],
    tau: f64,
    points: &[Vec<f64>],
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::InvalidParameter("truncation needs at least one index".into()));
    }
    if eigenvalues.len() != indices.len() {
        return Err(Error::SizeMismatch {
            expected: indices.len(),
            got: eigenvalues.len(),
        });
    }
    // Basis values are shared by every row: tabulate once.
    let table: Vec<Vec<f64>> = points
        .iter()
        .map(|x| indices.iter().map(|k| eigenfunction(k, x)).collect())
        .collect();
    let p = points.len();
    let mut out = vec![0.0; count * p];
    out.par_chunks_mut(p.max(1)).enumerate().for_each(|(j, row)| {
        let mut rng = stream_rng(seed, j as u64);
        let draw = SpectralDraw::draw(eigenvalues, tau, &mut rng);
        for (v, phis) in row.iter_mut().zip(&table) {
            *v = phis.iter().zip(&draw.coefficients).map(|(a, b)| a * b).sum();
        }
    });
    Ok(out)
}
