//! Orthonormal type-I discrete sine transform on interior grids.
//!
//! Along one axis with `n` nodes the transform is
//! `u_hat[k'] = sqrt(2h) sum_k u[k] sin(pi k k' h)`, `h = 1/(n+1)`. It is
//! symmetric and orthogonal, hence self-inverse, and it diagonalises the
//! second-difference Laplacian with zero boundary values. Multi-dimensional
//! transforms apply the 1D transform along every axis of the row-major grid.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::basis::GridSpec;
use crate::error::{Error, Result};

/// Below this length the dense sine matrix is used instead of the FFT.
pub const DIRECT_THRESHOLD: usize = 64;

enum Kernel {
    Direct(Vec<f64>),
    Fast {
        fft: Arc<dyn Fft<f64>>,
        buf: Vec<Complex<f64>>,
        scratch: Vec<Complex<f64>>,
    },
}

/// Reusable transform plan for a fixed grid. Holds scratch buffers, so one
/// plan per thread.
pub struct DstPlan {
    grid: GridSpec,
    scale: f64,
    kernel: Kernel,
    line: Vec<f64>,
    out: Vec<f64>,
}

impl DstPlan {
    pub fn new(grid: GridSpec) -> Self {
        if grid.n() < DIRECT_THRESHOLD {
            Self::direct(grid)
        } else {
            Self::fast(grid)
        }
    }

    /// Dense `O(n^2)` per-line transform.
    pub fn direct(grid: GridSpec) -> Self {
        let n = grid.n();
        let h = grid.h();
        let scale = (2.0 * h).sqrt();
        let mut mat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                // sin(pi (i+1)(j+1) h), reduced mod 2(n+1) for accuracy
                let m = ((i + 1) * (j + 1)) % (2 * (n + 1));
                mat[i * n + j] = scale * (PI * m as f64 * h).sin();
            }
        }
        Self {
            grid,
            scale,
            kernel: Kernel::Direct(mat),
            line: vec![0.0; n],
            out: vec![0.0; n],
        }
    }

    /// Odd-extension FFT of length `2(n+1)`, `O(n log n)` per line.
    pub fn fast(grid: GridSpec) -> Self {
        let n = grid.n();
        let len = 2 * (n + 1);
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        Self {
            grid,
            scale: (2.0 * grid.h()).sqrt(),
            kernel: Kernel::Fast {
                fft,
                buf: vec![Complex::new(0.0, 0.0); len],
                scratch,
            },
            line: vec![0.0; n],
            out: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Transforms `u` in place.
    pub fn apply(&mut self, u: &mut [f64]) -> Result<()> {
        if u.len() != self.grid.len() {
            return Err(Error::SizeMismatch {
                expected: self.grid.len(),
                got: u.len(),
            });
        }
        let n = self.grid.n();
        let d = self.grid.dim();
        for axis in 0..d {
            let stride = n.pow((d - 1 - axis) as u32);
            let block = stride * n;
            for start in (0..u.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for k in 0..n {
                        self.line[k] = u[base + k * stride];
                    }
                    self.transform_line();
                    for k in 0..n {
                        u[base + k * stride] = self.out[k];
                    }
                }
            }
        }
        Ok(())
    }

    fn transform_line(&mut self) {
        let n = self.grid.n();
        match &mut self.kernel {
            Kernel::Direct(mat) => {
                for (i, o) in self.out.iter_mut().enumerate() {
                    let row = &mat[i * n..(i + 1) * n];
                    *o = row.iter().zip(&self.line).map(|(a, b)| a * b).sum();
                }
            }
            Kernel::Fast { fft, buf, scratch } => {
                let len = buf.len();
                buf[0] = Complex::new(0.0, 0.0);
                buf[n + 1] = Complex::new(0.0, 0.0);
                for (j, &v) in self.line.iter().enumerate() {
                    buf[j + 1] = Complex::new(v, 0.0);
                    buf[len - 1 - j] = Complex::new(-v, 0.0);
                }
                fft.process_with_scratch(buf, scratch);
                // FFT of the odd extension is -2i times the sine sum.
                for k in 0..n {
                    self.out[k] = -0.5 * self.scale * buf[k + 1].im;
                }
            }
        }
    }
}

/// Orthonormal DST-I of `u` on `grid` (allocating convenience wrapper).
pub fn dst1(u: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    let mut out = u.to_vec();
    DstPlan::new(*grid).apply(&mut out)?;
    Ok(out)
}

/// Same transform through the dense sine matrix regardless of `n`.
pub fn dst1_direct(u: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    let mut out = u.to_vec();
    DstPlan::direct(*grid).apply(&mut out)?;
    Ok(out)
}

/// Same transform through the FFT regardless of `n`.
pub fn dst1_fast(u: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    let mut out = u.to_vec();
    DstPlan::fast(*grid).apply(&mut out)?;
    Ok(out)
}

/// `-Delta_h u` with zero boundary extension, the standard `2d+1`-point stencil.
pub fn neg_laplacian_h(u: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    if u.len() != grid.len() {
        return Err(Error::SizeMismatch {
            expected: grid.len(),
            got: u.len(),
        });
    }
    let n = grid.n();
    let d = grid.dim();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = vec![0.0; u.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let k = grid.multi_index(i);
        let mut acc = 2.0 * d as f64 * u[i];
        for axis in 0..d {
            let stride = n.pow((d - 1 - axis) as u32);
            if k[axis] > 1 {
                acc -= u[i - stride];
            }
            if k[axis] < n {
                acc -= u[i + stride];
            }
        }
        *o = acc * inv_h2;
    }
    Ok(out)
}
