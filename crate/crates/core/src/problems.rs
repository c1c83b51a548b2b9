//! Manufactured benchmark problems on `(0,1)^d`.
//!
//! Each experiment stores its exact solution once, generic over [`Scalar`],
//! and a hand-expanded source term. The jet evaluation of the exact solution
//! gives an independent check that `Lu - f` vanishes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{GridSpec, PointSet};
use crate::error::{Error, Result};
use crate::jet::{jet_of, EvalJet, Scalar};

/// Second-order operators of the form `c0 u + sum c1_j u_j + sum c2_j u_jj`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Operator {
    /// `Delta u` (`u_xx` in one dimension).
    Laplacian,
    NegativeLaplacian,
    /// `Delta u + k^2 u`.
    Helmholtz {
        k: f64,
    },
    /// `-div(a grad u)` with `a = 1 + beta prod_j sin(k_a pi x_j)`.
    DivergenceForm {
        beta: f64,
        k_a: f64,
    },
}

/// Pointwise coefficients of an [`Operator`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OperatorCoefficients {
    pub c0: f64,
    pub c1: [f64; 3],
    pub c2: [f64; 3],
}

impl Operator {
    /// Parses `laplacian`, `negative-laplacian`, `helmholtz k=..` or
    /// `divergence-form beta=.. k_a=..`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, params) = split_spec(spec)?;
        let op = match name {
            "laplacian" => {
                params.expect_only(&[])?;
                Operator::Laplacian
            }
            "negative-laplacian" => {
                params.expect_only(&[])?;
                Operator::NegativeLaplacian
            }
            "helmholtz" => {
                params.expect_only(&["k"])?;
                Operator::Helmholtz {
                    k: params.get("k", 1.0)?,
                }
            }
            "divergence-form" => {
                params.expect_only(&["beta", "k_a"])?;
                Operator::DivergenceForm {
                    beta: params.get("beta", 0.0)?,
                    k_a: params.get("k_a", 1.0)?,
                }
            }
            other => {
                return Err(Error::Unknown {
                    kind: "operator",
                    name: other.to_string(),
                })
            }
        };
        Ok(op)
    }

    pub fn coefficients(&self, x: &[f64]) -> OperatorCoefficients {
        let d = x.len();
        let mut c = OperatorCoefficients::default();
        match *self {
            Operator::Laplacian => c.c2[..d].fill(1.0),
            Operator::NegativeLaplacian => c.c2[..d].fill(-1.0),
            Operator::Helmholtz { k } => {
                c.c0 = k * k;
                c.c2[..d].fill(1.0);
            }
            Operator::DivergenceForm { beta, k_a } => {
                let (a, grad) = diffusion(beta, k_a, x);
                c.c2[..d].fill(-a);
                for j in 0..d {
                    c.c1[j] = -grad[j];
                }
            }
        }
        c
    }

    /// `Lu(x)` from the jet of `u` at `x`.
    pub fn apply(&self, jet: &EvalJet, x: &[f64]) -> Result<f64> {
        if jet.dim() != x.len() {
            return Err(Error::IndexDimension {
                expected: x.len(),
                got: jet.dim(),
            });
        }
        let c = self.coefficients(x);
        let mut out = c.c0 * jet.value;
        for j in 0..x.len() {
            out += c.c1[j] * jet.gradient[j] + c.c2[j] * jet.second[j];
        }
        Ok(out)
    }
}

/// `a(x) = 1 + beta prod sin(k_a pi x_j)` and its gradient.
pub fn diffusion(beta: f64, k_a: f64, x: &[f64]) -> (f64, [f64; 3]) {
    let d = x.len();
    let w = k_a * PI;
    let s: Vec<f64> = x.iter().map(|&v| (w * v).sin()).collect();
    let c: Vec<f64> = x.iter().map(|&v| (w * v).cos()).collect();
    let mut grad = [0.0; 3];
    for j in 0..d {
        let mut g = beta * w * c[j];
        for (i, si) in s.iter().enumerate() {
            if i != j {
                g *= si;
            }
        }
        grad[j] = g;
    }
    (1.0 + beta * s.iter().product::<f64>(), grad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Experiment {
    /// 1D multi-scale Poisson, `u_xx = f`.
    Exp1 { a: f64 },
    /// 2D multi-scale Poisson, `-Delta u = f`.
    Exp2 { a: f64 },
    /// 2D oscillating-coefficient divergence form.
    Exp3 { k_a: f64, k_u: f64, beta: f64 },
    /// 2D Helmholtz with `u = sin(k pi x) sin(k pi y)`.
    Exp4 { k: f64 },
    /// 2D Poisson with `k^2` Gaussian bumps and nonzero boundary data.
    Exp5 { k: usize },
    /// 3D Helmholtz.
    Exp6 { k: f64 },
}

impl Experiment {
    pub fn dim(&self) -> usize {
        match self {
            Experiment::Exp1 { .. } => 1,
            Experiment::Exp6 { .. } => 3,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Exp1 { .. } => "exp1",
            Experiment::Exp2 { .. } => "exp2",
            Experiment::Exp3 { .. } => "exp3",
            Experiment::Exp4 { .. } => "exp4",
            Experiment::Exp5 { .. } => "exp5",
            Experiment::Exp6 { .. } => "exp6",
        }
    }

    /// Registry label, e.g. `exp1 a=100`.
    pub fn label(&self) -> String {
        match *self {
            Experiment::Exp1 { a } | Experiment::Exp2 { a } => format!("{} a={a}", self.name()),
            Experiment::Exp3 { k_a, k_u, beta } => format!("exp3 k_a={k_a} k_u={k_u} beta={beta}"),
            Experiment::Exp4 { k } | Experiment::Exp6 { k } => format!("{} k={k}", self.name()),
            Experiment::Exp5 { k } => format!("exp5 k={k}"),
        }
    }

    pub fn operator(&self) -> Operator {
        match *self {
            Experiment::Exp1 { .. } => Operator::Laplacian,
            Experiment::Exp2 { .. } | Experiment::Exp5 { .. } => Operator::NegativeLaplacian,
            Experiment::Exp3 { k_a, beta, .. } => Operator::DivergenceForm { beta, k_a },
            Experiment::Exp4 { k } | Experiment::Exp6 { k } => Operator::Helmholtz { k },
        }
    }

    /// Zero Dirichlet data.
    pub fn homogeneous(&self) -> bool {
        !matches!(self, Experiment::Exp5 { .. })
    }

    pub fn exact<S: Scalar>(&self, x: &[S]) -> S {
        match *self {
            Experiment::Exp1 { a } => {
                let shift = (2.0 * PI).sin() + 0.1 * (a * PI).sin();
                let t = x[0];
                t.scale(2.0 * PI).sin() + t.scale(a * PI).sin().scale(0.1) - t.scale(shift)
            }
            Experiment::Exp2 { a } => {
                let (x, y) = (x[0], x[1]);
                let s = x.scale(PI).sin() * y.scale(PI).sin();
                s * ((x + y).scale(a).sin() + x.scale(2.0 * PI).sin() + y.scale(3.0 * PI).cos())
            }
            Experiment::Exp3 { k_u, .. } => x[0].scale(k_u * PI).sin() * x[1].scale(k_u * PI).sin(),
            Experiment::Exp4 { k } => x[0].scale(k * PI).sin() * x[1].scale(k * PI).sin(),
            Experiment::Exp5 { k } => {
                let mut acc = S::cst(0.0);
                for i in 1..=k {
                    for j in 1..=k {
                        let (cx, cy) = bump_centre(k, i, j);
                        let dx = x[0] - S::cst(cx);
                        let dy = x[1] - S::cst(cy);
                        acc = acc + (dx * dx + dy * dy).scale(-50.0).exp();
                    }
                }
                acc
            }
            Experiment::Exp6 { .. } => {
                let s = x[0].scale(PI).sin() * x[1].scale(2.0 * PI).sin() * x[2].scale(3.0 * PI).sin();
                s * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
            }
        }
    }

    /// Hand-expanded right-hand side `f = Lu`.
    pub fn source(&self, x: &[f64]) -> f64 {
        match *self {
            Experiment::Exp1 { a } => {
                let t = x[0];
                -4.0 * PI * PI * (2.0 * PI * t).sin() - 0.1 * (a * PI).powi(2) * (a * PI * t).sin()
            }
            Experiment::Exp2 { a } => {
                let (x, y) = (x[0], x[1]);
                let (spx, cpx) = (PI * x).sin_cos();
                let (spy, cpy) = (PI * y).sin_cos();
                let s = spx * spy;
                let (sx, sy) = (PI * cpx * spy, PI * spx * cpy);
                let (sa, ca) = (a * (x + y)).sin_cos();
                let (s2, c2) = (2.0 * PI * x).sin_cos();
                let (s3, c3) = (3.0 * PI * y).sin_cos();
                let b = sa + s2 + c3;
                let (bx, by) = (a * ca + 2.0 * PI * c2, a * ca - 3.0 * PI * s3);
                let lap_b = -2.0 * a * a * sa - 4.0 * PI * PI * s2 - 9.0 * PI * PI * c3;
                let lap_s = -2.0 * PI * PI * s;
                -(lap_s * b + 2.0 * (sx * bx + sy * by) + s * lap_b)
            }
            Experiment::Exp3 { k_a, k_u, beta } => {
                let w = k_u * PI;
                let (sx, cx) = (w * x[0]).sin_cos();
                let (sy, cy) = (w * x[1]).sin_cos();
                let u = sx * sy;
                let lap_u = -2.0 * w * w * u;
                let (a, ga) = diffusion(beta, k_a, x);
                -a * lap_u - (ga[0] * w * cx * sy + ga[1] * w * sx * cy)
            }
            Experiment::Exp4 { k } => {
                let u = (k * PI * x[0]).sin() * (k * PI * x[1]).sin();
                (k * k - 2.0 * k * k * PI * PI) * u
            }
            Experiment::Exp5 { k } => {
                let mut acc = 0.0;
                for i in 1..=k {
                    for j in 1..=k {
                        let (cx, cy) = bump_centre(k, i, j);
                        let rho2 = (x[0] - cx).powi(2) + (x[1] - cy).powi(2);
                        acc += 100.0 * (2.0 - 100.0 * rho2) * (-50.0 * rho2).exp();
                    }
                }
                acc
            }
            Experiment::Exp6 { k } => {
                let (s1, c1) = (PI * x[0]).sin_cos();
                let (s2, c2) = (2.0 * PI * x[1]).sin_cos();
                let (s3, c3) = (3.0 * PI * x[2]).sin_cos();
                let s = s1 * s2 * s3;
                let q = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                let grad_s_dot_x =
                    x[0] * PI * c1 * s2 * s3 + x[1] * 2.0 * PI * s1 * c2 * s3 + x[2] * 3.0 * PI * s1 * s2 * c3;
                let lap = -14.0 * PI * PI * s * q + 4.0 * grad_s_dot_x + 6.0 * s;
                lap + k * k * s * q
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Experiment::Exp1 { a } | Experiment::Exp2 { a } => positive("a", a),
            Experiment::Exp3 { k_a, k_u, beta } => {
                positive("k_a", k_a)?;
                positive("k_u", k_u)?;
                if !(beta.abs() < 1.0) {
                    return Err(Error::Ellipticity(beta));
                }
                Ok(())
            }
            Experiment::Exp4 { k } | Experiment::Exp6 { k } => positive("k", k),
            Experiment::Exp5 { k } => {
                if k == 0 {
                    Err(Error::InvalidParameter("exp5 needs k >= 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

fn bump_centre(k: usize, i: usize, j: usize) -> (f64, f64) {
    let s = (k + 1) as f64;
    (i as f64 / s, j as f64 / s)
}

/// Default collocation nodes per axis by dimension.
pub fn default_grid_n(d: usize) -> usize {
    match d {
        1 => 511,
        2 => 96,
        _ => 24,
    }
}

/// Default boundary sample size: both endpoints in 1D, 604 perimeter points
/// in 2D, `6 * 12^2` face points in 3D.
pub const PERIMETER_POINTS: usize = 604;
pub const FACE_POINTS_PER_AXIS: usize = 12;

/// `count` points equispaced along the perimeter of the unit square,
/// starting at the origin and running counter-clockwise; corners sit at
/// multiples of `count / 4`.
pub fn perimeter_points(count: usize) -> Result<PointSet> {
    if count == 0 || !count.is_multiple_of(4) {
        return Err(Error::InvalidParameter(format!(
            "perimeter point count must be a positive multiple of 4, got {count}"
        )));
    }
    let side = count / 4;
    let mut coords = Vec::with_capacity(2 * count);
    for s in 0..count {
        let t = (s % side) as f64 / side as f64;
        let p = match s / side {
            0 => [t, 0.0],
            1 => [1.0, t],
            2 => [1.0 - t, 1.0],
            _ => [0.0, 1.0 - t],
        };
        coords.extend_from_slice(&p);
    }
    PointSet::new(2, coords)
}

/// Cell-centred `q x q` points on each of the six faces of the unit cube.
pub fn face_points(q: usize) -> Result<PointSet> {
    if q == 0 {
        return Err(Error::InvalidParameter("face grid needs q >= 1".into()));
    }
    let mut coords = Vec::with_capacity(18 * q * q);
    for axis in 0..3 {
        for side in [0.0, 1.0] {
            for i in 0..q {
                for j in 0..q {
                    let (a, b) = ((i as f64 + 0.5) / q as f64, (j as f64 + 0.5) / q as f64);
                    let mut x = [0.0; 3];
                    let mut free = [a, b].into_iter();
                    for (c, slot) in x.iter_mut().enumerate() {
                        *slot = if c == axis { side } else { free.next().unwrap() };
                    }
                    coords.extend_from_slice(&x);
                }
            }
        }
    }
    PointSet::new(3, coords)
}

/// Default boundary sample for dimension `d`.
pub fn default_boundary(d: usize) -> Result<PointSet> {
    match d {
        1 => PointSet::new(1, vec![0.0, 1.0]),
        2 => perimeter_points(PERIMETER_POINTS),
        3 => face_points(FACE_POINTS_PER_AXIS),
        _ => Err(Error::Dimension(d)),
    }
}

/// A manufactured problem together with its discretisation.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    experiment: Experiment,
    grid: GridSpec,
    boundary: PointSet,
}

impl ProblemSpec {
    pub fn new(experiment: Experiment) -> Result<Self> {
        experiment.validate()?;
        let d = experiment.dim();
        Ok(Self {
            experiment,
            grid: GridSpec::new(d, default_grid_n(d))?,
            boundary: default_boundary(d)?,
        })
    }

    /// Parses registry strings such as `exp1 a=100` or `exp3 beta=0.5 n=64`.
    /// The key `n` overrides the collocation nodes per axis; `nb` the
    /// boundary sample size (2D perimeter count or 3D face resolution).
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, params) = split_spec(spec)?;
        let experiment = match name {
            "exp1" => {
                params.expect_only(&["a", "n", "nb"])?;
                Experiment::Exp1 {
                    a: params.get("a", 1.0)?,
                }
            }
            "exp2" => {
                params.expect_only(&["a", "n", "nb"])?;
                Experiment::Exp2 {
                    a: params.get("a", 1.0)?,
                }
            }
            "exp3" => {
                params.expect_only(&["k_a", "k_u", "beta", "n", "nb"])?;
                Experiment::Exp3 {
                    k_a: params.get("k_a", 20.0)?,
                    k_u: params.get("k_u", 10.0)?,
                    beta: params.get("beta", 0.75)?,
                }
            }
            "exp4" => {
                params.expect_only(&["k", "n", "nb"])?;
                Experiment::Exp4 {
                    k: params.get("k", 5.0)?,
                }
            }
            "exp5" => {
                params.expect_only(&["k", "n", "nb"])?;
                let k: f64 = params.get("k", 1.0)?;
                if k < 1.0 || k.fract() != 0.0 {
                    return Err(Error::InvalidParameter(format!("exp5 needs integer k >= 1, got {k}")));
                }
                Experiment::Exp5 { k: k as usize }
            }
            "exp6" => {
                params.expect_only(&["k", "n", "nb"])?;
                Experiment::Exp6 {
                    k: params.get("k", 100.0)?,
                }
            }
            other => {
                return Err(Error::Unknown {
                    kind: "experiment",
                    name: other.to_string(),
                })
            }
        };
        let mut spec = Self::new(experiment)?;
        if let Some(n) = params.get_opt("n")? {
            spec = spec.with_grid_n(as_count("n", n)?)?;
        }
        if let Some(nb) = params.get_opt("nb")? {
            let nb = as_count("nb", nb)?;
            let boundary = match spec.dim() {
                2 => perimeter_points(nb)?,
                3 => face_points(nb)?,
                _ => return Err(Error::InvalidParameter("nb is fixed to both endpoints in 1D".into())),
            };
            spec = spec.with_boundary(boundary)?;
        }
        Ok(spec)
    }

    pub fn with_grid_n(mut self, n: usize) -> Result<Self> {
        self.grid = GridSpec::new(self.dim(), n)?;
        Ok(self)
    }

    pub fn with_boundary(mut self, boundary: PointSet) -> Result<Self> {
        if boundary.dim() != self.dim() {
            return Err(Error::IndexDimension {
                expected: self.dim(),
                got: boundary.dim(),
            });
        }
        self.boundary = boundary;
        Ok(self)
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment
    }

    pub fn label(&self) -> String {
        self.experiment.label()
    }

    pub fn dim(&self) -> usize {
        self.experiment.dim()
    }

    pub fn operator(&self) -> Operator {
        self.experiment.operator()
    }

    pub fn homogeneous(&self) -> bool {
        self.experiment.homogeneous()
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Test grid, twice as fine per axis: `2n + 1` interior nodes.
    pub fn test_grid(&self) -> GridSpec {
        GridSpec::new(self.dim(), 2 * self.grid.n() + 1).expect("valid grid")
    }

    pub fn boundary_points(&self) -> &PointSet {
        &self.boundary
    }

    pub fn test_points(&self) -> PointSet {
        PointSet::from_grid(&self.test_grid())
    }

    /// Points at which residuals are assembled. Normally the collocation
    /// nodes `k h`; with `offset` the per-axis coordinates `i/n`,
    /// `i = 0..n-1`, paired in node order with the test-function nodes.
    pub fn collocation_points(&self, offset: bool) -> PointSet {
        if !offset {
            return PointSet::from_grid(&self.grid);
        }
        let n = self.grid.n();
        let d = self.dim();
        let mut coords = Vec::with_capacity(self.grid.len() * d);
        for i in 0..self.grid.len() {
            let k = self.grid.multi_index(i);
            coords.extend(k[..d].iter().map(|&kj| (kj - 1) as f64 / n as f64));
        }
        PointSet::new(d, coords).expect("consistent dimension")
    }

    pub fn exact(&self, x: &[f64]) -> f64 {
        self.experiment.exact(x)
    }

    pub fn exact_jet(&self, x: &[f64]) -> EvalJet {
        let e = self.experiment;
        jet_of(|a| e.exact(a), x)
    }

    pub fn source(&self, x: &[f64]) -> f64 {
        self.experiment.source(x)
    }

    /// Dirichlet data `g = u` on the boundary.
    pub fn boundary_value(&self, x: &[f64]) -> f64 {
        if self.homogeneous() {
            0.0
        } else {
            self.exact(x)
        }
    }

    /// `Lu - f` for the stored exact solution, computed through jets.
    pub fn manufactured_defect(&self, x: &[f64]) -> f64 {
        let jet = self.exact_jet(x);
        self.operator().apply(&jet, x).expect("jet dimension matches") - self.source(x)
    }

    /// Largest `|Lu - f|` and largest `|f|` over `count` uniform random
    /// interior points.
    pub fn consistency(&self, count: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut worst = 0.0f64;
        let mut fmax = 0.0f64;
        let mut x = vec![0.0; d];
        for _ in 0..count {
            for v in x.iter_mut() {
                *v = rng.random_range(0.0..1.0);
            }
            worst = worst.max(self.manufactured_defect(&x).abs());
            fmax = fmax.max(self.source(&x).abs());
        }
        (worst, fmax)
    }
}

pub fn make_experiment1(a: f64) -> Result<ProblemSpec> {
    ProblemSpec::new(Experiment::Exp1 { a })
}

pub fn make_experiment2(a: f64) -> Result<ProblemSpec> {
    ProblemSpec::new(Experiment::Exp2 { a })
}

pub fn make_experiment3(k_a: f64, k_u: f64, beta: f64) -> Result<ProblemSpec> {
    ProblemSpec::new(Experiment::Exp3 { k_a, k_u, beta })
}

pub fn make_experiment4(k: f64) -> Result<ProblemSpec> {
    ProblemSpec::new(Experiment::Exp4 { k })
}

pub fn make_experiment5(k: usize) -> Result<ProblemSpec> {
    ProblemSpec::new(Experiment::Exp5 { k })
}

pub fn make_experiment6(k: f64) -> Result<ProblemSpec> {
    ProblemSpec::new(Experiment::Exp6 { k })
}

struct Params(Vec<(String, f64)>);

impl Params {
    fn expect_only(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.0 {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::InvalidParameter(format!("unexpected key `{k}`")));
            }
        }
        Ok(())
    }

    fn get_opt(&self, key: &str) -> Result<Option<f64>> {
        Ok(self.0.iter().rev().find(|(k, _)| k == key).map(|(_, v)| *v))
    }

    fn get(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_opt(key)?.unwrap_or(default))
    }
}

fn as_count(key: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidParameter(format!(
            "{key} must be a positive integer, got {v}"
        )))
    }
}

fn split_spec(spec: &str) -> Result<(&str, Params)> {
    let mut tokens = spec.split_whitespace();
    let name = tokens
        .next()
        .ok_or_else(|| Error::InvalidParameter("empty specification".into()))?;
    let mut params = Vec::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got `{tok}`")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("`{v}` is not a number")))?;
        params.push((k.to_string(), v));
    }
    Ok((name, Params(params)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn experiment1_values() {
        let p = make_experiment1(1.0).unwrap();
        assert_relative_eq!(p.exact(&[0.5]), 0.1, epsilon = 1e-15);
        for a in [1.0, 25.0, 100.0, 37.3] {
            let p = make_experiment1(a).unwrap();
            assert_eq!(p.exact(&[0.0]), 0.0);
            assert!(p.exact(&[1.0]).abs() < 1e-15);
        }
    }

    #[test]
    fn experiment2_centre_value() {
        let p = make_experiment2(1.0).unwrap();
        assert_relative_eq!(p.exact(&[0.5, 0.5]), 1f64.sin(), epsilon = 1e-15);
        assert_relative_eq!(p.exact(&[0.5, 0.5]), 0.84147, epsilon = 1e-5);
    }

    #[test]
    fn experiment3_constant_coefficient_limit() {
        let p = make_experiment3(20.0, 10.0, 0.0).unwrap();
        let w = 10.0 * PI;
        for x in [[0.13, 0.77], [0.5, 0.21]] {
            assert_relative_eq!(p.source(&x), 2.0 * w * w * p.exact(&x), max_relative = 1e-10);
        }
        assert!(matches!(make_experiment3(20.0, 10.0, 1.0), Err(Error::Ellipticity(_))));
        assert!(matches!(make_experiment3(20.0, 10.0, -1.5), Err(Error::Ellipticity(_))));
    }

    #[test]
    fn coefficient_floor() {
        let beta = 0.75;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            assert!(diffusion(beta, 20.0, &x).0 >= 1.0 - beta - 1e-15);
        }
    }

    #[test]
    fn experiment4_source_is_indefinite_multiple() {
        let k = 5.0;
        let p = make_experiment4(k).unwrap();
        let x = [0.31, 0.62];
        assert_relative_eq!(
            p.source(&x),
            (k * k - 2.0 * k * k * PI * PI) * p.exact(&x),
            max_relative = 1e-14
        );
    }

    #[test]
    fn experiment5_values() {
        let p = make_experiment5(1).unwrap();
        assert_eq!(p.exact(&[0.5, 0.5]), 1.0);
        let g = p.boundary_value(&[0.0, 0.5]);
        assert_relative_eq!(g, (-12.5f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(g, 3.73e-6, max_relative = 1e-3);
        assert!(!p.homogeneous());
        assert_eq!(p.boundary_points().len(), 604);
    }

    #[test]
    fn every_problem_is_consistent() {
        for spec in [
            "exp1 a=1",
            "exp1 a=100",
            "exp2 a=1",
            "exp2 a=50",
            "exp3",
            "exp4 k=10",
            "exp5 k=3",
            "exp6 k=250",
        ] {
            let p = ProblemSpec::parse(spec).unwrap();
            let (defect, fmax) = p.consistency(200, 11);
            assert!(defect < 1e-8 * (1.0 + fmax), "{spec}: {defect} vs {fmax}");
        }
    }

    #[test]
    fn homogeneous_problems_vanish_on_boundary() {
        for spec in ["exp1 a=7", "exp2 a=10", "exp3", "exp4 k=10", "exp6 k=100"] {
            let p = ProblemSpec::parse(spec).unwrap();
            for x in p.boundary_points().iter() {
                assert!(p.exact(x).abs() < 1e-12, "{spec} at {x:?}");
            }
        }
    }

    #[test]
    fn registry_errors() {
        assert!(matches!(ProblemSpec::parse("exp9"), Err(Error::Unknown { .. })));
        assert!(ProblemSpec::parse("exp1 b=3").is_err());
        assert!(ProblemSpec::parse("exp1 a").is_err());
        assert!(ProblemSpec::parse("exp1 a=-1").is_err());
        assert_eq!(ProblemSpec::parse("exp2 n=32").unwrap().grid().n(), 32);
        assert_eq!(ProblemSpec::parse("exp2").unwrap().test_grid().n(), 193);
        assert!(matches!(Operator::parse("biharmonic"), Err(Error::Unknown { .. })));
    }

    #[test]
    fn operator_kinds() {
        let x = [0.3, 0.4];
        let jet = EvalJet {
            value: 0.7,
            gradient: vec![1.5, -2.0],
            second: vec![3.0, 5.0],
        };
        assert_eq!(Operator::NegativeLaplacian.apply(&EvalJet::zero(2), &x).unwrap(), 0.0);
        let flat = Operator::parse("divergence-form beta=0 k_a=20").unwrap();
        let a = flat.apply(&jet, &x).unwrap();
        let b = Operator::NegativeLaplacian.apply(&jet, &x).unwrap();
        assert!((a - b).abs() < 1e-12);
        let h = Operator::parse("helmholtz k=3").unwrap();
        assert_relative_eq!(h.apply(&jet, &x).unwrap(), 8.0 + 9.0 * 0.7, epsilon = 1e-14);
    }

    #[test]
    fn boundary_samples() {
        let p = perimeter_points(604).unwrap();
        for (s, x) in p.iter().enumerate() {
            let on_edge = x[0] == 0.0 || x[0] == 1.0 || x[1] == 0.0 || x[1] == 1.0;
            assert!(on_edge);
            if s % 151 == 0 {
                assert!(x.iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
        let f = face_points(4).unwrap();
        assert_eq!(f.len(), 96);
        assert!(f.iter().all(|x| x.iter().any(|&v| v == 0.0 || v == 1.0)));
        assert!(perimeter_points(10).is_err());
    }

    #[test]
    fn offset_collocation_points() {
        let p = make_experiment1(1.0).unwrap().with_grid_n(4).unwrap();
        assert_eq!(p.collocation_points(true).coords(), &[0.0, 0.25, 0.5, 0.75]);
        assert_eq!(
            p.collocation_points(false).coords(),
            &[0.2, 0.4, 0.6000000000000001, 0.8]
        );
    }
}
