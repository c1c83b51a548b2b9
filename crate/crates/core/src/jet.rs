//! Scalar second-order forward-mode jets.
//!
//! A [`Dual2`] carries a value together with its first and second derivative
//! along one seeded direction. Exact solutions are written once, generic over
//! [`Scalar`], and evaluated either on plain `f64` or on jets to obtain
//! gradients and pure second partials.

use std::ops::{Add, Mul, Neg, Sub};

pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn cst(v: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn value(self) -> f64;

    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn value(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual2 {
    pub v: f64,
    pub d: f64,
    pub dd: f64,
}

impl Dual2 {
    pub fn constant(v: f64) -> Self {
        Self { v, d: 0.0, dd: 0.0 }
    }

    /// The independent variable itself: unit first derivative.
    pub fn variable(v: f64) -> Self {
        Self { v, d: 1.0, dd: 0.0 }
    }

    fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        Self {
            v: f,
            d: df * self.d,
            dd: ddf * self.d * self.d + df * self.dd,
        }
    }
}

impl Add for Dual2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: self.d + o.d,
            dd: self.dd + o.dd,
        }
    }
}

impl Sub for Dual2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: self.d - o.d,
            dd: self.dd - o.dd,
        }
    }
}

impl Mul for Dual2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
            dd: self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd,
        }
    }
}

impl Neg for Dual2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: -self.d,
            dd: -self.dd,
        }
    }
}

impl Scalar for Dual2 {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn value(self) -> f64 {
        self.v
    }
}

/// Value, gradient and pure second partials of a scalar field at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalJet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub second: Vec<f64>,
}

impl EvalJet {
    pub fn zero(d: usize) -> Self {
        Self {
            value: 0.0,
            gradient: vec![0.0; d],
            second: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn laplacian(&self) -> f64 {
        self.second.iter().sum()
    }
}

/// Jet of `f` at `x` (`d = x.len()`), one seeded pass per axis.
pub fn jet_of<F>(f: F, x: &[f64]) -> EvalJet
where
    F: Fn(&[Dual2]) -> Dual2,
{
    let d = x.len();
    let mut grad = vec![0.0; d];
    let mut second = vec![0.0; d];
    let mut value = f64::NAN;
    for axis in 0..d {
        let args: Vec<Dual2> = x
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if j == axis {
                    Dual2::variable(v)
                } else {
                    Dual2::constant(v)
                }
            })
            .collect();
        let out = f(&args);
        value = out.v;
        grad[axis] = out.d;
        second[axis] = out.dd;
    }
    if d == 0 {
        value = f(&[]).v;
    }
    EvalJet {
        value,
        gradient: grad,
        second,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn product_and_chain_rules() {
        // f(x, y) = sin(3x) exp(y) x
        let f = |a: &[Dual2]| a[0].scale(3.0).sin() * a[1].exp() * a[0];
        let (x, y) = (0.4f64, -0.7f64);
        let j = jet_of(f, &[x, y]);
        let (v, g, s) = (j.value, j.gradient, j.second);
        assert_relative_eq!(v, (3.0 * x).sin() * y.exp() * x, epsilon = 1e-15);
        assert_relative_eq!(
            g[0],
            y.exp() * (3.0 * (3.0 * x).cos() * x + (3.0 * x).sin()),
            epsilon = 1e-14
        );
        assert_relative_eq!(g[1], v, epsilon = 1e-15);
        let fxx = y.exp() * (-9.0 * (3.0 * x).sin() * x + 6.0 * (3.0 * x).cos());
        assert_relative_eq!(s[0], fxx, epsilon = 1e-13);
        assert_relative_eq!(s[1], v, epsilon = 1e-15);
    }

    #[test]
    fn cosine_second_derivative() {
        let j = jet_of(|a| a[0].cos(), &[1.1]);
        let (g, s) = (j.gradient, j.second);
        assert_relative_eq!(g[0], -(1.1f64).sin(), epsilon = 1e-15);
        assert_relative_eq!(s[0], -(1.1f64).cos(), epsilon = 1e-15);
    }
}
