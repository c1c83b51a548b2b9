//! First-order and quasi-Newton optimisers over a flat parameter vector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss split into its interior and boundary parts;
/// `total = interior + lambda * boundary`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub interior: f64,
    pub boundary: f64,
}

impl LossValue {
    pub fn new(interior: f64, boundary: f64, lambda: f64) -> Self {
        Self {
            total: interior + lambda * boundary,
            interior,
            boundary,
        }
    }

    /// A loss without a boundary part.
    pub fn plain(v: f64) -> Self {
        Self {
            total: v,
            interior: v,
            boundary: 0.0,
        }
    }
}

pub struct Evaluation {
    pub loss: LossValue,
    pub grad: Vec<f64>,
}

pub trait Objective {
    fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation>;
}

/// Any `FnMut(&[f64]) -> (f64, Vec<f64>)` is an objective without boundary
/// part.
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Objective for FnObjective<F> {
    fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation> {
        let (v, grad) = (self.0)(theta);
        Ok(Evaluation {
            loss: LossValue::plain(v),
            grad,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StepBudget,
    GradientTolerance,
    Monitor,
    Stalled,
}

#[derive(Clone, Debug)]
pub struct OptimReport {
    pub theta: Vec<f64>,
    pub steps: usize,
    pub reason: StopReason,
    pub evaluations: usize,
    /// Line-search failures answered with a steepest-descent step.
    pub fallbacks: usize,
    /// Accepted steps that violated the sufficient-decrease condition.
    pub armijo_violations: usize,
}

fn check_finite(step: usize, ev: &Evaluation) -> Result<()> {
    if !ev.loss.total.is_finite() {
        return Err(Error::NonFinite {
            step,
            detail: format!("loss = {}", ev.loss.total),
        });
    }
    if let Some(i) = ev.grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step,
            detail: format!("gradient entry {i} = {}", ev.grad[i]),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    /// Multiplicative decay applied every `decay_every` steps.
    pub decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay: 0.9,
            decay_every: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Staircase schedule `lr * decay^floor(step / decay_every)` for the
    /// zero-based step index.
    pub fn learning_rate(&self, step: usize) -> f64 {
        self.lr * self.decay.powi((step / self.decay_every.max(1)) as i32)
    }
}

/// Adam. `monitor` sees the parameters and loss after every step
/// (`1..=steps`).
pub fn adam_run<O, M>(
    cfg: &AdamConfig,
    theta0: Vec<f64>,
    obj: &mut O,
    steps: usize,
    mut monitor: M,
) -> Result<OptimReport>
where
    O: Objective,
    M: FnMut(usize, &[f64], &LossValue) -> Result<Control>,
{
    let n = theta0.len();
    let mut theta = theta0;
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut ev = obj.evaluate(&theta)?;
    check_finite(0, &ev)?;
    let mut evaluations = 1;
    let mut reason = StopReason::StepBudget;
    let mut done = 0;
    for t in 0..steps {
        let lr = cfg.learning_rate(t);
        let b1t = 1.0 - cfg.beta1.powi(t as i32 + 1);
        let b2t = 1.0 - cfg.beta2.powi(t as i32 + 1);
        for i in 0..n {
            let g = ev.grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[i] / b1t;
            let vhat = v[i] / b2t;
            theta[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        ev = obj.evaluate(&theta)?;
        evaluations += 1;
        check_finite(t + 1, &ev)?;
        done = t + 1;
        if monitor(done, &theta, &ev.loss)? == Control::Stop {
            reason = StopReason::Monitor;
            break;
        }
    }
    Ok(OptimReport {
        theta,
        steps: done,
        reason,
        evaluations,
        fallbacks: 0,
        armijo_violations: 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub history: usize,
    /// Stop when the gradient norm falls to this value.
    pub tolerance: f64,
    /// Function evaluations allowed per line search.
    pub max_linesearch: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 200,
            tolerance: 1e-9,
            max_linesearch: 20,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

struct Point {
    alpha: f64,
    theta: Vec<f64>,
    ev: Evaluation,
    slope: f64,
}

fn probe<O: Objective>(
    obj: &mut O,
    theta: &[f64],
    dir: &[f64],
    alpha: f64,
    count: &mut usize,
    step: usize,
) -> Result<Point> {
    let x: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t + alpha * d).collect();
    let ev = obj.evaluate(&x)?;
    *count += 1;
    if !ev.loss.total.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
        // treated as an infinitely bad trial point
        return Ok(Point {
            alpha,
            theta: x,
            slope: f64::NAN,
            ev: Evaluation {
                loss: LossValue::plain(f64::INFINITY),
                grad: ev.grad,
            },
        });
    }
    let _ = step;
    let slope = dot(&ev.grad, dir);
    Ok(Point {
        alpha,
        theta: x,
        ev,
        slope,
    })
}

/// Minimiser of the cubic interpolating values and slopes at `a` and `b`,
/// safeguarded into the middle of the bracket.
fn cubic_step(a: &Point, b: &Point) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha {
        (a.alpha, b.alpha)
    } else {
        (b.alpha, a.alpha)
    };
    let mid = 0.5 * (lo + hi);
    if !a.slope.is_finite() || !b.slope.is_finite() || !b.ev.loss.total.is_finite() {
        return mid;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.ev.loss.total - b.ev.loss.total) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

/// Strong-Wolfe line search (bracketing followed by zoom). Returns the
/// accepted point or `None` when the evaluation budget runs out.
fn strong_wolfe<O: Objective>(
    obj: &mut O,
    cfg: &LbfgsConfig,
    theta: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    alpha0: f64,
    count: &mut usize,
    step: usize,
) -> Result<Option<Point>> {
    let slope0 = dot(g0, dir);
    let budget = cfg.max_linesearch.max(2);
    let mut used = 0;
    let mut prev = Point {
        alpha: 0.0,
        theta: theta.to_vec(),
        ev: Evaluation {
            loss: LossValue::plain(f0),
            grad: g0.to_vec(),
        },
        slope: slope0,
    };
    let mut alpha = alpha0;
    let armijo = |p: &Point| p.ev.loss.total <= f0 + cfg.c1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -cfg.c2 * slope0;
    let (mut lo, mut hi);
    loop {
        let cur = probe(obj, theta, dir, alpha, count, step)?;
        used += 1;
        if !armijo(&cur) || (prev.alpha > 0.0 && cur.ev.loss.total >= prev.ev.loss.total) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if used >= budget {
            return Ok(None);
        }
        prev = cur;
        alpha *= 2.0;
    }
    // zoom: `lo` satisfies sufficient decrease with the lowest value so far,
    // and the bracket [lo, hi] contains a strong-Wolfe point.
    while used < budget {
        let a = cubic_step(&lo, &hi);
        let cur = probe(obj, theta, dir, a, count, step)?;
        used += 1;
        if !armijo(&cur) || cur.ev.loss.total >= lo.ev.loss.total {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = std::mem::replace(&mut lo, cur);
            } else {
                lo = cur;
            }
        }
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
    }
    Ok(None)
}

/// Backtracking along the negative gradient until sufficient decrease.
fn steepest_fallback<O: Objective>(
    obj: &mut O,
    cfg: &LbfgsConfig,
    theta: &[f64],
    f0: f64,
    g0: &[f64],
    count: &mut usize,
    step: usize,
) -> Result<Option<Point>> {
    let dir: Vec<f64> = g0.iter().map(|g| -g).collect();
    let slope0 = -dot(g0, g0);
    let mut alpha = 1.0 / norm(g0).max(1e-300);
    for _ in 0..60 {
        let p = probe(obj, theta, &dir, alpha, count, step)?;
        if p.ev.loss.total <= f0 + cfg.c1 * alpha * slope0 {
            return Ok(Some(p));
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// Limited-memory BFGS with a strong-Wolfe zoom line search. Each outer
/// iteration is one step; `monitor` sees the accepted point.
pub fn lbfgs_run<O, M>(
    cfg: &LbfgsConfig,
    theta0: Vec<f64>,
    obj: &mut O,
    steps: usize,
    mut monitor: M,
) -> Result<OptimReport>
where
    O: Objective,
    M: FnMut(usize, &[f64], &LossValue) -> Result<Control>,
{
    let mut theta = theta0;
    let mut ev = obj.evaluate(&theta)?;
    check_finite(0, &ev)?;
    let mut evaluations = 1;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut report = OptimReport {
        theta: Vec::new(),
        steps: 0,
        reason: StopReason::StepBudget,
        evaluations: 0,
        fallbacks: 0,
        armijo_violations: 0,
    };
    if norm(&ev.grad) <= cfg.tolerance {
        report.reason = StopReason::GradientTolerance;
        report.theta = theta;
        report.evaluations = evaluations;
        return Ok(report);
    }
    for k in 0..steps {
        // two-loop recursion
        let mut q = ev.grad.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0,
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&dir, &ev.grad) >= 0.0 || dir.iter().any(|v| !v.is_finite()) {
            pairs.clear();
            dir = ev.grad.iter().map(|g| -g).collect();
        }
        let alpha0 = if pairs.is_empty() {
            (1.0 / norm(&ev.grad)).min(1.0)
        } else {
            1.0
        };
        let f0 = ev.loss.total;
        let slope0 = dot(&ev.grad, &dir);
        let accepted = match strong_wolfe(obj, cfg, &theta, f0, &ev.grad, &dir, alpha0, &mut evaluations, k + 1)? {
            Some(p) => Some((p, slope0)),
            None => {
                report.fallbacks += 1;
                pairs.clear();
                let g2 = -dot(&ev.grad, &ev.grad);
                steepest_fallback(obj, cfg, &theta, f0, &ev.grad, &mut evaluations, k + 1)?.map(|p| (p, g2))
            }
        };
        let Some((p, used_slope)) = accepted else {
            report.reason = StopReason::Stalled;
            break;
        };
        if p.ev.loss.total > f0 + cfg.c1 * p.alpha * used_slope {
            report.armijo_violations += 1;
        }
        let s: Vec<f64> = p.theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.ev.grad.iter().zip(&ev.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if pairs.len() == cfg.history.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        theta = p.theta;
        ev = p.ev;
        check_finite(k + 1, &ev)?;
        report.steps = k + 1;
        if monitor(k + 1, &theta, &ev.loss)? == Control::Stop {
            report.reason = StopReason::Monitor;
            break;
        }
        if norm(&ev.grad) <= cfg.tolerance {
            report.reason = StopReason::GradientTolerance;
            break;
        }
    }
    report.theta = theta;
    report.evaluations = evaluations;
    Ok(report)
}
