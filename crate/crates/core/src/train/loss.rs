//! SV-PINN and PINN losses with exact parameter gradients.

use serde::{Deserialize, Serialize};

use super::optim::{Evaluation, LossValue, Objective};
use crate::basis::PointSet;
use crate::error::{Error, Result};
use crate::net::{engine, FeatureMap, JetField, NetworkParams, Prepared};
use crate::norms::{boundary_penalty, pairwise_dot, pairwise_sum, phi_pairings};
use crate::problems::{OperatorCoefficients, ProblemSpec};
use crate::sampler::TestFunctionBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Svpinn,
    Pinn,
}

impl LossKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "svpinn" | "sv-pinn" => Ok(Self::Svpinn),
            "pinn" => Ok(Self::Pinn),
            other => Err(Error::Unknown {
                kind: "method",
                name: other.into(),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Svpinn => "svpinn",
            Self::Pinn => "pinn",
        }
    }
}

struct Boundary {
    prepared: Prepared,
    g: Vec<f64>,
}

/// Everything about a loss that does not depend on the parameters: feature
/// jets at the collocation and boundary points, operator coefficients,
/// sources and (for SV-PINN) the test-function batch.
pub struct LossEvaluator {
    kind: LossKind,
    d: usize,
    interior: Prepared,
    coeffs: Vec<OperatorCoefficients>,
    source: Vec<f64>,
    boundary: Option<Boundary>,
    batch: Option<TestFunctionBatch>,
    lambda_b: f64,
}

impl LossEvaluator {
    /// `batch` is required for SV-PINN and ignored for PINN. The boundary
    /// term is dropped for hard-constrained networks.
    pub fn new(
        problem: &ProblemSpec,
        fmap: &FeatureMap,
        hard_boundary: bool,
        kind: LossKind,
        batch: Option<TestFunctionBatch>,
        lambda_b: f64,
        offset: bool,
    ) -> Result<Self> {
        let d = problem.dim();
        if fmap.dim() != d {
            return Err(Error::IndexDimension {
                expected: d,
                got: fmap.dim(),
            });
        }
        if !(lambda_b >= 0.0 && lambda_b.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_b must be >= 0, got {lambda_b}"
            )));
        }
        let batch = match kind {
            LossKind::Svpinn => {
                let b =
                    batch.ok_or_else(|| Error::InvalidParameter("SV-PINN loss needs a test-function batch".into()))?;
                if b.grid() != problem.grid() {
                    return Err(Error::GridMismatch);
                }
                Some(b)
            }
            LossKind::Pinn => None,
        };
        let points = problem.collocation_points(offset);
        let op = problem.operator();
        let coeffs = points.iter().map(|x| op.coefficients(x)).collect();
        let source = points.iter().map(|x| problem.source(x)).collect();
        let interior = Prepared::new(fmap, &points, true);
        let boundary = if hard_boundary {
            None
        } else {
            let pts: &PointSet = problem.boundary_points();
            Some(Boundary {
                prepared: Prepared::new(fmap, pts, false),
                g: pts.iter().map(|x| problem.boundary_value(x)).collect(),
            })
        };
        Ok(Self {
            kind,
            d,
            interior,
            coeffs,
            source,
            boundary,
            batch,
            lambda_b,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn lambda_b(&self) -> f64 {
        self.lambda_b
    }

    pub fn set_lambda_b(&mut self, lambda_b: f64) {
        self.lambda_b = lambda_b;
    }

    pub fn batch(&self) -> Option<&TestFunctionBatch> {
        self.batch.as_ref()
    }

    pub fn set_batch(&mut self, batch: TestFunctionBatch) -> Result<()> {
        if let Some(old) = &self.batch {
            if old.grid() != batch.grid() {
                return Err(Error::GridMismatch);
            }
        }
        self.batch = Some(batch);
        Ok(())
    }

    pub fn has_boundary(&self) -> bool {
        self.boundary.is_some()
    }

    fn residual_from(&self, field: &JetField) -> Vec<f64> {
        let d = self.d;
        (0..field.len())
            .map(|p| {
                let jet = field.point(p);
                let c = &self.coeffs[p];
                let mut r = c.c0 * jet[0];
                for j in 0..d {
                    r += c.c1[j] * jet[1 + j] + c.c2[j] * jet[1 + d + j];
                }
                r - self.source[p]
            })
            .collect()
    }

    /// `L u_theta - f` at the collocation points.
    pub fn residuals(&self, params: &NetworkParams) -> Vec<f64> {
        self.residual_from(&engine::evaluate(params, &self.interior))
    }

    /// Interior loss of a residual vector.
    pub fn interior_loss(&self, r: &[f64]) -> f64 {
        match &self.batch {
            Some(batch) => {
                let p = phi_pairings(r, batch);
                pairwise_dot(&p, &p) / batch.rows() as f64
            }
            None => pairwise_dot(r, r) / r.len() as f64,
        }
    }

    pub fn boundary_loss(&self, params: &NetworkParams) -> Result<f64> {
        match &self.boundary {
            Some(b) => boundary_penalty(&engine::evaluate(params, &b.prepared).values(), &b.g),
            None => Ok(0.0),
        }
    }

    pub fn loss(&self, params: &NetworkParams) -> Result<LossValue> {
        let r = self.residuals(params);
        Ok(LossValue::new(
            self.interior_loss(&r),
            self.boundary_loss(params)?,
            self.lambda_b,
        ))
    }

    /// Loss and its gradient with respect to every parameter (full layout).
    pub fn loss_and_grad(&self, params: &NetworkParams) -> Result<(LossValue, Vec<f64>)> {
        let (field, tape) = engine::evaluate_taped(params, &self.interior);
        let r = self.residual_from(&field);
        let nc = r.len();
        let (interior, rbar) = match &self.batch {
            Some(batch) => {
                let p = phi_pairings(&r, batch);
                let n = batch.rows();
                let interior = pairwise_dot(&p, &p) / n as f64;
                // d/dR_i = 2/(N Nc) sum_j p_j phi_j(x_i)
                let scale = 2.0 / (n as f64 * nc as f64);
                let weights: Vec<f64> = p.iter().map(|v| v * scale).collect();
                let mut rbar = vec![0.0; nc];
                unsafe {
                    matrixmultiply::dgemm(
                        1,
                        n,
                        nc,
                        1.0,
                        weights.as_ptr(),
                        n as isize,
                        1,
                        batch.values().as_ptr(),
                        nc as isize,
                        1,
                        0.0,
                        rbar.as_mut_ptr(),
                        nc as isize,
                        1,
                    );
                }
                (interior, rbar)
            }
            None => {
                let interior = pairwise_dot(&r, &r) / nc as f64;
                (interior, r.iter().map(|v| 2.0 * v / nc as f64).collect())
            }
        };
        let d = self.d;
        let mut adjoint = JetField::zeros(d, field.channels, field.len());
        for (p, rb) in rbar.iter().enumerate() {
            let c = &self.coeffs[p];
            let a = adjoint.point_mut(p);
            a[0] = rb * c.c0;
            for j in 0..d {
                a[1 + j] = rb * c.c1[j];
                a[1 + d + j] = rb * c.c2[j];
            }
        }
        let mut grad = engine::backward(params, &self.interior, &tape, &adjoint);
        drop(tape);

        let mut boundary = 0.0;
        if let Some(b) = &self.boundary {
            let (bf, btape) = engine::evaluate_taped(params, &b.prepared);
            let diff: Vec<f64> = bf.values().iter().zip(&b.g).map(|(u, g)| u - g).collect();
            let nb = diff.len();
            if nb > 0 {
                let sq: Vec<f64> = diff.iter().map(|v| v * v).collect();
                boundary = pairwise_sum(&sq) / nb as f64;
                if self.lambda_b > 0.0 {
                    let mut badj = JetField::zeros(d, 1, nb);
                    for (a, v) in badj.data.iter_mut().zip(&diff) {
                        *a = self.lambda_b * 2.0 * v / nb as f64;
                    }
                    let bgrad = engine::backward(params, &b.prepared, &btape, &badj);
                    for (g, bg) in grad.iter_mut().zip(&bgrad) {
                        *g += bg;
                    }
                }
            }
        }
        Ok((LossValue::new(interior, boundary, self.lambda_b), grad))
    }
}

/// Adapts a [`LossEvaluator`] to the optimisers: `theta` holds only the
/// trainable entries of `template`.
pub struct NetworkObjective<'a> {
    pub evaluator: &'a LossEvaluator,
    pub params: NetworkParams,
}

impl Objective for NetworkObjective<'_> {
    fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation> {
        self.params.set_trainable(theta)?;
        let (loss, full) = self.evaluator.loss_and_grad(&self.params)?;
        Ok(Evaluation {
            loss,
            grad: self.params.gather(&full),
        })
    }
}

/// `L_Phi^(n) + lambda_b L_b` on the collocation grid of `problem`.
pub fn svpinn_loss(
    params: &NetworkParams,
    fmap: &FeatureMap,
    problem: &ProblemSpec,
    batch: &TestFunctionBatch,
    lambda_b: f64,
) -> Result<LossValue> {
    let hard = params.architecture().hard_boundary;
    LossEvaluator::new(
        problem,
        fmap,
        hard,
        LossKind::Svpinn,
        Some(batch.clone()),
        lambda_b,
        false,
    )?
    .loss(params)
}

/// `(1/N_c) sum (L u - f)^2 + lambda_b L_b`.
pub fn pinn_loss(params: &NetworkParams, fmap: &FeatureMap, problem: &ProblemSpec, lambda_b: f64) -> Result<LossValue> {
    let hard = params.architecture().hard_boundary;
    LossEvaluator::new(problem, fmap, hard, LossKind::Pinn, None, lambda_b, false)?.loss(params)
}

/// `tau = sqrt(L_b / L_{1,Phi})`, making both loss terms equal at the
/// given parameters once the unit batch is rescaled by `tau`.
pub fn balance_tau(params: &NetworkParams, evaluator: &LossEvaluator) -> Result<f64> {
    if params.architecture().hard_boundary || !evaluator.has_boundary() {
        return Err(Error::BalancingUndefined("the network is hard-constrained".into()));
    }
    let batch = evaluator
        .batch()
        .ok_or_else(|| Error::BalancingUndefined("no test-function batch".into()))?;
    if batch.tau() != 1.0 {
        return Err(Error::BalancingUndefined(format!(
            "batch must have tau = 1, got {}",
            batch.tau()
        )));
    }
    let lb = evaluator.boundary_loss(params)?;
    let li = evaluator.interior_loss(&evaluator.residuals(params));
    balance_ratio(lb, li)
}

/// `sqrt(boundary / interior)` with the degenerate cases rejected.
pub fn balance_ratio(boundary: f64, interior: f64) -> Result<f64> {
    if !(boundary > 0.0) {
        return Err(Error::BalancingUndefined(format!(
            "initial boundary loss is {boundary}"
        )));
    }
    if !(interior > 0.0) {
        return Err(Error::BalancingUndefined(format!(
            "initial interior loss is {interior}"
        )));
    }
    let tau = (boundary / interior).sqrt();
    if !tau.is_finite() {
        return Err(Error::BalancingUndefined(format!(
            "ratio {boundary}/{interior} is not finite"
        )));
    }
    Ok(tau)
}
