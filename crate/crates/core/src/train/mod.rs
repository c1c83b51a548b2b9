//! Training: configuration, the optimisation loop and run artifacts.
//!
//! A run builds the feature map and network from a [`TrainConfig`], samples
//! the test-function batch once (SV-PINN), optionally balances `tau` at the
//! initial parameters, and then hands the loss to Adam or L-BFGS. Every
//! step is logged; the L2 relative error on the test grid is evaluated every
//! `eval_every` steps and at the last step.

mod loss;
mod metrics;
mod optim;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use loss::{balance_ratio, balance_tau, pinn_loss, svpinn_loss, LossEvaluator, LossKind, NetworkObjective};
pub use metrics::{MetricRecord, RunMetrics, METRICS_HEADER};
pub use optim::{
    adam_run, lbfgs_run, AdamConfig, Control, Evaluation, FnObjective, LbfgsConfig, LossValue, Objective, OptimReport,
    StopReason,
};

use crate::basis::PointSet;
use crate::error::{Error, Result};
use crate::net::{
    engine, glorot_init_scaled, save_checkpoint, Architecture, FeatureMap, Network, NetworkParams, Prepared,
};
use crate::norms::pairwise_sum;
use crate::problems::ProblemSpec;
use crate::sampler::sample_wm_batch;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Lbfgs(LbfgsConfig),
}

impl OptimizerConfig {
    /// `gd`/`adam` or `lbfgs` with default settings.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gd" | "adam" => Ok(Self::Adam(AdamConfig::default())),
            "lbfgs" | "l-bfgs" => Ok(Self::Lbfgs(LbfgsConfig::default())),
            other => Err(Error::Unknown {
                kind: "optimizer",
                name: other.into(),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Adam(_) => "gd",
            Self::Lbfgs(_) => "lbfgs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum TauRule {
    Fixed { tau: f64 },
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureConfig {
    Daff { count: usize },
    Fourier { rows: usize, sigma: f64 },
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub width: usize,
    pub depth: usize,
    pub hard_boundary: bool,
    #[serde(default = "yes")]
    pub train_encoder_bias: bool,
    /// Multiplier on the Glorot bounds. Narrow desk-scale networks use 0.5,
    /// which keeps the initial output spectrum well below the grid Nyquist.
    #[serde(default = "unit")]
    pub init_gain: f64,
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub samples: usize,
}

fn default_eval_every() -> usize {
    10
}

/// Every knob of a run. Serialised as TOML; all fields are required except
/// those marked optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: LossKind,
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub seed: u64,
    /// Weight of the boundary penalty; must be 0 for hard-constrained
    /// networks.
    pub lambda_b: f64,
    pub tau: TauRule,
    pub batch: BatchConfig,
    pub features: FeatureConfig,
    pub network: NetworkConfig,
    /// Evaluate residuals at `(k - 1)/n` instead of the collocation nodes.
    #[serde(default)]
    pub residual_offset: bool,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Stop as soon as an evaluated L2 relative error falls below this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_l2: Option<f64>,
}

impl TrainConfig {
    /// Desk-scale defaults: DAFF with a hard boundary and fixed `tau` for
    /// homogeneous problems, Fourier features with a soft boundary and
    /// balanced `tau` otherwise.
    pub fn default_for(problem: &ProblemSpec, method: LossKind, optimizer: OptimizerConfig) -> Self {
        let d = problem.dim();
        let (width, depth, daff, samples, tau) = match d {
            1 => (64, 2, 64, 4000, 0.1),
            2 => (128, 3, 128, 8000, 1.0),
            _ => (64, 2, 36, 4000, 10.0),
        };
        let homogeneous = problem.homogeneous();
        let (features, tau, lambda_b) = if homogeneous {
            (FeatureConfig::Daff { count: daff }, TauRule::Fixed { tau }, 0.0)
        } else {
            (FeatureConfig::Fourier { rows: 32, sigma: 5.0 }, TauRule::Balanced, 1.0)
        };
        Self {
            method,
            optimizer,
            steps: 1000,
            seed: 0,
            lambda_b,
            tau,
            batch: BatchConfig { samples },
            features,
            network: NetworkConfig {
                width,
                depth,
                hard_boundary: homogeneous,
                train_encoder_bias: true,
                init_gain: 0.5,
            },
            residual_offset: false,
            eval_every: 10,
            target_l2: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if !(self.lambda_b >= 0.0 && self.lambda_b.is_finite()) {
            return bad(format!("lambda_b must be >= 0, got {}", self.lambda_b));
        }
        if self.network.hard_boundary && self.lambda_b != 0.0 {
            return bad("hard-boundary networks take lambda_b = 0".into());
        }
        if !self.network.hard_boundary && self.lambda_b == 0.0 {
            return bad("lambda_b = 0 is only allowed with a hard boundary".into());
        }
        if self.network.hard_boundary && !matches!(self.features, FeatureConfig::Daff { .. }) {
            return bad("a hard boundary needs DAFF features".into());
        }
        if !(self.network.init_gain > 0.0 && self.network.init_gain.is_finite()) {
            return bad(format!("init_gain must be positive, got {}", self.network.init_gain));
        }
        if self.network.width == 0 {
            return bad("network width must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if self.method == LossKind::Svpinn && self.batch.samples == 0 {
            return bad("batch.samples must be >= 1".into());
        }
        match self.tau {
            TauRule::Fixed { tau } if !(tau > 0.0 && tau.is_finite()) => {
                return bad(format!("tau must be positive, got {tau}"))
            }
            TauRule::Balanced if self.network.hard_boundary => {
                return Err(Error::BalancingUndefined("the network is hard-constrained".into()))
            }
            _ => {}
        }
        match self.features {
            FeatureConfig::Daff { count } | FeatureConfig::Fourier { rows: count, .. } if count == 0 => {
                return bad("feature count must be >= 1".into())
            }
            FeatureConfig::Fourier { sigma, .. } if !(sigma > 0.0) => {
                return bad(format!("sigma must be positive, got {sigma}"))
            }
            _ => {}
        }
        match self.optimizer {
            OptimizerConfig::Adam(a) if !(a.lr > 0.0) || a.decay_every == 0 => bad("invalid Adam settings".into()),
            OptimizerConfig::Lbfgs(l) if l.history == 0 || !(l.c1 > 0.0 && l.c1 < l.c2 && l.c2 < 1.0) => {
                bad("invalid L-BFGS settings".into())
            }
            _ => Ok(()),
        }
    }

    pub fn param_seed(&self) -> u64 {
        self.seed
    }

    pub fn batch_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
    }

    pub fn feature_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(2)
    }

    pub fn feature_map(&self, d: usize) -> Result<FeatureMap> {
        match self.features {
            FeatureConfig::Daff { count } => FeatureMap::daff(d, count),
            FeatureConfig::Fourier { rows, sigma } => FeatureMap::fourier(d, rows, sigma, self.feature_seed()),
            FeatureConfig::Identity => FeatureMap::identity(d),
        }
    }

    pub fn architecture(&self, fmap: &FeatureMap) -> Architecture {
        let mut arch = Architecture::new(fmap.output_dim(), self.network.width, self.network.depth)
            .hard(self.network.hard_boundary);
        arch.train_encoder_bias = self.network.train_encoder_bias;
        arch
    }
}

/// `sqrt(sum (pred - exact)^2 / sum exact^2)`.
pub fn l2_relative_error_values(pred: &[f64], exact: &[f64]) -> Result<f64> {
    if pred.len() != exact.len() {
        return Err(Error::SizeMismatch {
            expected: exact.len(),
            got: pred.len(),
        });
    }
    let den: Vec<f64> = exact.iter().map(|u| u * u).collect();
    let den = pairwise_sum(&den);
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: Vec<f64> = pred.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok((pairwise_sum(&num) / den).sqrt())
}

/// L2 relative error of the network against the exact solution at
/// `test_points`.
pub fn l2_relative_error(
    params: &NetworkParams,
    fmap: &FeatureMap,
    problem: &ProblemSpec,
    test_points: &PointSet,
) -> Result<f64> {
    L2Evaluator::new(fmap, problem, test_points).error(params)
}

/// Precomputed features and exact values on a test set.
pub struct L2Evaluator {
    prepared: Prepared,
    exact: Vec<f64>,
}

impl L2Evaluator {
    pub fn new(fmap: &FeatureMap, problem: &ProblemSpec, points: &PointSet) -> Self {
        Self {
            prepared: Prepared::new(fmap, points, false),
            exact: points.iter().map(|x| problem.exact(x)).collect(),
        }
    }

    pub fn error(&self, params: &NetworkParams) -> Result<f64> {
        l2_relative_error_values(&engine::evaluate(params, &self.prepared).values(), &self.exact)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub experiment: String,
    pub method: String,
    pub optimizer: String,
    pub seed: u64,
    pub steps_requested: usize,
    pub steps_run: usize,
    pub status: String,
    pub error: Option<String>,
    pub stop_reason: Option<StopReason>,
    pub tau: Option<f64>,
    pub lambda_b: f64,
    pub initial_loss: f64,
    pub final_loss: Option<f64>,
    pub final_l2: Option<f64>,
    pub best_l2: Option<f64>,
    pub steps_to_1pct: Option<usize>,
    pub wall_s: f64,
    pub evaluations: usize,
    pub linesearch_fallbacks: usize,
    pub armijo_violations: usize,
    pub param_count: usize,
    pub trainable_count: usize,
    pub threads: usize,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.status == "ok"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if s.schema_version != SUMMARY_SCHEMA_VERSION {
            return Err(Error::Format {
                what: "run summary",
                detail: format!(
                    "schema version {} (expected {SUMMARY_SCHEMA_VERSION})",
                    s.schema_version
                ),
            });
        }
        Ok(s)
    }
}

pub struct TrainOutcome {
    pub network: Network,
    pub metrics: RunMetrics,
    pub summary: RunSummary,
}

impl TrainOutcome {
    /// Writes `metrics.csv`, `checkpoint.bin`, `summary.json` and
    /// `config.toml` into `dir`.
    pub fn write_artifacts(&self, dir: &Path, config: &TrainConfig) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.metrics.save(&dir.join("metrics.csv"))?;
        save_checkpoint(&self.network, &dir.join("checkpoint.bin"))?;
        self.summary.save(&dir.join("summary.json"))?;
        std::fs::write(dir.join("config.toml"), config.to_toml())?;
        Ok(())
    }
}

/// Builds the loss for `config`, resolving the `tau` rule at the initial
/// parameters. Returns the evaluator and the `tau` in use.
pub fn build_loss(
    problem: &ProblemSpec,
    config: &TrainConfig,
    fmap: &FeatureMap,
    params: &NetworkParams,
) -> Result<(LossEvaluator, Option<f64>)> {
    let hard = config.network.hard_boundary;
    match config.method {
        LossKind::Pinn => {
            let ev = LossEvaluator::new(
                problem,
                fmap,
                hard,
                LossKind::Pinn,
                None,
                config.lambda_b,
                config.residual_offset,
            )?;
            Ok((ev, None))
        }
        LossKind::Svpinn => {
            let start_tau = match config.tau {
                TauRule::Fixed { tau } => tau,
                TauRule::Balanced => 1.0,
            };
            let batch = sample_wm_batch(&problem.grid(), start_tau, config.batch.samples, config.batch_seed())?;
            let mut ev = LossEvaluator::new(
                problem,
                fmap,
                hard,
                LossKind::Svpinn,
                Some(batch),
                config.lambda_b,
                config.residual_offset,
            )?;
            if config.tau == TauRule::Balanced {
                let tau = balance_tau(params, &ev)?;
                let scaled = ev.batch().expect("sv-pinn batch").with_tau(tau)?;
                ev.set_batch(scaled)?;
                return Ok((ev, Some(tau)));
            }
            Ok((ev, Some(start_tau)))
        }
    }
}

/// Runs one training job. Configuration errors are returned as `Err`; a
/// non-finite loss during optimisation ends the run with status `aborted`
/// and the metrics recorded so far.
pub fn train(problem: &ProblemSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let d = problem.dim();
    let fmap = config.feature_map(d)?;
    let arch = config.architecture(&fmap);
    let params = glorot_init_scaled(arch, config.param_seed(), config.network.init_gain);
    let (evaluator, tau) = build_loss(problem, config, &fmap, &params)?;
    let l2 = L2Evaluator::new(&fmap, problem, &problem.test_points());
    let initial_loss = evaluator.loss(&params)?.total;

    let start = Instant::now();
    let mut metrics = RunMetrics::default();
    let steps = config.steps;
    let every = config.eval_every;
    let mut objective = NetworkObjective {
        evaluator: &evaluator,
        params: params.clone(),
    };
    let mut probe = params.clone();
    let monitor = |step: usize, theta: &[f64], loss: &LossValue| -> Result<Control> {
        let mut l2_err = None;
        if step.is_multiple_of(every) || step == steps {
            probe.set_trainable(theta)?;
            l2_err = Some(l2.error(&probe)?);
        }
        metrics.push(MetricRecord {
            step,
            total_loss: loss.total,
            interior_loss: loss.interior,
            boundary_loss: loss.boundary,
            l2_rel_err: l2_err,
            wall_s: start.elapsed().as_secs_f64(),
        })?;
        let hit = matches!((l2_err, config.target_l2), (Some(e), Some(t)) if e < t);
        Ok(if hit { Control::Stop } else { Control::Continue })
    };
    let theta0 = params.trainable();
    let result = match config.optimizer {
        OptimizerConfig::Adam(a) => adam_run(&a, theta0, &mut objective, steps, monitor),
        OptimizerConfig::Lbfgs(l) => lbfgs_run(&l, theta0, &mut objective, steps, monitor),
    };
    let wall_s = start.elapsed().as_secs_f64();

    let mut network = Network::new(fmap, params)?;
    let (status, error, report) = match result {
        Ok(report) => ("ok", None, Some(report)),
        Err(e @ Error::NonFinite { .. }) => ("aborted", Some(e.to_string()), None),
        Err(e) => return Err(e),
    };
    if let Some(r) = &report {
        network.params.set_trainable(&r.theta)?;
        // a run stopped by the gradient tolerance may end between evaluations
        if metrics.last().is_some_and(|m| m.l2_rel_err.is_none()) {
            let e = l2.error(&network.params)?;
            metrics.records.last_mut().expect("non-empty").l2_rel_err = Some(e);
        }
    }
    let summary = RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        experiment: problem.label(),
        method: config.method.name().into(),
        optimizer: config.optimizer.name().into(),
        seed: config.seed,
        steps_requested: steps,
        steps_run: metrics.last().map_or(0, |r| r.step),
        status: status.into(),
        error,
        stop_reason: report.as_ref().map(|r| r.reason),
        tau,
        lambda_b: config.lambda_b,
        initial_loss,
        final_loss: metrics.last().map(|r| r.total_loss),
        final_l2: metrics.final_l2(),
        best_l2: metrics.best_l2(),
        steps_to_1pct: metrics.steps_to_threshold(1e-2),
        wall_s,
        evaluations: report.as_ref().map_or(0, |r| r.evaluations),
        linesearch_fallbacks: report.as_ref().map_or(0, |r| r.fallbacks),
        armijo_violations: report.as_ref().map_or(0, |r| r.armijo_violations),
        param_count: arch.param_count(),
        trainable_count: arch.trainable_count(),
        threads: rayon::current_num_threads(),
    };
    Ok(TrainOutcome {
        network,
        metrics,
        summary,
    })
}
