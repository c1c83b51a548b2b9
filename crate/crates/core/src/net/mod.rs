//! Modified MLP with multiplicative residual connections.
//!
//! With encodings `U = tanh(W_U phi + b_U)`, `V = tanh(W_V phi + b_V)` and
//! `g^0 = phi(x)`, each hidden layer computes
//! `f^l = tanh(W^l g^{l-1} + b^l)`, `g^l = f^l * U + (1 - f^l) * V`, and the
//! output is `u = W^{K+1} g^K + b^{K+1}`. With domain-aware features and all
//! biases frozen at zero the output vanishes on the boundary for every
//! parameter value.

mod checkpoint;
pub mod engine;
mod features;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::PointSet;
use crate::error::{Error, Result};
use crate::jet::EvalJet;
use crate::problems::Operator;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use engine::{JetField, Prepared, Tape};
pub use features::{FeatureKind, FeatureMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Feature dimension `m`.
    pub input_dim: usize,
    /// Hidden width `r`.
    pub width: usize,
    /// Number of hidden layers `K`.
    pub depth: usize,
    /// All biases frozen at zero (requires domain-aware features).
    pub hard_boundary: bool,
    /// Encoder biases `b_U`, `b_V` trainable; ignored in hard-boundary mode.
    pub train_encoder_bias: bool,
}

impl Architecture {
    pub fn new(input_dim: usize, width: usize, depth: usize) -> Self {
        Self {
            input_dim,
            width,
            depth,
            hard_boundary: false,
            train_encoder_bias: true,
        }
    }

    pub fn hard(mut self, on: bool) -> Self {
        self.hard_boundary = on;
        self
    }

    /// `(rows, cols)` of every tensor in storage order: weights `W_U`, `W_V`,
    /// `W^1..W^K`, `W^{K+1}`, then biases `b_U`, `b_V`, `b^1..b^K`, `b^{K+1}`.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let (m, r, k) = (self.input_dim, self.width, self.depth);
        let mut out = vec![(r, m), (r, m)];
        for l in 0..k {
            out.push((r, if l == 0 { m } else { r }));
        }
        out.push((1, if k == 0 { m } else { r }));
        out.push((r, 1));
        out.push((r, 1));
        for _ in 0..k {
            out.push((r, 1));
        }
        out.push((1, 1));
        out
    }

    pub fn layout(&self) -> Layout {
        let shapes = self.shapes();
        let k = self.depth;
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut at = 0;
        for (r, c) in &shapes {
            offsets.push(at);
            at += r * c;
        }
        let n_weights = offsets[k + 3];
        Layout {
            w_u: offsets[0],
            w_v: offsets[1],
            w_hidden: offsets[2..2 + k].to_vec(),
            w_out: offsets[2 + k],
            b_u: offsets[3 + k],
            b_v: offsets[4 + k],
            b_hidden: offsets[5 + k..5 + 2 * k].to_vec(),
            b_out: offsets[5 + 2 * k],
            n_weights,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// Ranges of the flat parameter vector that the optimiser may change.
    pub fn trainable_ranges(&self) -> Vec<Range<usize>> {
        let lay = self.layout();
        if self.hard_boundary {
            vec![0..lay.n_weights]
        } else if self.train_encoder_bias {
            vec![0..lay.total]
        } else {
            vec![0..lay.n_weights, lay.b_v + self.width..lay.total]
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable_ranges().iter().map(|r| r.len()).sum()
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub w_u: usize,
    pub w_v: usize,
    pub w_hidden: Vec<usize>,
    pub w_out: usize,
    pub b_u: usize,
    pub b_v: usize,
    pub b_hidden: Vec<usize>,
    pub b_out: usize,
    pub n_weights: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    layout: Layout,
    values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: Architecture) -> Self {
        let layout = arch.layout();
        let values = vec![0.0; layout.total];
        Self { arch, layout, values }
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        let layout = arch.layout();
        if values.len() != layout.total {
            return Err(Error::SizeMismatch {
                expected: layout.total,
                got: values.len(),
            });
        }
        if arch.hard_boundary && values[layout.n_weights..].iter().any(|&b| b != 0.0) {
            return Err(Error::HardBoundary);
        }
        Ok(Self { arch, layout, values })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to every entry, frozen ones included; callers that
    /// break the hard-boundary invariant get [`Error::HardBoundary`] from
    /// [`NetworkParams::check`].
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn check(&self) -> Result<()> {
        if self.arch.hard_boundary && self.values[self.layout.n_weights..].iter().any(|&b| b != 0.0) {
            return Err(Error::HardBoundary);
        }
        Ok(())
    }

    /// Trainable entries, concatenated in storage order.
    pub fn trainable(&self) -> Vec<f64> {
        self.gather(&self.values)
    }

    pub fn set_trainable(&mut self, theta: &[f64]) -> Result<()> {
        let expected = self.arch.trainable_count();
        if theta.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                got: theta.len(),
            });
        }
        let mut at = 0;
        for r in self.arch.trainable_ranges() {
            let len = r.len();
            self.values[r].copy_from_slice(&theta[at..at + len]);
            at += len;
        }
        Ok(())
    }

    /// Restricts a full-layout vector (e.g. a gradient) to the trainable set.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.trainable_count());
        for r in self.arch.trainable_ranges() {
            out.extend_from_slice(&full[r]);
        }
        out
    }
}

/// Glorot-uniform weights, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`;
/// biases zero.
pub fn glorot_init(arch: Architecture, seed: u64) -> NetworkParams {
    glorot_init_scaled(arch, seed, 1.0)
}

/// Glorot-uniform with every bound multiplied by `gain`; the same underlying
/// uniform draws as [`glorot_init`], rescaled.
pub fn glorot_init_scaled(arch: Architecture, seed: u64, gain: f64) -> NetworkParams {
    let mut params = NetworkParams::zeros(arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = arch.shapes();
    let mut at = 0;
    for &(rows, cols) in &shapes[..arch.depth + 3] {
        let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
        for v in &mut params.values[at..at + rows * cols] {
            *v = rng.random_range(-limit..limit);
        }
        at += rows * cols;
    }
    params
}

/// Feature map plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub fmap: FeatureMap,
    pub params: NetworkParams,
}

impl Network {
    pub fn new(fmap: FeatureMap, params: NetworkParams) -> Result<Self> {
        let arch = params.architecture();
        if arch.input_dim != fmap.output_dim() {
            return Err(Error::SizeMismatch {
                expected: fmap.output_dim(),
                got: arch.input_dim,
            });
        }
        if arch.hard_boundary && !fmap.is_daff() {
            return Err(Error::HardBoundary);
        }
        params.check()?;
        Ok(Self { fmap, params })
    }

    pub fn dim(&self) -> usize {
        self.fmap.dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        forward(&self.params, &self.fmap, x)
    }

    pub fn eval_jet(&self, x: &[f64]) -> Result<EvalJet> {
        eval_jet(&self.params, &self.fmap, x)
    }

    /// Output values at every point.
    pub fn values_at(&self, points: &PointSet) -> Vec<f64> {
        let prepared = Prepared::new(&self.fmap, points, false);
        engine::evaluate(&self.params, &prepared).values()
    }

    pub fn jets_at(&self, points: &PointSet) -> JetField {
        let prepared = Prepared::new(&self.fmap, points, true);
        engine::evaluate(&self.params, &prepared)
    }
}

fn check_point(params: &NetworkParams, fmap: &FeatureMap, x: &[f64]) -> Result<()> {
    if x.len() != fmap.dim() {
        return Err(Error::IndexDimension {
            expected: fmap.dim(),
            got: x.len(),
        });
    }
    if params.architecture().input_dim != fmap.output_dim() {
        return Err(Error::SizeMismatch {
            expected: fmap.output_dim(),
            got: params.architecture().input_dim,
        });
    }
    Ok(())
}

/// Network output at one point.
pub fn forward(params: &NetworkParams, fmap: &FeatureMap, x: &[f64]) -> Result<f64> {
    check_point(params, fmap, x)?;
    let pts = PointSet::new(x.len(), x.to_vec())?;
    let prepared = Prepared::new(fmap, &pts, false);
    Ok(engine::evaluate(params, &prepared).value(0))
}

/// Value, gradient and pure second partials of the output at one point.
pub fn eval_jet(params: &NetworkParams, fmap: &FeatureMap, x: &[f64]) -> Result<EvalJet> {
    check_point(params, fmap, x)?;
    let pts = PointSet::new(x.len(), x.to_vec())?;
    let prepared = Prepared::new(fmap, &pts, true);
    Ok(jet_from_field(&engine::evaluate(params, &prepared), 0))
}

pub fn jet_from_field(field: &JetField, p: usize) -> EvalJet {
    let d = field.d;
    let row = field.point(p);
    if field.channels == 1 {
        return EvalJet {
            value: row[0],
            gradient: vec![f64::NAN; d],
            second: vec![f64::NAN; d],
        };
    }
    EvalJet {
        value: row[0],
        gradient: row[1..1 + d].to_vec(),
        second: row[1 + d..1 + 2 * d].to_vec(),
    }
}

/// `L u_theta(x)` for one operator kind.
pub fn apply_operator(op: &Operator, jet: &EvalJet, x: &[f64]) -> Result<f64> {
    op.apply(jet, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn daff_net(d: usize, m: usize, r: usize, k: usize, seed: u64) -> Network {
        let fmap = FeatureMap::daff(d, m).unwrap();
        let params = glorot_init(Architecture::new(m, r, k).hard(true), seed);
        Network::new(fmap, params).unwrap()
    }

    #[test]
    fn layout_is_contiguous() {
        let arch = Architecture::new(5, 4, 2);
        let lay = arch.layout();
        assert_eq!(lay.w_u, 0);
        assert_eq!(lay.w_v, 20);
        assert_eq!(lay.w_hidden, vec![40, 60]);
        assert_eq!(lay.w_out, 76);
        assert_eq!(lay.n_weights, 80);
        assert_eq!(lay.b_u, 80);
        assert_eq!(lay.b_hidden, vec![88, 92]);
        assert_eq!(lay.b_out, 96);
        assert_eq!(lay.total, 97);
        assert_eq!(arch.hard(true).trainable_count(), 80);
        let mut frozen_enc = arch;
        frozen_enc.train_encoder_bias = false;
        assert_eq!(frozen_enc.trainable_count(), 97 - 8);
    }

    #[test]
    fn zero_readout_without_layers_is_zero() {
        let fmap = FeatureMap::identity(2).unwrap();
        let net = Network::new(fmap, NetworkParams::zeros(Architecture::new(2, 3, 0))).unwrap();
        for x in [[0.1, 0.2], [0.7, 0.9]] {
            assert_eq!(net.forward(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn hand_computed_single_layer() {
        // d = 1, r = 1, identity features, K = 1.
        let arch = Architecture::new(1, 1, 1);
        // W_U, W_V, W1, W_out, b_U, b_V, b1, b_out
        let vals = vec![0.5, -1.2, 2.0, 1.5, 0.1, 0.3, -0.2, 0.05];
        let params = NetworkParams::from_values(arch, vals).unwrap();
        let fmap = FeatureMap::identity(1).unwrap();
        let x = 0.4f64;
        let u = (0.5 * x + 0.1).tanh();
        let v = (-1.2 * x + 0.3).tanh();
        let f = (2.0 * x - 0.2).tanh();
        let g = f * u + (1.0 - f) * v;
        let expected = 1.5 * g + 0.05;
        assert_relative_eq!(forward(&params, &fmap, &[x]).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn linear_readout_of_identity_features() {
        let arch = Architecture::new(2, 3, 0);
        let mut params = NetworkParams::zeros(arch);
        let lay = params.layout().clone();
        params.values_mut()[lay.w_out] = 1.5;
        params.values_mut()[lay.w_out + 1] = -0.25;
        params.values_mut()[lay.b_out] = 0.75;
        let fmap = FeatureMap::identity(2).unwrap();
        let jet = eval_jet(&params, &fmap, &[0.3, 0.8]).unwrap();
        assert_relative_eq!(jet.value, 1.5 * 0.3 - 0.25 * 0.8 + 0.75, epsilon = 1e-15);
        assert_eq!(jet.gradient, vec![1.5, -0.25]);
        assert_eq!(jet.second, vec![0.0, 0.0]);
    }

    #[test]
    fn hard_boundary_is_exact() {
        let net = daff_net(2, 30, 16, 2, 4);
        for x in [[0.0, 0.4], [1.0, 0.1], [0.3, 1.0], [0.8, 0.0]] {
            assert_eq!(net.forward(&x).unwrap(), 0.0);
        }
        let soft = Network::new(
            FeatureMap::fourier(2, 4, 1.0, 0).unwrap(),
            glorot_init(Architecture::new(8, 4, 1).hard(true), 0),
        );
        assert!(matches!(soft, Err(Error::HardBoundary)));
    }

    #[test]
    fn glorot_is_seeded_and_biases_zero() {
        let arch = Architecture::new(10, 8, 2);
        let a = glorot_init(arch, 1);
        assert_eq!(a, glorot_init(arch, 1));
        assert_ne!(a, glorot_init(arch, 2));
        assert!(a.values()[a.layout().n_weights..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn batched_matches_single_point() {
        let net = daff_net(2, 12, 8, 2, 9);
        let pts = PointSet::new(2, (0..600).map(|i| ((i * 37) % 101) as f64 / 101.0).collect()).unwrap();
        let field = net.jets_at(&pts);
        for p in [0, 255, 256, 299] {
            let single = net.eval_jet(pts.point(p)).unwrap();
            let batched = jet_from_field(&field, p);
            assert_relative_eq!(single.value, batched.value, epsilon = 1e-14);
            for j in 0..2 {
                assert_relative_eq!(single.gradient[j], batched.gradient[j], epsilon = 1e-12);
                assert_relative_eq!(single.second[j], batched.second[j], epsilon = 1e-10);
            }
        }
        let values = net.values_at(&pts);
        assert_relative_eq!(values[299], field.value(299), epsilon = 1e-14);
    }
}
