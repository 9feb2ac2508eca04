//! Layered piecewise-affine networks with manual forward/backward passes.
//!
//! Layers 1..L-1 apply (leaky-)ReLU, the final layer is affine. The hidden
//! layers can carry per-unit extra biases (see [`crate::police`]) that pin an
//! activation pattern over a region; those extra biases participate in the
//! forward pass but never receive gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Pointwise activation for the hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu { slope } = self {
            if !(*slope > 0.0 && *slope < 1.0) {
                return Err(Error::Config(format!(
                    "leaky_relu slope must lie in (0, 1), got {slope}"
                )));
            }
        }
        Ok(())
    }

    /// Slope on the inactive side (0 for plain ReLU).
    pub fn negative_slope(&self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu { slope } => *slope,
        }
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        if z >= 0.0 {
            z
        } else {
            z * self.negative_slope()
        }
    }

    /// Derivative; the kink at 0 takes the active-side value.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        if z >= 0.0 {
            1.0
        } else {
            self.negative_slope()
        }
    }
}

/// Multilayer perceptron: weights `W⁽ⁱ⁾` (dᵢ × dᵢ₋₁), biases `b⁽ⁱ⁾` (dᵢ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

/// Parameter gradients, same shapes as the network parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Matrix>,
    pub d_biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            d_weights: net.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.d_weights {
            for x in a.as_mut_slice() {
                *x *= s;
            }
        }
        for a in &mut self.d_biases {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let w = self
            .d_weights
            .iter()
            .flat_map(|m| m.as_slice())
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        self.d_biases
            .iter()
            .flatten()
            .fold(w, |acc, x| acc.max(x.abs()))
    }
}

/// Intermediate activations of one forward pass, kept for backprop.
pub struct ForwardTrace {
    /// Post-activation values per layer, `h[0]` is the input.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activation values (including extra biases) for layers 1..L.
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has layers")
    }
}

impl Mlp {
    /// Fresh network with variance-scaled (2 / fan_in) zero-mean weights and
    /// zero biases. Deterministic for a given seed.
    pub fn init(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "need at least input and output layer dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        activation.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std
            }));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self { layer_dims: layer_dims.to_vec(), weights, biases, activation })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layer_dims.len() - 1;
        if self.weights.len() != l || self.biases.len() != l {
            return Err(Error::Shape("weights/biases length must equal layer count".into()));
        }
        for (i, w) in self.weights.iter().enumerate() {
            if w.rows() != self.layer_dims[i + 1] || w.cols() != self.layer_dims[i] {
                return Err(Error::Shape(format!(
                    "layer {} weight shape {}x{} does not chain with dims {:?}",
                    i + 1,
                    w.rows(),
                    w.cols(),
                    self.layer_dims
                )));
            }
            if self.biases[i].len() != self.layer_dims[i + 1] {
                return Err(Error::Shape(format!("layer {} bias length mismatch", i + 1)));
            }
        }
        self.activation.validate()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input dim {} does not match network input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass with optional per-hidden-layer extra biases.
    pub fn forward_traced(&self, extra_biases: Option<&[Vec<f64>]>, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        if let Some(extra) = extra_biases {
            if extra.len() != self.num_layers() - 1 {
                return Err(Error::Shape("extra biases must cover every hidden layer".into()));
            }
        }
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        let mut pre_activations = Vec::with_capacity(self.num_layers());
        activations.push(x.to_vec());
        for i in 0..self.num_layers() {
            let mut z = self.weights[i].matvec(activations.last().unwrap());
            for (zj, bj) in z.iter_mut().zip(&self.biases[i]) {
                *zj += bj;
            }
            if let Some(extra) = extra_biases {
                if i < self.num_layers() - 1 {
                    for (zj, ej) in z.iter_mut().zip(&extra[i]) {
                        *zj += ej;
                    }
                }
            }
            let h = if i + 1 == self.num_layers() {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre_activations.push(z);
            activations.push(h);
        }
        Ok(ForwardTrace { activations, pre_activations })
    }

    /// Plain forward pass (no extra biases).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(None, x)?.activations.pop().unwrap())
    }

    /// Gradient of `upstream · f(x)` with respect to all weights and biases,
    /// by reverse accumulation. Extra biases are constants: they shift the
    /// pre-activations in the trace but get no gradient entry of their own.
    /// Also returns the gradient with respect to the input.
    pub fn gradient_traced(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape("upstream dim must match output dim".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for i in (0..self.num_layers()).rev() {
            // delta currently holds dJ/dz_i (final layer has no activation).
            grads.d_weights[i].add_outer(1.0, &delta, &trace.activations[i]);
            for (g, d) in grads.d_biases[i].iter_mut().zip(&delta) {
                *g += d;
            }
            let mut prev = self.weights[i].tr_matvec(&delta);
            if i > 0 {
                for (p, z) in prev.iter_mut().zip(&trace.pre_activations[i - 1]) {
                    *p *= self.activation.derivative(*z);
                }
            }
            delta = prev;
        }
        Ok((grads, delta))
    }

    pub fn gradient(
        &self,
        extra_biases: Option<&[Vec<f64>]>,
        x: &[f64],
        upstream: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let trace = self.forward_traced(extra_biases, x)?;
        self.gradient_traced(&trace, upstream)
    }

    pub fn parameters_mut(&mut self) -> (&mut Vec<Matrix>, &mut Vec<Vec<f64>>) {
        (&mut self.weights, &mut self.biases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::init(&[2, 4, 2], Activation::Relu, 0).unwrap();
        let b = Mlp::init(&[2, 4, 2], Activation::Relu, 0).unwrap();
        assert_eq!(a, b);
        let c = Mlp::init(&[2, 4, 2], Activation::Relu, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_degenerate_dims() {
        assert!(Mlp::init(&[2], Activation::Relu, 0).is_err());
        assert!(Mlp::init(&[2, 0, 1], Activation::Relu, 0).is_err());
    }

    #[test]
    fn init_biases_are_zero() {
        let net = Mlp::init(&[4, 64, 64, 1], Activation::Relu, 7).unwrap();
        for b in &net.biases {
            assert!(b.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_weight_forward_returns_final_bias() {
        let mut net = Mlp::init(&[3, 4, 2], Activation::Relu, 3).unwrap();
        for w in &mut net.weights {
            for v in w.as_mut_slice() {
                *v = 0.0;
            }
        }
        net.biases[1] = vec![1.5, -2.0];
        for x in [[0.0, 0.0, 0.0], [1.0, -3.0, 2.5]] {
            assert_eq!(net.forward(&x).unwrap(), vec![1.5, -2.0]);
        }
    }

    #[test]
    fn forward_rejects_bad_input_dim() {
        let net = Mlp::init(&[2, 4, 2], Activation::Relu, 0).unwrap();
        assert!(net.forward(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::init(&[3, 8, 2], Activation::LeakyRelu { slope: 0.01 }, 5).unwrap();
        let (grads, dx) = net.gradient(None, &[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    /// Central finite differences over every parameter.
    fn finite_difference(net: &Mlp, x: &[f64], upstream: &[f64], h: f64) -> Gradients {
        let mut fd = Gradients::zeros_like(net);
        let eval = |n: &Mlp| -> f64 {
            let y = n.forward(x).unwrap();
            y.iter().zip(upstream).map(|(a, b)| a * b).sum()
        };
        for li in 0..net.num_layers() {
            for idx in 0..net.weights[li].as_slice().len() {
                let mut plus = net.clone();
                plus.weights[li].as_mut_slice()[idx] += h;
                let mut minus = net.clone();
                minus.weights[li].as_mut_slice()[idx] -= h;
                fd.d_weights[li].as_mut_slice()[idx] = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
            for idx in 0..net.biases[li].len() {
                let mut plus = net.clone();
                plus.biases[li][idx] += h;
                let mut minus = net.clone();
                minus.biases[li][idx] -= h;
                fd.d_biases[li][idx] = (eval(&plus) - eval(&minus)) / (2.0 * h);
            }
        }
        fd
    }

    fn max_rel_err(a: &Gradients, b: &Gradients) -> f64 {
        let mut worst = 0.0f64;
        for (ma, mb) in a.d_weights.iter().zip(&b.d_weights) {
            for (x, y) in ma.as_slice().iter().zip(mb.as_slice()) {
                worst = worst.max((x - y).abs() / (1.0 + x.abs().max(y.abs())));
            }
        }
        for (va, vb) in a.d_biases.iter().zip(&b.d_biases) {
            for (x, y) in va.iter().zip(vb) {
                worst = worst.max((x - y).abs() / (1.0 + x.abs().max(y.abs())));
            }
        }
        worst
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for seed in [11u64, 12, 13] {
            let net = Mlp::init(&[3, 6, 5, 2], Activation::LeakyRelu { slope: 0.01 }, seed).unwrap();
            let x = [0.37, -0.81, 0.52];
            let upstream = [1.0, -0.7];
            let (grads, _) = net.gradient(None, &x, &upstream).unwrap();
            let fd = finite_difference(&net, &x, &upstream, 1e-5);
            assert!(max_rel_err(&grads, &fd) <= 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = Mlp::init(&[3, 6, 2], Activation::Relu, 21).unwrap();
        let x = [0.4, 0.1, -0.3];
        let upstream = [0.5, 1.0];
        let (_, dx) = net.gradient(None, &x, &upstream).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut xp = x;
            xp[k] += h;
            let mut xm = x;
            xm[k] -= h;
            let f = |xx: &[f64]| -> f64 {
                let y = net.forward(xx).unwrap();
                y.iter().zip(upstream).map(|(a, b)| a * b).sum()
            };
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((dx[k] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_is_stable_in_region_interior() {
        let net = Mlp::init(&[2, 8, 1], Activation::Relu, 33).unwrap();
        let x = [0.43, 0.29];
        // Verify no pre-activation sits on an activation kink.
        let trace = net.forward_traced(None, &x).unwrap();
        assert!(trace.pre_activations[0].iter().all(|z| z.abs() > 1e-6));
        let (g0, _) = net.gradient(None, &x, &[1.0]).unwrap();
        let (g1, _) = net.gradient(None, &[x[0] + 1e-8, x[1] - 1e-8], &[1.0]).unwrap();
        let mut diff = g0.clone();
        diff.scale(-1.0);
        diff.add_assign(&g1);
        assert!(diff.max_abs() < 1e-6);
    }
}
