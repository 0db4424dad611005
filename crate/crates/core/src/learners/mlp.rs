use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::matrix::{accumulate_affine_grad, affine, backprop_input, Matrix};
use crate::seed;

use super::{bce_with_logits, fit, sigmoid, Differentiable, Provenance, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Elementwise sigmoid on the output layer, independent per tag.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine layer with `out × in` row-major weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..=limit)).collect();
        DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        affine(x, &self.weights, &self.bias)
    }
}

/// Multilayer perceptron: ReLU hidden layers with inverted dropout and a
/// sigmoid output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    /// Dropout rate applied after each hidden layer.
    pub dropout: Vec<f64>,
    pub provenance: Provenance,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input seen by each layer (post-dropout for hidden layers).
    pub inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pub hidden_pre: Vec<Matrix>,
    /// Per-element dropout scale (0 or `1/(1−p)`) for each hidden layer.
    pub masks: Vec<Option<Matrix>>,
    pub logits: Matrix,
}

impl MlpModel {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, dropout: &[f64], seed: u64) -> Result<Self> {
        ensure!(input_dim >= 1 && output_dim >= 1, Validation, "MLP input and output dimensions must be positive");
        ensure!(hidden.iter().all(|&h| h >= 1), Validation, "hidden layer sizes must be positive");
        let dropout = broadcast_dropout(dropout, hidden.len())?;
        let mut rng = seed::rng(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(DenseLayer::glorot(prev, h, Activation::Relu, &mut rng));
            prev = h;
        }
        layers.push(DenseLayer::glorot(prev, output_dim, Activation::Sigmoid, &mut rng));
        Ok(MlpModel {
            layers,
            dropout,
            provenance: Provenance::default(),
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>, dropout: Vec<f64>) -> Result<Self> {
        ensure!(!layers.is_empty(), Validation, "MLP needs at least one layer");
        ensure!(dropout.len() + 1 == layers.len(), Validation, "need one dropout rate per hidden layer");
        ensure!(dropout.iter().all(|p| (0.0..1.0).contains(p)), Validation, "dropout rates must lie in [0,1)");
        for (i, l) in layers.iter().enumerate() {
            ensure!(
                l.weights.len() == l.in_dim * l.out_dim && l.bias.len() == l.out_dim,
                Validation,
                "layer {i} parameter sizes do not match {}x{}",
                l.out_dim,
                l.in_dim
            );
            let expected = if i + 1 == layers.len() { Activation::Sigmoid } else { Activation::Relu };
            ensure!(l.activation == expected, Validation, "layer {i} must use {expected:?}");
            if i > 0 {
                ensure!(layers[i - 1].out_dim == l.in_dim, Validation, "layer {i} input does not match previous output");
            }
            ensure!(
                l.weights.iter().chain(&l.bias).all(|v| v.is_finite()),
                Validation,
                "layer {i} has non-finite parameters"
            );
        }
        Ok(MlpModel {
            layers,
            dropout,
            provenance: Provenance::default(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward_cache(&self, x: &Matrix, mode: Mode, mut rng: Option<&mut ChaCha8Rng>) -> MlpCache {
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden_pre = Vec::with_capacity(hidden);
        let mut masks = Vec::with_capacity(hidden);
        let mut current = x.clone();
        for (i, layer) in self.layers[..hidden].iter().enumerate() {
            let z = layer.forward(&current);
            let mut h = z.clone();
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            let p = self.dropout[i];
            let mask = match (mode, rng.as_deref_mut()) {
                (Mode::Train, Some(r)) if p > 0.0 => Some(dropout_mask(h.rows(), h.cols(), p, r)),
                _ => None,
            };
            if let Some(m) = &mask {
                h.as_mut_slice().iter_mut().zip(m.as_slice()).for_each(|(v, s)| *v *= s);
            }
            inputs.push(std::mem::replace(&mut current, h));
            hidden_pre.push(z);
            masks.push(mask);
        }
        let logits = self.layers[hidden].forward(&current);
        inputs.push(current);
        MlpCache {
            inputs,
            hidden_pre,
            masks,
            logits,
        }
    }

    /// Output logits in eval mode.
    pub fn logits(&self, x: &Matrix) -> Matrix {
        self.forward_cache(x, Mode::Eval, None).logits
    }

    /// Gradient blocks (weights, bias per layer) and the input gradient for a
    /// given `dL/dlogits`.
    pub fn backward(&self, cache: &MlpCache, dlogits: Matrix) -> (Vec<Vec<f64>>, Matrix) {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(2 * self.layers.len());
        let mut delta = dlogits;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut gw = vec![0.0; layer.weights.len()];
            let mut gb = vec![0.0; layer.bias.len()];
            accumulate_affine_grad(&cache.inputs[i], &delta, &mut gw, &mut gb);
            grads.push(gb);
            grads.push(gw);
            let mut dx = backprop_input(&delta, &layer.weights, layer.in_dim);
            if i > 0 {
                let h = i - 1;
                if let Some(m) = &cache.masks[h] {
                    dx.as_mut_slice().iter_mut().zip(m.as_slice()).for_each(|(g, s)| *g *= s);
                }
                for (g, &z) in dx.as_mut_slice().iter_mut().zip(cache.hidden_pre[h].as_slice()) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = dx;
        }
        grads.reverse();
        (grads, delta)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        ensure!(
            x.cols() == self.input_dim(),
            Validation,
            "input has {} features, model expects {}",
            x.cols(),
            self.input_dim()
        );
        let mut z = self.logits(x);
        z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(z)
    }
}

fn broadcast_dropout(dropout: &[f64], hidden: usize) -> Result<Vec<f64>> {
    let rates = match dropout.len() {
        0 => vec![0.0; hidden],
        1 => vec![dropout[0]; hidden],
        l if l == hidden => dropout.to_vec(),
        l => {
            return Err(crate::Error::Validation(format!(
                "{l} dropout rates for {hidden} hidden layers"
            )))
        }
    };
    ensure!(rates.iter().all(|p| (0.0..1.0).contains(p)), Validation, "dropout rates must lie in [0,1)");
    Ok(rates)
}

/// Inverted-dropout scale factors: 0 with probability `p`, else `1/(1−p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = if rng.random::<f64>() < p { 0.0 } else { keep };
    }
    m
}

impl Differentiable for MlpModel {
    type Input = Matrix;

    fn block_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weights"), format!("layer{i}.bias")])
            .collect()
    }

    fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [&l.weights[..], &l.bias[..]]).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights[..], &mut l.bias[..]])
            .collect()
    }

    fn penalized(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|_| [true, false]).collect()
    }

    fn loss_grad(&self, x: &Matrix, y: &Matrix, rng: Option<&mut ChaCha8Rng>) -> (f64, Vec<Vec<f64>>) {
        let mode = if rng.is_some() { Mode::Train } else { Mode::Eval };
        let cache = self.forward_cache(x, mode, rng);
        let (loss, dz) = bce_with_logits(&cache.logits, y);
        (loss, self.backward(&cache, dz).0)
    }
}

/// Trains an MLP with the given hidden sizes on BCE over sigmoid outputs.
/// `dropout` holds one rate per hidden layer, or a single rate for all.
pub fn train_mlp(x: &Matrix, y: &Matrix, hidden: &[usize], dropout: &[f64], cfg: &TrainConfig) -> Result<MlpModel> {
    ensure!(x.rows() >= 1, Validation, "training requires at least one sample");
    ensure!(x.rows() == y.rows(), Validation, "{} feature rows vs {} target rows", x.rows(), y.rows());
    let mut model = MlpModel::new(x.cols(), hidden, y.cols(), dropout, seed::derive_seed(cfg.seed, "mlp-init", 0))?;
    fit(&mut model, x, y, cfg)?;
    model.provenance = Provenance::of(cfg.seed, &(hidden, &model.dropout, cfg));
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Optimizer;

    #[test]
    fn eval_forward_equals_plain_affine_relu_composition() {
        let m = MlpModel::new(3, &[5, 4], 2, &[0.0], 1).unwrap();
        let x = Matrix::from_rows(&[vec![0.2, -1.0, 0.5], vec![1.5, 0.0, -0.3]]).unwrap();
        let mut h = x.clone();
        for l in &m.layers[..2] {
            h = l.forward(&h);
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let z = m.layers[2].forward(&h);
        assert_eq!(m.logits(&x), z);
        let mut rng = seed::rng(3);
        assert_eq!(m.forward_cache(&x, Mode::Train, Some(&mut rng)).logits, z);
    }

    #[test]
    fn eval_predictions_are_repeatable_with_dropout() {
        let m = MlpModel::new(2, &[8], 3, &[0.5], 4).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let a = m.predict_proba(&x).unwrap();
        assert_eq!(a, m.predict_proba(&x).unwrap());
        assert!(a.as_slice().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn initialization_respects_glorot_bound() {
        let m = MlpModel::new(10, &[6], 4, &[], 0).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(m.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(m.layers[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn learns_xor() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![1.0], vec![0.0]]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 1500,
            batch_size: 4,
            seed: 1,
            optimizer: Optimizer::default(),
            ..Default::default()
        };
        let m = train_mlp(&x, &y, &[8], &[0.0], &cfg).unwrap();
        let p = m.predict_proba(&x).unwrap();
        for i in 0..4 {
            assert_eq!(p.get(i, 0).round(), y.get(i, 0), "point {i}: {}", p.get(i, 0));
        }
    }

    #[test]
    fn shape_and_rate_errors() {
        assert!(MlpModel::new(2, &[3, 3], 1, &[0.1, 0.2, 0.3], 0).is_err());
        assert!(MlpModel::new(2, &[3], 1, &[1.0], 0).is_err());
        let m = MlpModel::new(2, &[3], 1, &[], 0).unwrap();
        assert!(m.predict_proba(&Matrix::zeros(1, 3)).is_err());
        assert!(train_mlp(&Matrix::zeros(2, 2), &Matrix::zeros(3, 1), &[2], &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let x = Matrix::from_rows(&[vec![1e200, -1e200], vec![-1e200, 1e200]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let cfg = TrainConfig { learning_rate: 1e10, epochs: 5, batch_size: 2, optimizer: Optimizer::Sgd, ..Default::default() };
        match train_mlp(&x, &y, &[4], &[], &cfg) {
            Err(crate::Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
