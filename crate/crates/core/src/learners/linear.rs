use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::matrix::{accumulate_affine_grad, affine, Matrix};

use super::{bce_with_logits, fit, sigmoid, Differentiable, Provenance, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Binary cross-entropy on sigmoid scores.
    Logistic,
    /// `max(0, 1 − y±·score)²` with `y± ∈ {−1, +1}`.
    SquaredHinge,
}

/// One-vs-rest linear model: `T × d` weights and `T` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub(crate) input_dim: usize,
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub loss: LossKind,
    pub provenance: Provenance,
}

impl LinearModel {
    pub fn zeros(input_dim: usize, num_tags: usize, loss: LossKind) -> Self {
        LinearModel {
            input_dim,
            weights: vec![0.0; input_dim * num_tags],
            bias: vec![0.0; num_tags],
            loss,
            provenance: Provenance::default(),
        }
    }

    pub fn from_parts(input_dim: usize, weights: Vec<f64>, bias: Vec<f64>, loss: LossKind) -> Result<Self> {
        ensure!(
            weights.len() == input_dim * bias.len(),
            Validation,
            "weights hold {} values, expected {}x{}",
            weights.len(),
            bias.len(),
            input_dim
        );
        ensure!(
            weights.iter().chain(&bias).all(|v| v.is_finite()),
            Validation,
            "linear model parameters must be finite"
        );
        Ok(LinearModel {
            input_dim,
            weights,
            bias,
            loss,
            provenance: Provenance::default(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_tags(&self) -> usize {
        self.bias.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Raw scores `x Wᵀ + b`.
    pub fn decision_function(&self, x: &Matrix) -> Result<Matrix> {
        ensure!(
            x.cols() == self.input_dim,
            Validation,
            "input has {} features, model expects {}",
            x.cols(),
            self.input_dim
        );
        Ok(affine(x, &self.weights, &self.bias))
    }

    /// Per-tag sigmoid of the score; for squared hinge the score is the margin.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.decision_function(x)?;
        z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(z)
    }
}

impl Differentiable for LinearModel {
    type Input = Matrix;

    fn block_names(&self) -> Vec<String> {
        vec!["weights".into(), "bias".into()]
    }

    fn blocks(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }

    fn penalized(&self) -> Vec<bool> {
        vec![true, false]
    }

    fn loss_grad(&self, x: &Matrix, y: &Matrix, _rng: Option<&mut ChaCha8Rng>) -> (f64, Vec<Vec<f64>>) {
        let z = affine(x, &self.weights, &self.bias);
        let (loss, dz) = match self.loss {
            LossKind::Logistic => bce_with_logits(&z, y),
            LossKind::SquaredHinge => squared_hinge(&z, y),
        };
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.bias.len()];
        accumulate_affine_grad(x, &dz, &mut gw, &mut gb);
        (loss, vec![gw, gb])
    }
}

fn squared_hinge(z: &Matrix, y: &Matrix) -> (f64, Matrix) {
    let cells = (z.rows() * z.cols()).max(1) as f64;
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    let mut loss = 0.0;
    for ((g, &zi), &yi) in grad.as_mut_slice().iter_mut().zip(z.as_slice()).zip(y.as_slice()) {
        let sign = if yi > 0.5 { 1.0 } else { -1.0 };
        let slack = (1.0 - sign * zi).max(0.0);
        loss += slack * slack;
        *g = -2.0 * sign * slack / cells;
    }
    (loss / cells, grad)
}

/// Trains a zero-initialized one-vs-rest linear model by mini-batch descent.
pub fn train_linear(x: &Matrix, y: &Matrix, loss: LossKind, cfg: &TrainConfig) -> Result<LinearModel> {
    ensure!(x.rows() >= 1, Validation, "training requires at least one sample");
    ensure!(x.rows() == y.rows(), Validation, "{} feature rows vs {} target rows", x.rows(), y.rows());
    let mut model = LinearModel::zeros(x.cols(), y.cols(), loss);
    fit(&mut model, x, y, cfg)?;
    model.provenance = Provenance::of(cfg.seed, &(loss, cfg));
    Ok(model)
}
