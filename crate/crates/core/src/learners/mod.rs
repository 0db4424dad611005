//! Gradient-descent trainers for the base and meta models.
//!
//! Every model implements [`Differentiable`]: it exposes its parameters as
//! flat blocks and returns the mean data loss with matching gradient blocks.
//! The shared [`fit`] loop adds the L2 penalty, shuffles with a seeded
//! generator and applies SGD or Adam; [`finite_diff_check`] reuses the same
//! surface for central-difference verification.

mod gradcheck;
mod io;
mod linear;
mod mlp;
mod optim;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;
use crate::seed;

pub use gradcheck::{finite_diff_check, finite_diff_check_penalized, BlockReport, GradientReport};
pub use io::{decode_model, encode_model, load_model, write_model, ModelHeader};
pub use linear::{train_linear, LinearModel, LossKind};
pub use mlp::{dropout_mask, train_mlp, Activation, DenseLayer, MlpCache, MlpModel, Mode};
pub use optim::{Optimizer, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub l2_penalty: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

fn default_lr() -> f64 {
    1e-3
}

fn default_epochs() -> usize {
    30
}

fn default_batch() -> usize {
    64
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            l2_penalty: 0.0,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            Validation,
            "learning_rate must be positive, got {}",
            self.learning_rate
        );
        ensure!(self.epochs >= 1, Validation, "epochs must be at least 1");
        ensure!(self.batch_size >= 1, Validation, "batch_size must be at least 1");
        ensure!(
            self.l2_penalty >= 0.0 && self.l2_penalty.is_finite(),
            Validation,
            "l2_penalty must be non-negative"
        );
        self.optimizer.validate()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }
}

/// Where a trained model came from; persisted in model file headers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn of<T: Serialize>(seed: u64, config: &T) -> Self {
        let json = serde_json::to_vec(config).expect("config serializes");
        Provenance {
            seed,
            config_hash: seed::sha256_hex(&json),
        }
    }
}

/// Row-indexable training input: a single matrix or one matrix per modality.
pub trait Batch {
    fn n(&self) -> usize;
    fn select(&self, rows: &[usize]) -> Self;
}

impl Batch for Matrix {
    fn n(&self) -> usize {
        self.rows()
    }

    fn select(&self, rows: &[usize]) -> Self {
        self.select_rows(rows)
    }
}

impl Batch for Vec<Matrix> {
    fn n(&self) -> usize {
        self.first().map_or(0, Matrix::rows)
    }

    fn select(&self, rows: &[usize]) -> Self {
        self.iter().map(|m| m.select_rows(rows)).collect()
    }
}

pub trait Differentiable {
    type Input: Batch;

    fn block_names(&self) -> Vec<String>;
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
    /// Blocks that receive the L2 penalty (weights, not biases).
    fn penalized(&self) -> Vec<bool>;

    /// Mean data loss over the rows of `x` and its gradient blocks. Dropout is
    /// applied only when `rng` is supplied.
    fn loss_grad(&self, x: &Self::Input, y: &Matrix, rng: Option<&mut ChaCha8Rng>) -> (f64, Vec<Vec<f64>>);

    fn loss(&self, x: &Self::Input, y: &Matrix) -> f64 {
        self.loss_grad(x, y, None).0
    }
}

/// `l2 · Σ w²` over penalized blocks.
pub fn l2_penalty<M: Differentiable + ?Sized>(model: &M, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    model
        .blocks()
        .iter()
        .zip(model.penalized())
        .filter(|(_, p)| *p)
        .map(|(b, _)| b.iter().map(|w| w * w).sum::<f64>())
        .sum::<f64>()
        * l2
}

/// Full objective: mean data loss plus L2 penalty, evaluated without dropout.
pub fn objective<M: Differentiable + ?Sized>(model: &M, x: &M::Input, y: &Matrix, l2: f64) -> f64 {
    model.loss(x, y) + l2_penalty(model, l2)
}

/// Objective gradient, without dropout.
pub fn objective_grad<M: Differentiable + ?Sized>(model: &M, x: &M::Input, y: &Matrix, l2: f64) -> Vec<Vec<f64>> {
    let (_, mut grads) = model.loss_grad(x, y, None);
    add_penalty_grad(model, &mut grads, l2);
    grads
}

fn add_penalty_grad<M: Differentiable + ?Sized>(model: &M, grads: &mut [Vec<f64>], l2: f64) {
    if l2 == 0.0 {
        return;
    }
    for ((g, b), pen) in grads.iter_mut().zip(model.blocks()).zip(model.penalized()) {
        if pen {
            for (gi, wi) in g.iter_mut().zip(b) {
                *gi += 2.0 * l2 * wi;
            }
        }
    }
}

/// Per-epoch full-data objective recorded during training.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
}

/// Mini-batch training loop shared by every model.
pub fn fit<M: Differentiable>(model: &mut M, x: &M::Input, y: &Matrix, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = x.n();
    ensure!(n >= 1, Validation, "training requires at least one sample");
    ensure!(y.rows() == n, Validation, "{} target rows for {n} samples", y.rows());
    let mut rng = seed::rng(cfg.seed);
    let mut state = OptimizerState::new(&model.blocks());
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(chunk);
            let yb = y.select_rows(chunk);
            let (loss, mut grads) = model.loss_grad(&xb, &yb, Some(&mut rng));
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            add_penalty_grad(model, &mut grads, cfg.l2_penalty);
            state.step(&cfg.optimizer, cfg.learning_rate, &mut model.blocks_mut(), &grads);
        }
        let loss = objective(model, x, y, cfg.l2_penalty);
        if !loss.is_finite() || model.blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { epoch, loss });
        }
        history.epoch_loss.push(loss);
    }
    Ok(history)
}

/// Numerically stable `ln(1 + e^z)`.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits and `dL/dz` per cell.
pub fn bce_with_logits(z: &Matrix, y: &Matrix) -> (f64, Matrix) {
    let cells = (z.rows() * z.cols()).max(1) as f64;
    let mut grad = Matrix::zeros(z.rows(), z.cols());
    let mut loss = 0.0;
    for ((g, &zi), &yi) in grad.as_mut_slice().iter_mut().zip(z.as_slice()).zip(y.as_slice()) {
        loss += softplus(zi) - yi * zi;
        *g = (sigmoid(zi) - yi) / cells;
    }
    (loss / cells, grad)
}

/// A trained base or meta predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.input_dim(),
            Model::Mlp(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.num_tags(),
            Model::Mlp(m) => m.output_dim(),
        }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Model::Linear(m) => m.predict_proba(x),
            Model::Mlp(m) => m.predict_proba(x),
        }
    }
}

pub fn predict_proba(model: &Model, x: &Matrix) -> Result<Matrix> {
    model.predict_proba(x)
}
