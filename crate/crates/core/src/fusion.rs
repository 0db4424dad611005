//! Late-fusion baselines: feature concatenation, sum pooling, max pooling and
//! additive attention over per-modality projections, each followed by an MLP
//! classifier and trained end to end.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{ensure, Result};
use crate::learners::{bce_with_logits, fit, sigmoid, Differentiable, MlpCache, MlpModel, Mode, Provenance, TrainConfig};
use crate::matrix::{accumulate_affine_grad, affine, dot, Matrix};
use crate::metrics::{evaluate_probs, EvalRow, MetricConfig};
use crate::seed::{self, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Concat,
    SumPool,
    MaxPool,
    Attention,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] = [FusionKind::Concat, FusionKind::SumPool, FusionKind::MaxPool, FusionKind::Attention];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Concat => "concat",
            FusionKind::SumPool => "sum_pool",
            FusionKind::MaxPool => "max_pool",
            FusionKind::Attention => "attention",
        }
    }
}

/// Linear map from one modality to the common dimension `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gate parameters: `g_i(x) = <u, tanh(V_i · proj_i(x))>`, softmax over modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGate {
    pub dim: usize,
    /// One `dim × p` matrix per modality.
    pub v: Vec<Vec<f64>>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub kind: FusionKind,
    pub input_dims: Vec<usize>,
    pub projection_dim: usize,
    pub projections: Vec<Projection>,
    pub attention: Option<AttentionGate>,
    pub head: MlpModel,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect()
}

/// Default common dimension: the smallest modality width, capped at 256.
pub fn default_projection_dim(input_dims: &[usize]) -> usize {
    input_dims.iter().copied().min().unwrap_or(1).min(256)
}

/// Combines already projected modality features. Returns the fused matrix
/// and, for attention, the per-sample gate weights (`n × M`).
pub fn fuse_projected(kind: FusionKind, projected: &[Matrix], gate: Option<&AttentionGate>) -> Result<(Matrix, Option<Matrix>)> {
    ensure!(!projected.is_empty(), Validation, "fusion needs at least one modality");
    let n = projected[0].rows();
    ensure!(
        projected.iter().all(|m| m.rows() == n),
        Validation,
        "modality matrices are not aligned on samples"
    );
    if kind == FusionKind::Concat {
        let parts: Vec<&Matrix> = projected.iter().collect();
        return Ok((Matrix::hstack(&parts)?, None));
    }
    let p = projected[0].cols();
    ensure!(projected.iter().all(|m| m.cols() == p), Validation, "projected modalities must share one width");
    let mut fused = projected[0].clone();
    match kind {
        FusionKind::SumPool => {
            for m in &projected[1..] {
                crate::matrix::axpy(1.0, m.as_slice(), fused.as_mut_slice());
            }
            Ok((fused, None))
        }
        FusionKind::MaxPool => {
            for m in &projected[1..] {
                for (f, &v) in fused.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *f = f.max(v);
                }
            }
            Ok((fused, None))
        }
        FusionKind::Attention => {
            let gate = gate.ok_or_else(|| crate::Error::Validation("attention fusion needs gate parameters".into()))?;
            let (alpha, _) = attention_weights(gate, projected);
            let mut fused = Matrix::zeros(n, p);
            for (i, h) in projected.iter().enumerate() {
                for s in 0..n {
                    let a = alpha.get(s, i);
                    crate::matrix::axpy(a, h.row(s), fused.row_mut(s));
                }
            }
            Ok((fused, Some(alpha)))
        }
        FusionKind::Concat => unreachable!(),
    }
}

/// Softmax gate weights and the `tanh(V_i h_i)` activations per modality.
fn attention_weights(gate: &AttentionGate, projected: &[Matrix]) -> (Matrix, Vec<Matrix>) {
    let n = projected[0].rows();
    let m = projected.len();
    let zero_bias = vec![0.0; gate.dim];
    let acts: Vec<Matrix> = projected
        .iter()
        .zip(&gate.v)
        .map(|(h, v)| {
            let mut a = affine(h, v, &zero_bias);
            a.as_mut_slice().iter_mut().for_each(|x| *x = x.tanh());
            a
        })
        .collect();
    let mut alpha = Matrix::zeros(n, m);
    for s in 0..n {
        let scores: Vec<f64> = acts.iter().map(|a| dot(&gate.u, a.row(s))).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|g| (g - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (i, e) in exps.iter().enumerate() {
            alpha.set(s, i, e / total);
        }
    }
    (alpha, acts)
}

struct FusionCache {
    projected: Vec<Matrix>,
    alpha: Option<Matrix>,
    acts: Vec<Matrix>,
    head: MlpCache,
}

impl FusionModel {
    pub fn new(
        kind: FusionKind,
        input_dims: &[usize],
        projection_dim: Option<usize>,
        hidden: &[usize],
        dropout: &[f64],
        num_tags: usize,
        seed: u64,
    ) -> Result<Self> {
        ensure!(!input_dims.is_empty(), Validation, "fusion needs at least one modality");
        ensure!(input_dims.iter().all(|&d| d >= 1), Validation, "modality widths must be positive");
        let p = projection_dim.unwrap_or_else(|| default_projection_dim(input_dims));
        ensure!(p >= 1, Validation, "projection dimension must be positive");
        let mut rng = seed::rng(derive_seed(seed, kind.name(), 0));
        let projections = if kind == FusionKind::Concat {
            Vec::new()
        } else {
            input_dims
                .iter()
                .map(|&d| Projection {
                    in_dim: d,
                    out_dim: p,
                    weights: glorot(p, d, &mut rng),
                    bias: vec![0.0; p],
                })
                .collect()
        };
        let attention = (kind == FusionKind::Attention).then(|| AttentionGate {
            dim: p,
            v: input_dims.iter().map(|_| glorot(p, p, &mut rng)).collect(),
            u: glorot(p, 1, &mut rng),
        });
        let head_in = if kind == FusionKind::Concat { input_dims.iter().sum() } else { p };
        let head = MlpModel::new(head_in, hidden, num_tags, dropout, derive_seed(seed, kind.name(), 1))?;
        Ok(FusionModel {
            kind,
            input_dims: input_dims.to_vec(),
            projection_dim: p,
            projections,
            attention,
            head,
        })
    }

    fn check_inputs(&self, inputs: &[Matrix]) -> Result<()> {
        ensure!(
            inputs.len() == self.input_dims.len(),
            Validation,
            "{} modality inputs for a model over {}",
            inputs.len(),
            self.input_dims.len()
        );
        for (i, (m, &d)) in inputs.iter().zip(&self.input_dims).enumerate() {
            ensure!(m.cols() == d, Validation, "modality {i} has {} features, expected {d}", m.cols());
        }
        Ok(())
    }

    fn project(&self, inputs: &[Matrix]) -> Vec<Matrix> {
        if self.kind == FusionKind::Concat {
            return inputs.to_vec();
        }
        inputs
            .iter()
            .zip(&self.projections)
            .map(|(x, pr)| affine(x, &pr.weights, &pr.bias))
            .collect()
    }

    /// Fused representation fed to the classifier head.
    pub fn fuse(&self, inputs: &[Matrix]) -> Result<Matrix> {
        self.check_inputs(inputs)?;
        Ok(fuse_projected(self.kind, &self.project(inputs), self.attention.as_ref())?.0)
    }

    pub fn gate_weights(&self, inputs: &[Matrix]) -> Result<Option<Matrix>> {
        self.check_inputs(inputs)?;
        Ok(fuse_projected(self.kind, &self.project(inputs), self.attention.as_ref())?.1)
    }

    fn forward(&self, inputs: &[Matrix], rng: Option<&mut ChaCha8Rng>) -> FusionCache {
        let projected = self.project(inputs);
        let (fused, alpha) = fuse_projected(self.kind, &projected, self.attention.as_ref()).expect("inputs validated");
        let acts = match &self.attention {
            Some(g) => attention_weights(g, &projected).1,
            None => Vec::new(),
        };
        let mode = if rng.is_some() { Mode::Train } else { Mode::Eval };
        let head = self.head.forward_cache(&fused, mode, rng);
        FusionCache {
            projected,
            alpha,
            acts,
            head,
        }
    }

    pub fn predict_proba(&self, inputs: &[Matrix]) -> Result<Matrix> {
        self.check_inputs(inputs)?;
        let mut z = self.forward(inputs, None).head.logits;
        z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(z)
    }
}

impl Differentiable for FusionModel {
    type Input = Vec<Matrix>;

    fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.projections.len() {
            names.push(format!("proj{i}.weights"));
            names.push(format!("proj{i}.bias"));
        }
        if let Some(g) = &self.attention {
            names.extend((0..g.v.len()).map(|i| format!("gate{i}.v")));
            names.push("gate.u".into());
        }
        names.extend(self.head.block_names().into_iter().map(|n| format!("head.{n}")));
        names
    }

    fn blocks(&self) -> Vec<&[f64]> {
        let mut b: Vec<&[f64]> = self.projections.iter().flat_map(|p| [&p.weights[..], &p.bias[..]]).collect();
        if let Some(g) = &self.attention {
            b.extend(g.v.iter().map(|v| &v[..]));
            b.push(&g.u);
        }
        b.extend(self.head.blocks());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b: Vec<&mut [f64]> = self
            .projections
            .iter_mut()
            .flat_map(|p| [&mut p.weights[..], &mut p.bias[..]])
            .collect();
        if let Some(g) = &mut self.attention {
            b.extend(g.v.iter_mut().map(|v| &mut v[..]));
            b.push(&mut g.u);
        }
        b.extend(self.head.blocks_mut());
        b
    }

    fn penalized(&self) -> Vec<bool> {
        let mut p: Vec<bool> = self.projections.iter().flat_map(|_| [true, false]).collect();
        if let Some(g) = &self.attention {
            p.extend(std::iter::repeat_n(true, g.v.len() + 1));
        }
        p.extend(self.head.penalized());
        p
    }

    fn loss_grad(&self, x: &Vec<Matrix>, y: &Matrix, rng: Option<&mut ChaCha8Rng>) -> (f64, Vec<Vec<f64>>) {
        let cache = self.forward(x, rng);
        let (loss, dz) = bce_with_logits(&cache.head.logits, y);
        let (head_grads, dfused) = self.head.backward(&cache.head, dz);
        let n = dfused.rows();
        let m = x.len();

        let mut grads: Vec<Vec<f64>> = Vec::new();
        if self.kind != FusionKind::Concat {
            let p = self.projection_dim;
            let mut dh: Vec<Matrix> = (0..m).map(|_| Matrix::zeros(n, p)).collect();
            let mut gate_grads: Option<(Vec<Vec<f64>>, Vec<f64>)> = None;
            match self.kind {
                FusionKind::SumPool => {
                    for d in &mut dh {
                        d.as_mut_slice().copy_from_slice(dfused.as_slice());
                    }
                }
                FusionKind::MaxPool => {
                    for s in 0..n {
                        for j in 0..p {
                            let mut best = 0;
                            for i in 1..m {
                                if cache.projected[i].get(s, j) > cache.projected[best].get(s, j) {
                                    best = i;
                                }
                            }
                            dh[best].set(s, j, dfused.get(s, j));
                        }
                    }
                }
                FusionKind::Attention => {
                    let gate = self.attention.as_ref().expect("attention model has a gate");
                    let alpha = cache.alpha.as_ref().expect("attention cache has weights");
                    let mut dv: Vec<Vec<f64>> = gate.v.iter().map(|v| vec![0.0; v.len()]).collect();
                    let mut du = vec![0.0; gate.u.len()];
                    let a_dim = gate.dim;
                    for s in 0..n {
                        let ds = dfused.row(s);
                        let d_alpha: Vec<f64> = (0..m).map(|i| dot(ds, cache.projected[i].row(s))).collect();
                        let mean: f64 = (0..m).map(|i| alpha.get(s, i) * d_alpha[i]).sum();
                        for i in 0..m {
                            let ai = alpha.get(s, i);
                            let dg = ai * (d_alpha[i] - mean);
                            let act = cache.acts[i].row(s);
                            let h = cache.projected[i].row(s);
                            let dh_row = dh[i].row_mut(s);
                            crate::matrix::axpy(ai, ds, dh_row);
                            crate::matrix::axpy(dg, act, &mut du);
                            for r in 0..a_dim {
                                // d g / d (V h)_r = u_r (1 − tanh²)
                                let c = dg * gate.u[r] * (1.0 - act[r] * act[r]);
                                if c == 0.0 {
                                    continue;
                                }
                                let vrow = &gate.v[i][r * p..(r + 1) * p];
                                crate::matrix::axpy(c, vrow, dh_row);
                                crate::matrix::axpy(c, h, &mut dv[i][r * p..(r + 1) * p]);
                            }
                        }
                    }
                    gate_grads = Some((dv, du));
                }
                FusionKind::Concat => unreachable!(),
            }
            for ((xi, pr), d) in x.iter().zip(&self.projections).zip(&dh) {
                let mut gw = vec![0.0; pr.weights.len()];
                let mut gb = vec![0.0; pr.bias.len()];
                accumulate_affine_grad(xi, d, &mut gw, &mut gb);
                grads.push(gw);
                grads.push(gb);
            }
            if let Some((dv, du)) = gate_grads {
                grads.extend(dv);
                grads.push(du);
            }
        }
        grads.extend(head_grads);
        (loss, grads)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: Vec<f64>,
    #[serde(default)]
    pub projection_dim: Option<usize>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_hidden() -> Vec<usize> {
    vec![512, 256]
}

fn default_dropout() -> Vec<f64> {
    vec![0.3]
}

impl Default for FusionSpec {
    fn default() -> Self {
        FusionSpec {
            hidden: default_hidden(),
            dropout: default_dropout(),
            projection_dim: None,
            train: TrainConfig::default(),
        }
    }
}

pub fn train_fusion(
    kind: FusionKind,
    inputs: &[Matrix],
    y: &Matrix,
    spec: &FusionSpec,
    seed: u64,
) -> Result<FusionModel> {
    let dims: Vec<usize> = inputs.iter().map(Matrix::cols).collect();
    let mut model = FusionModel::new(kind, &dims, spec.projection_dim, &spec.hidden, &spec.dropout, y.cols(), seed)?;
    model.check_inputs(inputs)?;
    let cfg = spec.train.with_seed(derive_seed(seed, kind.name(), 2));
    fit(&mut model, &inputs.to_vec(), y, &cfg)?;
    model.head.provenance = Provenance::of(seed, &(kind, spec));
    Ok(model)
}

fn modality_inputs(dataset: &Dataset, modalities: &[String]) -> Result<Vec<Matrix>> {
    modalities
        .iter()
        .map(|m| dataset.modality(m).map(|f| f.values.clone()))
        .collect()
}

/// Trains one fusion baseline on `train` (labeled rows only) and scores it on
/// the labeled rows of `test`.
pub fn run_fusion_experiment(
    train: &Dataset,
    test: &Dataset,
    modalities: &[String],
    kind: FusionKind,
    spec: &FusionSpec,
    metrics: &MetricConfig,
    seed: u64,
) -> Result<EvalRow> {
    let train_rows = train.labeled_indices();
    ensure!(!train_rows.is_empty(), Validation, "fusion training split has no labeled samples");
    let train = train.subset(&train_rows);
    let test = test.subset(&test.labeled_indices());
    let model = train_fusion(kind, &modality_inputs(&train, modalities)?, &train.label_matrix(), spec, seed)?;
    let probs = model.predict_proba(&modality_inputs(&test, modalities)?)?;
    evaluate_probs(kind.name(), &probs, &test.targets, metrics, test.vocabulary.categories())
}
