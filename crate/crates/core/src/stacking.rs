//! Two-tier stacking: per-modality base learners trained on k-fold splits
//! produce out-of-fold probability blocks, which are concatenated with
//! normalized side features and fed to a dropout MLP meta-network.

use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureMatrix, MultiLabelTarget};
use crate::error::{ensure, Error, Result};
use crate::learners::{
    load_model, train_linear, train_mlp, write_model, LossKind, MlpModel, Model, TrainConfig,
};
use crate::matrix::Matrix;
use crate::metrics::{top_k_predictions, RankedPrediction};
use crate::seed::{self, derive_seed};
use crate::util::{read_json, write_json};

/// Fold index per sample: a seeded shuffle dealt round-robin into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Samples outside `fold`.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    ensure!(k >= 2, Validation, "fold count must be at least 2, got {k}");
    ensure!(n >= k, Validation, "cannot split {n} samples into {k} folds");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { k, seed, fold_of })
}

/// Like [`assign_folds`] but deals samples grouped by their lowest tag id so
/// every tag is spread across folds.
pub fn assign_folds_stratified(targets: &[MultiLabelTarget], k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut fa = assign_folds(targets.len(), k, seed)?;
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.shuffle(&mut seed::rng(seed));
    order.sort_by_key(|&i| targets[i].positives().first().copied().unwrap_or(usize::MAX));
    for (pos, &i) in order.iter().enumerate() {
        fa.fold_of[i] = pos % k;
    }
    Ok(fa)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    Logistic {
        #[serde(default)]
        train: TrainConfig,
    },
    SquaredHinge {
        #[serde(default)]
        train: TrainConfig,
    },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        dropout: Vec<f64>,
        #[serde(default)]
        train: TrainConfig,
    },
}

impl LearnerSpec {
    pub fn train_config(&self) -> &TrainConfig {
        match self {
            LearnerSpec::Logistic { train } | LearnerSpec::SquaredHinge { train } | LearnerSpec::Mlp { train, .. } => train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LearnerSpec::Mlp { hidden, .. } = self {
            ensure!(!hidden.is_empty(), Validation, "mlp learner needs at least one hidden layer");
        }
        self.train_config().validate()
    }

    /// Trains on `(x, y)` with the spec's config reseeded to `seed`.
    pub fn fit(&self, x: &Matrix, y: &Matrix, seed: u64) -> Result<Model> {
        let cfg = self.train_config().with_seed(seed);
        Ok(match self {
            LearnerSpec::Logistic { .. } => Model::Linear(train_linear(x, y, LossKind::Logistic, &cfg)?),
            LearnerSpec::SquaredHinge { .. } => Model::Linear(train_linear(x, y, LossKind::SquaredHinge, &cfg)?),
            LearnerSpec::Mlp { hidden, dropout, .. } => Model::Mlp(train_mlp(x, y, hidden, dropout, &cfg)?),
        })
    }
}

/// Base learner assignment for one modality. `name` distinguishes several
/// learners on the same modality and defaults to the modality name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub modality: String,
    pub learner: LearnerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl ModalitySpec {
    pub fn new(modality: impl Into<String>, learner: LearnerSpec) -> Self {
        ModalitySpec {
            modality: modality.into(),
            learner,
            name: None,
        }
    }

    pub fn block_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.modality)
    }
}

/// Out-of-fold probabilities of one base learner and its per-fold models.
#[derive(Debug, Clone)]
pub struct OofBlock {
    pub name: String,
    pub modality: String,
    pub learner: LearnerSpec,
    pub probs: Matrix,
    pub fold_models: Vec<Model>,
    pub warnings: Vec<String>,
}

/// For each fold, trains on the labeled samples outside it and predicts the
/// samples inside it. Row `i` therefore never depends on sample `i`.
pub fn oof_meta_features(dataset: &Dataset, spec: &ModalitySpec, folds: &FoldAssignment, seed: u64) -> Result<OofBlock> {
    spec.learner.validate()?;
    let x = &dataset.modality(&spec.modality)?.values;
    ensure!(
        folds.n() == dataset.n(),
        Validation,
        "fold assignment covers {} samples, dataset has {}",
        folds.n(),
        dataset.n()
    );
    let y = dataset.label_matrix();
    let name = spec.block_name().to_string();
    let results: Vec<(Model, Vec<usize>, Matrix, Vec<String>)> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = folds.complement(f).into_iter().filter(|&i| dataset.labeled[i]).collect();
            ensure!(!train.is_empty(), Validation, "fold {f} of {name:?} has no labeled training samples");
            let yt = y.select_rows(&train);
            let warnings: Vec<String> = (0..y.cols())
                .filter(|&t| (0..yt.rows()).all(|r| yt.get(r, t) == 0.0))
                .map(|t| format!("{name}: fold {f} training split has no positives for tag {t}"))
                .collect();
            let model = spec.learner.fit(&x.select_rows(&train), &yt, derive_seed(seed, &name, f as u64))?;
            let held_out = folds.members(f);
            let probs = model.predict_proba(&x.select_rows(&held_out))?;
            Ok((model, held_out, probs, warnings))
        })
        .collect::<Result<_>>()?;
    let mut probs = Matrix::zeros(dataset.n(), y.cols());
    let mut fold_models = Vec::with_capacity(folds.k);
    let mut warnings = Vec::new();
    for (model, held_out, p, w) in results {
        for (r, &i) in held_out.iter().enumerate() {
            probs.row_mut(i).copy_from_slice(p.row(r));
        }
        fold_models.push(model);
        warnings.extend(w);
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(OofBlock {
        name,
        modality: spec.modality.clone(),
        learner: spec.learner.clone(),
        probs,
        fold_models,
        warnings,
    })
}

/// Origin of one meta-feature column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ColumnSource {
    Block { name: String, tag: usize },
    Extra { index: usize },
}

/// Z-score statistics of the side features, fitted on training rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtraStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ExtraStats {
    /// Mean and population standard deviation over `rows`; a zero deviation
    /// is stored as 1 so constant columns map to 0.
    pub fn fit(extra: &Matrix, rows: &[usize]) -> Self {
        let e = extra.cols();
        let count = rows.len().max(1) as f64;
        let mut mean = vec![0.0; e];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(extra.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; e];
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(extra.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        ExtraStats { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, extra: &Matrix) -> Result<Matrix> {
        ensure!(
            extra.cols() == self.dim(),
            Validation,
            "extra features have {} columns, expected {}",
            extra.cols(),
            self.dim()
        );
        let mut out = extra.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaFeatureMatrix {
    pub values: Matrix,
    pub columns: Vec<ColumnSource>,
}

impl MetaFeatureMatrix {
    pub fn width(&self) -> usize {
        self.columns.len()
    }
}

/// Concatenates probability blocks in the given order, then the z-scored
/// side features.
pub fn build_meta_matrix(blocks: &[(&str, &Matrix)], extra: &Matrix, stats: &ExtraStats) -> Result<MetaFeatureMatrix> {
    let n = blocks.first().map_or(extra.rows(), |(_, m)| m.rows());
    let tags = blocks.first().map_or(0, |(_, m)| m.cols());
    for (name, m) in blocks {
        ensure!(
            m.rows() == n && m.cols() == tags,
            Validation,
            "block {name:?} is {}x{}, expected {n}x{tags}",
            m.rows(),
            m.cols()
        );
    }
    ensure!(extra.rows() == n, Validation, "extra features have {} rows, blocks have {n}", extra.rows());
    let normalized = stats.apply(extra)?;
    let mut parts: Vec<&Matrix> = blocks.iter().map(|(_, m)| *m).collect();
    parts.push(&normalized);
    let values = Matrix::hstack(&parts)?;
    let mut columns = Vec::with_capacity(values.cols());
    for (name, m) in blocks {
        columns.extend((0..m.cols()).map(|tag| ColumnSource::Block { name: name.to_string(), tag }));
    }
    columns.extend((0..normalized.cols()).map(|index| ColumnSource::Extra { index }));
    Ok(MetaFeatureMatrix { values, columns })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSpec {
    #[serde(default = "default_meta_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_meta_dropout")]
    pub dropout: Vec<f64>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_meta_hidden() -> Vec<usize> {
    vec![512, 256]
}

fn default_meta_dropout() -> Vec<f64> {
    vec![0.3]
}

impl Default for MetaSpec {
    fn default() -> Self {
        MetaSpec {
            hidden: default_meta_hidden(),
            dropout: default_meta_dropout(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackingConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub meta: MetaSpec,
    /// Feed the side features to the meta-network.
    #[serde(default = "default_true")]
    pub use_extra: bool,
    #[serde(default)]
    pub stratified: bool,
}

fn default_folds() -> usize {
    5
}

fn default_true() -> bool {
    true
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            folds: default_folds(),
            seed: 0,
            meta: MetaSpec::default(),
            use_extra: true,
            stratified: false,
        }
    }
}

/// Retained per-fold models of one base learner.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockModels {
    pub name: String,
    pub modality: String,
    pub learner: LearnerSpec,
    pub fold_models: Vec<Model>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub folds: FoldAssignment,
    pub blocks: Vec<BlockModels>,
    pub meta: MlpModel,
    pub extra_stats: ExtraStats,
    pub columns: Vec<ColumnSource>,
    pub num_tags: usize,
    pub config_hash: String,
}

/// Everything produced while fitting a stacked model.
#[derive(Debug, Clone)]
pub struct StackedRun {
    pub model: StackedModel,
    pub oof: Vec<OofBlock>,
    pub meta_features: MetaFeatureMatrix,
}

pub fn train_stacked(dataset: &Dataset, specs: &[ModalitySpec], cfg: &StackingConfig) -> Result<StackedModel> {
    Ok(train_stacked_run(dataset, specs, cfg)?.model)
}

pub fn train_stacked_run(dataset: &Dataset, specs: &[ModalitySpec], cfg: &StackingConfig) -> Result<StackedRun> {
    ensure!(!specs.is_empty(), Validation, "stacking needs at least one modality");
    let mut names = std::collections::HashSet::new();
    for s in specs {
        ensure!(names.insert(s.block_name()), Validation, "duplicate block name {:?}", s.block_name());
        dataset.modality(&s.modality)?;
    }
    let labeled = dataset.labeled_indices();
    ensure!(!labeled.is_empty(), Validation, "stacking needs labeled samples");
    let folds = if cfg.stratified {
        assign_folds_stratified(&dataset.targets, cfg.folds, cfg.seed)?
    } else {
        assign_folds(dataset.n(), cfg.folds, cfg.seed)?
    };
    let oof: Vec<OofBlock> = specs
        .par_iter()
        .map(|s| oof_meta_features(dataset, s, &folds, cfg.seed))
        .collect::<Result<_>>()?;

    let extra = if cfg.use_extra { dataset.extra.0.clone() } else { Matrix::zeros(dataset.n(), 0) };
    let extra_stats = ExtraStats::fit(&extra, &labeled);
    let block_refs: Vec<(&str, &Matrix)> = oof.iter().map(|b| (b.name.as_str(), &b.probs)).collect();
    let meta_features = build_meta_matrix(&block_refs, &extra, &extra_stats)?;

    let y = dataset.label_matrix().select_rows(&labeled);
    let meta_cfg = cfg.meta.train.with_seed(derive_seed(cfg.seed, "meta", 0));
    let meta = train_mlp(
        &meta_features.values.select_rows(&labeled),
        &y,
        &cfg.meta.hidden,
        &cfg.meta.dropout,
        &meta_cfg,
    )?;
    let config_json = serde_json::to_vec(&(specs, cfg)).expect("config serializes");
    let model = StackedModel {
        folds,
        blocks: oof
            .iter()
            .map(|b| BlockModels {
                name: b.name.clone(),
                modality: b.modality.clone(),
                learner: b.learner.clone(),
                fold_models: b.fold_models.clone(),
            })
            .collect(),
        meta,
        extra_stats,
        columns: meta_features.columns.clone(),
        num_tags: dataset.num_tags(),
        config_hash: seed::sha256_hex(&config_json),
    };
    Ok(StackedRun {
        model,
        oof,
        meta_features,
    })
}

impl StackedModel {
    /// Test-time meta-features: each block averages its fold models.
    pub fn meta_features(&self, features: &[FeatureMatrix], extra: &Matrix) -> Result<MetaFeatureMatrix> {
        let mut averaged = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let x = &features
                .iter()
                .find(|f| f.modality == b.modality)
                .ok_or_else(|| Error::Validation(format!("missing modality {:?}", b.modality)))?
                .values;
            let expected = b.fold_models[0].input_dim();
            ensure!(
                x.cols() == expected,
                Validation,
                "modality {:?} has {} features, model expects {expected}",
                b.modality,
                x.cols()
            );
            let mut sum = Matrix::zeros(x.rows(), self.num_tags);
            for m in &b.fold_models {
                let p = m.predict_proba(x)?;
                crate::matrix::axpy(1.0, p.as_slice(), sum.as_mut_slice());
            }
            let k = b.fold_models.len() as f64;
            sum.as_mut_slice().iter_mut().for_each(|v| *v /= k);
            averaged.push((b.name.as_str(), sum));
        }
        let n = averaged.first().map_or(extra.rows(), |(_, m)| m.rows());
        let extra = if self.extra_stats.dim() == 0 { Matrix::zeros(n, 0) } else { extra.clone() };
        let refs: Vec<(&str, &Matrix)> = averaged.iter().map(|(n, m)| (*n, m)).collect();
        build_meta_matrix(&refs, &extra, &self.extra_stats)
    }

    pub fn predict_proba(&self, features: &[FeatureMatrix], extra: &Matrix) -> Result<Matrix> {
        let meta = self.meta_features(features, extra)?;
        self.meta.predict_proba(&meta.values)
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Matrix> {
        self.predict_proba(dataset.modalities(), &dataset.extra.0)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let mut files = Vec::with_capacity(block.fold_models.len());
            for (f, m) in block.fold_models.iter().enumerate() {
                let file = format!("block{b}.fold{f}.model");
                write_model(&dir.join(&file), m)?;
                files.push(file);
            }
            blocks.push(BlockEntry {
                name: block.name.clone(),
                modality: block.modality.clone(),
                learner: block.learner.clone(),
                models: files,
            });
        }
        write_model(&dir.join("meta.model"), &Model::Mlp(self.meta.clone()))?;
        let manifest = BundleManifest {
            artifact_version: crate::ARTIFACT_VERSION.to_string(),
            num_tags: self.num_tags,
            folds: self.folds.clone(),
            blocks,
            meta: "meta.model".into(),
            extra_stats: self.extra_stats.clone(),
            columns: self.columns.clone(),
            config_hash: self.config_hash.clone(),
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = read_json(&dir.join("manifest.json"))?;
        let mut blocks = Vec::with_capacity(manifest.blocks.len());
        for b in manifest.blocks {
            let fold_models = b
                .models
                .iter()
                .map(|f| load_model(&dir.join(f)))
                .collect::<Result<Vec<_>>>()?;
            ensure!(!fold_models.is_empty(), Format, "block {:?} lists no fold models", b.name);
            blocks.push(BlockModels {
                name: b.name,
                modality: b.modality,
                learner: b.learner,
                fold_models,
            });
        }
        let meta = match load_model(&dir.join(&manifest.meta))? {
            Model::Mlp(m) => m,
            Model::Linear(_) => return Err(Error::Format("meta model must be an MLP".into())),
        };
        ensure!(
            meta.input_dim() == manifest.columns.len(),
            Format,
            "meta model expects {} inputs but the column map has {}",
            meta.input_dim(),
            manifest.columns.len()
        );
        Ok(StackedModel {
            folds: manifest.folds,
            blocks,
            meta,
            extra_stats: manifest.extra_stats,
            columns: manifest.columns,
            num_tags: manifest.num_tags,
            config_hash: manifest.config_hash,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    name: String,
    modality: String,
    learner: LearnerSpec,
    models: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleManifest {
    artifact_version: String,
    num_tags: usize,
    folds: FoldAssignment,
    blocks: Vec<BlockEntry>,
    meta: String,
    extra_stats: ExtraStats,
    columns: Vec<ColumnSource>,
    config_hash: String,
}

/// Ranked per-sample predictions; ties broken by ascending tag id.
pub fn predict_stacked(
    model: &StackedModel,
    features: &[FeatureMatrix],
    extra: &Matrix,
    top_k: usize,
) -> Result<Vec<RankedPrediction>> {
    Ok(top_k_predictions(&model.predict_proba(features, extra)?, top_k))
}
