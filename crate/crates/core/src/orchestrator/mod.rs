//! Experiment commands: each validates its inputs, runs, and writes a
//! deterministic JSON report plus a CSV summary into the output directory.

mod config;

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DatasetSource, FusionSettings, LadderStep, RunConfig, CONFIG_VERSION};

use crate::dataset::{assemble_dataset, synth_generate_raw, write_dataset, Dataset, DatasetManifest, SynthConfig};
use crate::error::{ensure, Error, Result};
use crate::fusion::run_fusion_experiment;
use crate::metrics::{evaluate_probs, top_k_predictions, EvalRow, MetricConfig, RankedPrediction};
use crate::seed::{derive_seed, rng, sha256_hex};
use crate::stacking::{train_stacked, train_stacked_run, ModalitySpec, StackedModel};
use crate::util::{write_atomic, write_json};
use crate::ARTIFACT_VERSION;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "VIDTAG_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub holdout_fraction: f64,
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_secs: f64,
}

/// Result file of one command. Everything except `timing` is a pure function
/// of the config and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub artifact_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
    pub rows: Vec<EvalRow>,
    pub timing: Timing,
}

impl EvalReport {
    fn new<C: Serialize>(command: &str, config: &C, seed: u64, split: Option<SplitInfo>, rows: Vec<EvalRow>, start: Instant) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        EvalReport {
            artifact_version: ARTIFACT_VERSION.to_string(),
            command: command.to_string(),
            config_hash: config_hash(&config),
            seed,
            config,
            split,
            rows,
            timing: Timing {
                wall_clock_secs: start.elapsed().as_secs_f64(),
            },
        }
    }

    pub fn row(&self, name: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,accuracy,gap\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", csv_field(&r.name), r.accuracy, r.gap));
        }
        out
    }

    /// Writes `<command>.json` and `<command>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for r in &self.rows {
            ensure!(
                r.accuracy.is_finite() && r.gap.is_finite(),
                Validation,
                "row {:?} has non-finite numbers; report not written",
                r.name
            );
        }
        let json = dir.join(format!("{}.json", self.command));
        write_json(&json, self)?;
        write_atomic(&dir.join(format!("{}.csv", self.command)), self.to_csv().as_bytes())?;
        Ok(json)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(serde_json::to_string(config).expect("value serializes").as_bytes())
}

/// Output directory after applying the environment override.
pub fn resolve_out_dir(configured: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.to_path_buf(),
    }
}

/// Seeded train/test split of sample indices; both sides are non-empty and
/// sorted.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    ensure!(fraction > 0.0 && fraction < 1.0, Validation, "holdout fraction must lie in (0,1)");
    ensure!(n >= 2, Validation, "need at least 2 samples for a holdout split");
    let test_n = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(derive_seed(seed, "holdout", 0)));
    let mut test = perm[..test_n].to_vec();
    let mut train = perm[test_n..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

struct Split {
    train: Dataset,
    test: Dataset,
    info: SplitInfo,
}

fn split_dataset(cfg: &RunConfig, dataset: &Dataset) -> Result<Split> {
    let (train_idx, test_idx) = holdout_split(dataset.n(), cfg.holdout_fraction, cfg.seed)?;
    let train = dataset.subset(&train_idx);
    let test = dataset.subset(&test_idx);
    let test = test.subset(&test.labeled_indices());
    ensure!(test.n() > 0, Validation, "holdout split has no labeled test samples");
    ensure!(
        train.labeled.iter().any(|&l| l),
        Validation,
        "holdout split has no labeled training samples"
    );
    let info = SplitInfo {
        holdout_fraction: cfg.holdout_fraction,
        train: train.n(),
        test: test.n(),
    };
    Ok(Split { train, test, info })
}

fn evaluate_stacked(name: &str, model: &StackedModel, test: &Dataset, metric: &MetricConfig) -> Result<EvalRow> {
    let probs = model.predict_dataset(test)?;
    evaluate_probs(name, &probs, &test.targets, metric, test.vocabulary.categories())
}

fn select_specs(specs: &[ModalitySpec], blocks: &[String]) -> Result<Vec<ModalitySpec>> {
    blocks
        .iter()
        .map(|b| {
            specs
                .iter()
                .find(|s| s.block_name() == b)
                .cloned()
                .ok_or_else(|| Error::Validation(format!("ladder references unknown block {b:?}")))
        })
        .collect()
}

/// Default ladder: cumulative prefixes of the block order, then `+extra`.
pub fn default_ladder(specs: &[ModalitySpec], has_extra: bool) -> Vec<LadderStep> {
    let names: Vec<String> = specs.iter().map(|s| s.block_name().to_string()).collect();
    let mut ladder: Vec<LadderStep> = (1..=names.len())
        .map(|k| LadderStep {
            name: None,
            blocks: names[..k].to_vec(),
            extra: false,
        })
        .collect();
    if has_extra {
        ladder.push(LadderStep {
            name: None,
            blocks: names,
            extra: true,
        });
    }
    ladder
}

/// Generates a synthetic dataset and writes it with a manifest into `out`.
pub fn cmd_synth(config: &SynthConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let raw = synth_generate_raw(config, seed)?;
    write_dataset(&raw, out)
}

/// One row per base learner, each trained alone on the training split.
pub fn cmd_compare_modalities(cfg: &RunConfig) -> Result<EvalReport> {
    let start = Instant::now();
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let specs = cfg.resolve_specs(&dataset)?;
    let split = split_dataset(cfg, &dataset)?;
    let train = split.train.subset(&split.train.labeled_indices());
    let y = train.label_matrix();
    let rows = specs
        .par_iter()
        .map(|s| {
            let x = &train.modality(&s.modality)?.values;
            let model = s.learner.fit(x, &y, derive_seed(cfg.seed, s.block_name(), 1000))?;
            let probs = model.predict_proba(&split.test.modality(&s.modality)?.values)?;
            evaluate_probs(s.block_name(), &probs, &split.test.targets, &cfg.metric, split.test.vocabulary.categories())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new("compare-modalities", cfg, cfg.seed, Some(split.info), rows, start))
}

/// One stacked model per ladder step, all on the same split.
pub fn cmd_compare_combinations(cfg: &RunConfig) -> Result<EvalReport> {
    let start = Instant::now();
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let specs = cfg.resolve_specs(&dataset)?;
    let ladder = if cfg.ladder.is_empty() {
        default_ladder(&specs, cfg.use_extra && dataset.extra.dim() > 0)
    } else {
        cfg.ladder.clone()
    };
    let steps: Vec<(String, Vec<ModalitySpec>, bool)> = ladder
        .iter()
        .map(|s| Ok((s.display_name(), select_specs(&specs, &s.blocks)?, s.extra)))
        .collect::<Result<_>>()?;
    let split = split_dataset(cfg, &dataset)?;
    let mut rows = Vec::with_capacity(steps.len());
    for (name, step_specs, extra) in &steps {
        log::info!("ladder step {name}");
        let model = train_stacked(&split.train, step_specs, &cfg.stacking(*extra))?;
        rows.push(evaluate_stacked(name, &model, &split.test, &cfg.metric)?);
    }
    Ok(EvalReport::new("compare-combinations", cfg, cfg.seed, Some(split.info), rows, start))
}

/// The stacked ensemble against each late-fusion baseline. All rows use the
/// modality features only, without side features.
pub fn cmd_compare_fusion(cfg: &RunConfig) -> Result<EvalReport> {
    let start = Instant::now();
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let specs = cfg.resolve_specs(&dataset)?;
    let mut modalities: Vec<String> = Vec::new();
    for s in &specs {
        if !modalities.contains(&s.modality) {
            modalities.push(s.modality.clone());
        }
    }
    let split = split_dataset(cfg, &dataset)?;
    log::info!("training stacked ensemble");
    let stacked = train_stacked(&split.train, &specs, &cfg.stacking(false))?;
    let mut rows = vec![evaluate_stacked("stacked", &stacked, &split.test, &cfg.metric)?];
    for &kind in &cfg.fusion.strategies {
        log::info!("training {} baseline", kind.name());
        rows.push(run_fusion_experiment(
            &split.train,
            &split.test,
            &modalities,
            kind,
            &cfg.fusion.model,
            &cfg.metric,
            derive_seed(cfg.seed, "fusion", 0),
        )?);
    }
    Ok(EvalReport::new("compare-fusion", cfg, cfg.seed, Some(split.info), rows, start))
}

/// Fits a stacked model on every labeled sample and saves the bundle to
/// `model_dir`. The report holds the out-of-fold score of each base learner
/// and of the meta-features' source blocks.
pub fn cmd_train(cfg: &RunConfig, model_dir: &Path) -> Result<EvalReport> {
    let start = Instant::now();
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let specs = cfg.resolve_specs(&dataset)?;
    let run = train_stacked_run(&dataset, &specs, &cfg.stacking(cfg.use_extra))?;
    run.model.save(model_dir)?;
    let labeled = dataset.labeled_indices();
    let targets: Vec<_> = labeled.iter().map(|&i| dataset.targets[i].clone()).collect();
    let rows = run
        .oof
        .iter()
        .map(|b| {
            evaluate_probs(
                &format!("oof:{}", b.name),
                &b.probs.select_rows(&labeled),
                &targets,
                &cfg.metric,
                dataset.vocabulary.categories(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new("train", cfg, cfg.seed, None, rows, start))
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub sample_id: String,
    pub predictions: Vec<(usize, f64)>,
}

/// Ranked top-k predictions of a saved bundle for every manifest sample.
pub fn predict_manifest(model_dir: &Path, manifest: &Path, top_k: usize) -> Result<Vec<PredictionLine>> {
    ensure!(top_k >= 1, Validation, "top_k must be at least 1");
    let model = StackedModel::load(model_dir)?;
    let dataset = assemble_dataset(&DatasetManifest::load(manifest)?)?;
    let probs = model.predict_dataset(&dataset)?;
    Ok(dataset
        .sample_ids
        .iter()
        .zip(top_k_predictions(&probs, top_k))
        .map(|(id, p)| PredictionLine {
            sample_id: id.clone(),
            predictions: p.entries().to_vec(),
        })
        .collect())
}

/// Writes predictions as JSON lines to `out`.
pub fn cmd_predict(model_dir: &Path, manifest: &Path, top_k: usize, out: &Path) -> Result<usize> {
    let lines = predict_manifest(model_dir, manifest, top_k)?;
    let mut buf = String::new();
    for l in &lines {
        buf.push_str(&serde_json::to_string(l).expect("prediction serializes"));
        buf.push('\n');
    }
    write_atomic(out, buf.as_bytes())?;
    Ok(lines.len())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(parsed);
    }
    Ok(out)
}

/// Scores prediction lines against the manifest's labels. Only labeled
/// samples that appear in the predictions are scored.
pub fn score_predictions(lines: &[PredictionLine], manifest: &DatasetManifest, metric: &MetricConfig) -> Result<EvalRow> {
    let vocab = manifest.vocabulary()?;
    let labels = manifest.targets()?;
    let index: HashMap<&str, usize> = manifest.sample_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let unlabeled: std::collections::HashSet<&str> = manifest.unlabeled.iter().map(String::as_str).collect();
    let mut seen = std::collections::HashSet::new();
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for l in lines {
        let &i = index
            .get(l.sample_id.as_str())
            .ok_or_else(|| Error::Validation(format!("unknown sample id {:?} in predictions", l.sample_id)))?;
        ensure!(seen.insert(i), Validation, "duplicate predictions for sample {:?}", l.sample_id);
        if let Some(&(bad, _)) = l.predictions.iter().find(|(t, _)| *t >= vocab.len()) {
            return Err(Error::Validation(format!("tag {bad} outside the vocabulary for {:?}", l.sample_id)));
        }
        if unlabeled.contains(l.sample_id.as_str()) || labels[i].is_empty() {
            continue;
        }
        let mut entries = l.predictions.clone();
        entries.truncate(metric.top_k);
        preds.push(RankedPrediction::new(entries)?);
        targets.push(labels[i].clone());
    }
    ensure!(!targets.is_empty(), Validation, "no labeled samples to score");
    // Thresholded accuracy needs a dense matrix; tags absent from a list
    // count as probability 0.
    let mut probs = crate::Matrix::zeros(preds.len(), vocab.len());
    for (r, p) in preds.iter().enumerate() {
        for &(t, c) in p.entries() {
            probs.set(r, t, c);
        }
    }
    let accuracy = crate::metrics::accuracy(metric.accuracy, &probs, &targets, metric.threshold);
    let gap = crate::metrics::gap(&preds, &targets, &metric.gap_config(vocab.categories()))?;
    Ok(EvalRow {
        name: "score".into(),
        accuracy,
        gap,
    })
}

pub fn cmd_score(predictions: &Path, manifest: &Path, metric: &MetricConfig) -> Result<EvalReport> {
    let start = Instant::now();
    let manifest = DatasetManifest::load(manifest)?;
    let lines = read_predictions(predictions)?;
    let row = score_predictions(&lines, &manifest, metric)?;
    Ok(EvalReport::new("score", metric, 0, None, vec![row], start))
}
