//! Global Average Precision over pooled top-k predictions, an independent
//! brute-force oracle for it, and multi-label accuracy measures.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::MultiLabelTarget;
use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;

/// One sample's `(tag_id, confidence)` list, sorted by descending confidence
/// with ties broken by ascending tag id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedPrediction {
    entries: Vec<(usize, f64)>,
}

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

impl RankedPrediction {
    /// Validates an already ranked list.
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self> {
        ensure!(
            entries.iter().all(|(_, c)| c.is_finite()),
            Validation,
            "prediction confidences must be finite"
        );
        ensure!(
            entries.windows(2).all(|w| rank_order(&w[0], &w[1]) == Ordering::Less),
            Validation,
            "predictions must be sorted by descending confidence (ties by tag id) without duplicates"
        );
        let mut tags: Vec<usize> = entries.iter().map(|e| e.0).collect();
        tags.sort_unstable();
        ensure!(tags.windows(2).all(|w| w[0] != w[1]), Validation, "duplicate tag id in one prediction list");
        Ok(RankedPrediction { entries })
    }

    /// Ranks per-tag scores and keeps the best `top_k`.
    pub fn from_scores(scores: &[f64], top_k: usize) -> Self {
        let mut entries: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        entries.sort_by(rank_order);
        entries.truncate(top_k);
        RankedPrediction { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn top_k_predictions(probs: &Matrix, top_k: usize) -> Vec<RankedPrediction> {
    assert!(top_k >= 1, "top_k must be at least 1");
    probs.iter_rows().map(|row| RankedPrediction::from_scores(row, top_k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryMode {
    #[default]
    Pooled,
    PerCategorySum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub category_mode: CategoryMode,
    /// Category of each tag, required for `per_category_sum`.
    #[serde(skip)]
    pub categories: Option<Vec<usize>>,
}

fn default_top_k() -> usize {
    20
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            top_k: default_top_k(),
            category_mode: CategoryMode::Pooled,
            categories: None,
        }
    }
}

impl GapConfig {
    pub fn with_top_k(top_k: usize) -> Self {
        GapConfig { top_k, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.top_k >= 1, Validation, "top_k must be at least 1");
        if self.category_mode == CategoryMode::PerCategorySum {
            ensure!(
                self.categories.is_some(),
                Validation,
                "per_category_sum needs a vocabulary that declares tag categories"
            );
        }
        Ok(())
    }

    fn scopes(&self) -> Vec<Option<usize>> {
        match (self.category_mode, &self.categories) {
            (CategoryMode::PerCategorySum, Some(c)) => {
                let count = c.iter().copied().max().map_or(0, |m| m + 1);
                (0..count).map(Some).collect()
            }
            _ => vec![None],
        }
    }

    fn in_scope(&self, scope: Option<usize>, tag: usize) -> bool {
        match (scope, &self.categories) {
            (None, _) => true,
            (Some(c), Some(cats)) => cats.get(tag) == Some(&c),
            (Some(_), None) => false,
        }
    }
}

fn check_inputs(preds: &[RankedPrediction], targets: &[MultiLabelTarget], cfg: &GapConfig) -> Result<()> {
    cfg.validate()?;
    ensure!(
        preds.len() == targets.len(),
        Validation,
        "{} prediction lists for {} targets",
        preds.len(),
        targets.len()
    );
    Ok(())
}

/// Global Average Precision: `Σ_j p(j)·Δr(j)` over all retained predictions
/// pooled across samples and sorted by confidence. Ties between samples are
/// broken by sample order, then tag id. In `per_category_sum` mode the value
/// is computed per tag category and summed; categories without positives are
/// skipped.
pub fn gap(preds: &[RankedPrediction], targets: &[MultiLabelTarget], cfg: &GapConfig) -> Result<f64> {
    check_inputs(preds, targets, cfg)?;
    let mut total = 0.0;
    let mut any_scope = false;
    for scope in cfg.scopes() {
        let positives: usize = targets
            .iter()
            .map(|t| t.positives().iter().filter(|&&tag| cfg.in_scope(scope, tag)).count())
            .sum();
        if positives == 0 {
            continue;
        }
        any_scope = true;
        let mut pooled: Vec<(f64, usize, usize, bool)> = Vec::new();
        for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
            for &(tag, conf) in p.entries().iter().take(cfg.top_k) {
                if cfg.in_scope(scope, tag) {
                    pooled.push((conf, i, tag, t.contains(tag)));
                }
            }
        }
        pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let delta_r = 1.0 / positives as f64;
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (j, &(_, _, _, hit)) in pooled.iter().enumerate() {
            if hit {
                hits += 1;
                ap += (hits as f64 / (j + 1) as f64) * delta_r;
            }
        }
        total += ap;
    }
    if !any_scope {
        return Err(Error::UndefinedMetric("GAP is undefined without positive labels".into()));
    }
    Ok(total)
}

/// Recomputes GAP by materializing every point of the precision/recall curve
/// with explicit counters. Shares no code with [`gap`].
pub fn gap_bruteforce_oracle(preds: &[RankedPrediction], targets: &[MultiLabelTarget], cfg: &GapConfig) -> Result<f64> {
    check_inputs(preds, targets, cfg)?;
    let categories: Vec<Option<usize>> = match (cfg.category_mode, &cfg.categories) {
        (CategoryMode::PerCategorySum, Some(c)) => {
            let mut seen: Vec<usize> = c.clone();
            seen.sort_unstable();
            seen.dedup();
            seen.into_iter().map(Some).collect()
        }
        _ => vec![None],
    };
    let belongs = |cat: Option<usize>, tag: usize| match cat {
        None => true,
        Some(c) => cfg.categories.as_ref().is_some_and(|cs| cs[tag] == c),
    };
    let mut sum = 0.0;
    let mut defined = false;
    for cat in categories {
        let mut total_positives = 0usize;
        for t in targets {
            for &tag in t.positives() {
                if belongs(cat, tag) {
                    total_positives += 1;
                }
            }
        }
        if total_positives == 0 {
            continue;
        }
        defined = true;

        // (confidence, sample, tag, correct)
        let mut items: Vec<(f64, usize, usize, bool)> = Vec::new();
        for i in 0..preds.len() {
            for &(tag, conf) in preds[i].entries().iter().take(cfg.top_k) {
                if belongs(cat, tag) {
                    items.push((conf, i, tag, targets[i].positives().contains(&tag)));
                }
            }
        }
        // Selection sort with the same total order stated for GAP.
        let goes_before = |a: &(f64, usize, usize, bool), b: &(f64, usize, usize, bool)| {
            if a.0 != b.0 {
                a.0 > b.0
            } else if a.1 != b.1 {
                a.1 < b.1
            } else {
                a.2 < b.2
            }
        };
        for i in 0..items.len() {
            let mut best = i;
            for j in i + 1..items.len() {
                if goes_before(&items[j], &items[best]) {
                    best = j;
                }
            }
            items.swap(i, best);
        }

        let mut previous_recall = 0.0;
        for cut in 1..=items.len() {
            let correct = items[..cut].iter().filter(|it| it.3).count();
            let precision = correct as f64 / cut as f64;
            let recall = correct as f64 / total_positives as f64;
            sum += precision * (recall - previous_recall);
            previous_recall = recall;
        }
    }
    if !defined {
        return Err(Error::UndefinedMetric("GAP is undefined without positive labels".into()));
    }
    Ok(sum)
}

/// Fraction of `(sample, tag)` cells where `prob ≥ threshold` agrees with
/// target membership.
pub fn hamming_accuracy(probs: &Matrix, targets: &[MultiLabelTarget], threshold: f64) -> f64 {
    assert_eq!(probs.rows(), targets.len(), "probability rows must match targets");
    let cells = probs.rows() * probs.cols();
    if cells == 0 {
        return 1.0;
    }
    let agree: usize = probs
        .iter_rows()
        .zip(targets)
        .map(|(row, t)| {
            row.iter()
                .enumerate()
                .filter(|&(tag, &p)| (p >= threshold) == t.contains(tag))
                .count()
        })
        .sum();
    agree as f64 / cells as f64
}

/// Fraction of samples whose thresholded tag set equals the target exactly.
pub fn subset_accuracy(probs: &Matrix, targets: &[MultiLabelTarget], threshold: f64) -> f64 {
    assert_eq!(probs.rows(), targets.len(), "probability rows must match targets");
    if targets.is_empty() {
        return 1.0;
    }
    let exact = probs
        .iter_rows()
        .zip(targets)
        .filter(|(row, t)| row.iter().enumerate().all(|(tag, &p)| (p >= threshold) == t.contains(tag)))
        .count();
    exact as f64 / targets.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyKind {
    #[default]
    Hamming,
    Subset,
}

pub fn accuracy(kind: AccuracyKind, probs: &Matrix, targets: &[MultiLabelTarget], threshold: f64) -> f64 {
    match kind {
        AccuracyKind::Hamming => hamming_accuracy(probs, targets, threshold),
        AccuracyKind::Subset => subset_accuracy(probs, targets, threshold),
    }
}

/// Metric settings shared by every evaluation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub category_mode: CategoryMode,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub accuracy: AccuracyKind,
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            top_k: default_top_k(),
            category_mode: CategoryMode::Pooled,
            threshold: default_threshold(),
            accuracy: AccuracyKind::Hamming,
        }
    }
}

impl MetricConfig {
    pub fn gap_config(&self, categories: Option<Vec<usize>>) -> GapConfig {
        GapConfig {
            top_k: self.top_k,
            category_mode: self.category_mode,
            categories,
        }
    }
}

/// One named `(accuracy, GAP)` result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub accuracy: f64,
    pub gap: f64,
}

/// Scores a probability matrix: accuracy on thresholded cells and GAP on the
/// top-k ranked lists.
pub fn evaluate_probs(
    name: &str,
    probs: &Matrix,
    targets: &[MultiLabelTarget],
    cfg: &MetricConfig,
    categories: Option<Vec<usize>>,
) -> Result<EvalRow> {
    ensure!(probs.rows() == targets.len(), Validation, "{} prediction rows for {} targets", probs.rows(), targets.len());
    let preds = top_k_predictions(probs, cfg.top_k);
    Ok(EvalRow {
        name: name.to_string(),
        accuracy: accuracy(cfg.accuracy, probs, targets, cfg.threshold),
        gap: gap(&preds, targets, &cfg.gap_config(categories))?,
    })
}
