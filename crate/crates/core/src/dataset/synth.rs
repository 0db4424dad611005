//! Seeded synthetic multimodal datasets with controllable per-modality
//! informativeness, noise and cross-modal conflict.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::matrix::Matrix;
use crate::seed;
use crate::text;

use super::{
    Dataset, ExtraFeatures, FeatureFile, FeatureMatrix, MultiLabelTarget, PoolMode, SequenceFeature,
    TagVocabulary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthModality {
    pub name: String,
    pub dim: usize,
    /// Tags whose signature this modality carries; `None` means all tags.
    #[serde(default)]
    pub informative_tags: Option<Vec<usize>>,
    pub noise_sigma: f64,
    /// Probability that a sample's signal is replaced by a wrong tag's signature.
    #[serde(default)]
    pub conflict_rate: f64,
    /// Emit a sequence set with this many frames per sample instead of a matrix.
    #[serde(default)]
    pub frames: Option<usize>,
}

/// Token-stream modality; each sample emits words tied to its tags mixed with filler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthText {
    pub name: String,
    #[serde(default = "default_words_per_tag")]
    pub words_per_tag: usize,
    #[serde(default = "default_filler_words")]
    pub filler_words: usize,
    pub doc_len: usize,
    /// Probability that a token is drawn from a positive tag's word list.
    pub signal_prob: f64,
    #[serde(default)]
    pub informative_tags: Option<Vec<usize>>,
    #[serde(default)]
    pub truncate: Option<usize>,
    #[serde(default = "default_min_df")]
    pub min_df: usize,
}

fn default_words_per_tag() -> usize {
    4
}

fn default_filler_words() -> usize {
    200
}

fn default_min_df() -> usize {
    2
}

fn default_second_tag_prob() -> f64 {
    0.3
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub num_tags: usize,
    pub modalities: Vec<SynthModality>,
    /// Side-feature dimension (duration, height, width, ...).
    #[serde(default)]
    pub extra_dim: usize,
    /// Probability that a sample carries a second, distinct tag.
    #[serde(default = "default_second_tag_prob")]
    pub second_tag_prob: f64,
    #[serde(default)]
    pub text: Option<SynthText>,
    #[serde(default)]
    pub categories: Option<usize>,
    /// Fold count the dataset must support; `n ≥ 2·folds` is enforced.
    #[serde(default = "default_folds")]
    pub folds: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_tags >= 2, Validation, "synthetic data needs at least 2 tags, got {}", self.num_tags);
        ensure!(self.folds >= 2, Validation, "fold count must be at least 2");
        ensure!(
            self.n >= 2 * self.folds,
            Validation,
            "n = {} is below 2·k = {}",
            self.n,
            2 * self.folds
        );
        ensure!(
            self.modalities.len() + usize::from(self.text.is_some()) >= 1,
            Validation,
            "synthetic data needs at least one modality"
        );
        ensure!((0.0..=1.0).contains(&self.second_tag_prob), Validation, "second_tag_prob must lie in [0,1]");
        if let Some(c) = self.categories {
            ensure!(c >= 1 && c <= self.num_tags, Validation, "categories must lie in 1..=num_tags");
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.modalities {
            ensure!(names.insert(m.name.as_str()), Validation, "duplicate modality {:?}", m.name);
            ensure!(m.dim >= 1, Validation, "modality {:?} has dimension 0", m.name);
            ensure!(
                m.noise_sigma.is_finite() && m.noise_sigma >= 0.0,
                Validation,
                "modality {:?} noise_sigma must be finite and non-negative",
                m.name
            );
            ensure!((0.0..=1.0).contains(&m.conflict_rate), Validation, "modality {:?} conflict_rate must lie in [0,1]", m.name);
            ensure!(m.frames != Some(0), Validation, "modality {:?} needs at least one frame", m.name);
            check_tags(&m.name, m.informative_tags.as_deref(), self.num_tags)?;
        }
        if let Some(t) = &self.text {
            ensure!(names.insert(t.name.as_str()), Validation, "duplicate modality {:?}", t.name);
            ensure!(t.words_per_tag >= 1 && t.filler_words >= 1, Validation, "text word lists must be non-empty");
            ensure!((0.0..=1.0).contains(&t.signal_prob), Validation, "signal_prob must lie in [0,1]");
            ensure!(t.min_df >= 1, Validation, "min_df must be at least 1");
            ensure!(t.truncate != Some(0), Validation, "truncation length must be at least 1");
            check_tags(&t.name, t.informative_tags.as_deref(), self.num_tags)?;
        }
        Ok(())
    }
}

fn check_tags(name: &str, tags: Option<&[usize]>, num_tags: usize) -> Result<()> {
    if let Some(tags) = tags {
        if let Some(bad) = tags.iter().find(|&&t| t >= num_tags) {
            return Err(crate::Error::Validation(format!(
                "modality {name:?} lists informative tag {bad} outside 0..{num_tags}"
            )));
        }
    }
    Ok(())
}

/// Token corpus attached to a raw dataset, converted to tf-idf on assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct RawText {
    pub name: String,
    pub docs: Vec<Vec<String>>,
    pub truncate: Option<usize>,
    pub min_df: usize,
}

/// Dataset before sequence pooling and text vectorization; what goes on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub sample_ids: Vec<String>,
    pub vocabulary: TagVocabulary,
    pub targets: Vec<MultiLabelTarget>,
    pub labeled: Vec<bool>,
    pub modalities: Vec<(String, FeatureFile)>,
    pub texts: Vec<RawText>,
    pub extra: Matrix,
}

impl RawDataset {
    pub fn into_dataset(self, pool: PoolMode) -> Result<Dataset> {
        let mut modalities = Vec::with_capacity(self.modalities.len() + self.texts.len());
        for (name, file) in self.modalities {
            let values = match file {
                FeatureFile::Matrix(m) => m,
                FeatureFile::Sequences { dim, samples } => {
                    let mut m = Matrix::zeros(samples.len(), dim);
                    for (i, s) in samples.iter().enumerate() {
                        let pooled = super::temporal_pool(s, pool)?;
                        m.row_mut(i).copy_from_slice(&pooled);
                    }
                    m
                }
            };
            modalities.push(FeatureMatrix::new(name, values)?);
        }
        for t in self.texts {
            let docs: Vec<Vec<String>> = match t.truncate {
                Some(m) => t.docs.iter().map(|d| text::truncate_first_last(d, m)).collect(),
                None => t.docs,
            };
            let vocab = text::NgramVocabulary::build(&docs, t.min_df)?;
            modalities.push(FeatureMatrix::new(t.name, text::tfidf_matrix(&docs, &vocab))?);
        }
        Dataset::new(
            self.sample_ids,
            self.vocabulary,
            self.targets,
            self.labeled,
            modalities,
            ExtraFeatures(self.extra),
        )
    }
}

pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    synth_generate_raw(config, seed)?.into_dataset(PoolMode::Mean)
}

const EXTRA_SCALES: [f64; 3] = [30.0, 720.0, 1280.0];

/// Generates the raw dataset. Draw order is fixed: signatures, tag sets,
/// modality features, extras, text.
pub fn synth_generate_raw(config: &SynthConfig, seed: u64) -> Result<RawDataset> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let n = config.n;
    let num_tags = config.num_tags;

    let signatures: Vec<Vec<Vec<f64>>> = config
        .modalities
        .iter()
        .map(|m| {
            (0..num_tags)
                .map(|_| (0..m.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect()
        })
        .collect();

    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let first = rng.random_range(0..num_tags);
        let mut tags = vec![first];
        if rng.random::<f64>() < config.second_tag_prob {
            let mut second = rng.random_range(0..num_tags - 1);
            if second >= first {
                second += 1;
            }
            tags.push(second);
        }
        targets.push(MultiLabelTarget::new(tags));
    }

    let mut modalities = Vec::with_capacity(config.modalities.len());
    for (m, sigs) in config.modalities.iter().zip(&signatures) {
        let informative = informative_mask(m.informative_tags.as_deref(), num_tags);
        let mut rows = Vec::with_capacity(n);
        for target in &targets {
            let conflicted = rng.random::<f64>() < m.conflict_rate;
            let mut signal = vec![0.0; m.dim];
            if conflicted {
                let wrong: Vec<usize> = (0..num_tags).filter(|&t| !target.contains(t)).collect();
                let &tag = wrong.choose(&mut rng).expect("num_tags ≥ 2 leaves a wrong tag");
                signal.copy_from_slice(&sigs[tag]);
            } else {
                for &tag in target.positives().iter().filter(|&&t| informative[t]) {
                    crate::matrix::axpy(1.0, &sigs[tag], &mut signal);
                }
            }
            let frames = m.frames.unwrap_or(1);
            let mut sample = Matrix::zeros(frames, m.dim);
            for f in 0..frames {
                for (v, s) in sample.row_mut(f).iter_mut().zip(&signal) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = s + m.noise_sigma * z;
                }
            }
            rows.push(sample);
        }
        let file = match m.frames {
            None => {
                let data = rows.into_iter().flat_map(Matrix::into_vec).collect();
                FeatureFile::Matrix(Matrix::from_vec(n, m.dim, data)?)
            }
            Some(_) => FeatureFile::Sequences {
                dim: m.dim,
                samples: rows.into_iter().map(|frames| SequenceFeature { frames }).collect(),
            },
        };
        modalities.push((m.name.clone(), file));
    }

    let mut extra = Matrix::zeros(n, config.extra_dim);
    for i in 0..n {
        for (j, v) in extra.row_mut(i).iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = EXTRA_SCALES[j % EXTRA_SCALES.len()] * (1.0 + 0.25 * z);
        }
    }

    let mut texts = Vec::new();
    if let Some(t) = &config.text {
        let informative = informative_mask(t.informative_tags.as_deref(), num_tags);
        let docs = targets
            .iter()
            .map(|target| {
                let signal_tags: Vec<usize> =
                    target.positives().iter().copied().filter(|&tag| informative[tag]).collect();
                (0..t.doc_len)
                    .map(|_| {
                        let use_signal = rng.random::<f64>() < t.signal_prob;
                        match signal_tags.choose(&mut rng) {
                            Some(&tag) if use_signal => {
                                format!("t{tag}w{}", rng.random_range(0..t.words_per_tag))
                            }
                            _ => format!("f{}", rng.random_range(0..t.filler_words)),
                        }
                    })
                    .collect()
            })
            .collect();
        texts.push(RawText {
            name: t.name.clone(),
            docs,
            truncate: t.truncate,
            min_df: t.min_df,
        });
    }

    Ok(RawDataset {
        sample_ids: (0..n).map(|i| format!("s{i:05}")).collect(),
        vocabulary: TagVocabulary::numbered(num_tags, config.categories),
        targets,
        labeled: vec![true; n],
        modalities,
        texts,
        extra,
    })
}

fn informative_mask(tags: Option<&[usize]>, num_tags: usize) -> Vec<bool> {
    match tags {
        None => vec![true; num_tags],
        Some(tags) => {
            let mut mask = vec![false; num_tags];
            tags.iter().for_each(|&t| mask[t] = true);
            mask
        }
    }
}
