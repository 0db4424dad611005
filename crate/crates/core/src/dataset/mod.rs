//! Dataset model: tag vocabulary, multi-label targets, per-modality feature
//! matrices and side features.

mod format;
mod manifest;
mod pool;
mod synth;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::matrix::Matrix;

pub use format::{
    decode_feature_file, encode_feature_file, load_feature_file, load_feature_matrix,
    write_feature_file, write_feature_matrix, FeatureFile, FORMAT_VERSION, MAGIC,
};
pub use manifest::{assemble_dataset, write_dataset, DatasetManifest, NamedList, TextSource};
pub use pool::{temporal_pool, PoolMode};
pub use synth::{synth_generate, synth_generate_raw, RawDataset, RawText, SynthConfig, SynthModality, SynthText};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub id: usize,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<usize>,
}

/// Ordered tag label space shared by every model and metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct TagVocabulary {
    tags: Vec<Tag>,
}

impl TagVocabulary {
    pub fn new(tags: Vec<Tag>) -> Result<Self> {
        let mut names = HashSet::new();
        for (i, t) in tags.iter().enumerate() {
            ensure!(t.id == i, Validation, "tag ids must be 0..T-1 in order; position {i} has id {}", t.id);
            ensure!(names.insert(t.name.as_str()), Validation, "duplicate tag name {:?}", t.name);
        }
        let with_category = tags.iter().filter(|t| t.category.is_some()).count();
        ensure!(
            with_category == 0 || with_category == tags.len(),
            Validation,
            "either every tag or no tag must declare a category"
        );
        if with_category > 0 {
            let cats: BTreeSet<usize> = tags.iter().filter_map(|t| t.category).collect();
            let c = cats.len();
            ensure!(
                cats.iter().copied().eq(0..c),
                Validation,
                "category indices must cover 0..C-1 without gaps"
            );
        }
        Ok(TagVocabulary { tags })
    }

    /// Tags named `tag_00`, `tag_01`, ...
    pub fn numbered(num_tags: usize, categories: Option<usize>) -> Self {
        let tags = (0..num_tags)
            .map(|id| Tag {
                id,
                name: format!("tag_{id:02}"),
                category: categories.map(|c| id % c),
            })
            .collect();
        TagVocabulary { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    /// Per-tag category index, if the vocabulary declares categories.
    pub fn categories(&self) -> Option<Vec<usize>> {
        self.tags.iter().map(|t| t.category).collect()
    }
}

impl<'de> Deserialize<'de> for TagVocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tags = Vec::<Tag>::deserialize(d)?;
        TagVocabulary::new(tags).map_err(serde::de::Error::custom)
    }
}

/// Sorted, duplicate-free set of positive tag ids for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiLabelTarget {
    positives: Vec<usize>,
}

impl MultiLabelTarget {
    pub fn new(tags: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = tags.into_iter().collect();
        MultiLabelTarget {
            positives: set.into_iter().collect(),
        }
    }

    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    pub fn contains(&self, tag: usize) -> bool {
        self.positives.binary_search(&tag).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub modality: String,
    pub values: Matrix,
}

impl FeatureMatrix {
    pub fn new(modality: impl Into<String>, values: Matrix) -> Result<Self> {
        let modality = modality.into();
        ensure!(values.is_finite(), Validation, "modality {modality:?} contains non-finite values");
        Ok(FeatureMatrix { modality, values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }
}

/// Variable-length frame sequence for one sample (`t × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFeature {
    pub frames: Matrix,
}

/// Per-sample side features (duration, height, width, ...). `e = 0` is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraFeatures(pub Matrix);

impl ExtraFeatures {
    pub fn empty(n: usize) -> Self {
        ExtraFeatures(Matrix::zeros(n, 0))
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_ids: Vec<String>,
    pub vocabulary: TagVocabulary,
    pub targets: Vec<MultiLabelTarget>,
    /// `false` marks samples excluded from training (empty label set).
    pub labeled: Vec<bool>,
    modalities: Vec<FeatureMatrix>,
    pub extra: ExtraFeatures,
}

impl Dataset {
    pub fn new(
        sample_ids: Vec<String>,
        vocabulary: TagVocabulary,
        targets: Vec<MultiLabelTarget>,
        labeled: Vec<bool>,
        modalities: Vec<FeatureMatrix>,
        extra: ExtraFeatures,
    ) -> Result<Self> {
        let n = sample_ids.len();
        let unique: HashSet<&str> = sample_ids.iter().map(String::as_str).collect();
        ensure!(unique.len() == n, Validation, "sample ids must be unique");
        ensure!(targets.len() == n, Alignment, "{} label rows for {n} samples", targets.len());
        ensure!(labeled.len() == n, Alignment, "{} labeled flags for {n} samples", labeled.len());
        let t = vocabulary.len();
        for (i, (target, &is_labeled)) in targets.iter().zip(&labeled).enumerate() {
            if let Some(&bad) = target.positives().iter().find(|&&tag| tag >= t) {
                return Err(crate::Error::Validation(format!(
                    "sample {} has tag {bad} outside the vocabulary of {t} tags",
                    sample_ids[i]
                )));
            }
            ensure!(
                !(is_labeled && target.is_empty()),
                Validation,
                "sample {} has no tags but is not flagged as unlabeled",
                sample_ids[i]
            );
        }
        let mut names = HashSet::new();
        for m in &modalities {
            ensure!(names.insert(m.modality.as_str()), Validation, "duplicate modality {:?}", m.modality);
            ensure!(
                m.n() == n,
                Alignment,
                "modality {:?} has {} rows for {n} samples",
                m.modality,
                m.n()
            );
        }
        ensure!(extra.0.rows() == n, Alignment, "extra features have {} rows for {n} samples", extra.0.rows());
        ensure!(extra.0.is_finite(), Validation, "extra features contain non-finite values");
        Ok(Dataset {
            sample_ids,
            vocabulary,
            targets,
            labeled,
            modalities,
            extra,
        })
    }

    pub fn n(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn num_tags(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn modalities(&self) -> &[FeatureMatrix] {
        &self.modalities
    }

    pub fn modality_names(&self) -> Vec<&str> {
        self.modalities.iter().map(|m| m.modality.as_str()).collect()
    }

    pub fn modality(&self, name: &str) -> Result<&FeatureMatrix> {
        self.modalities
            .iter()
            .find(|m| m.modality == name)
            .ok_or_else(|| crate::Error::Validation(format!("dataset has no modality {name:?}")))
    }

    pub fn modality_mut(&mut self, name: &str) -> Result<&mut FeatureMatrix> {
        self.modalities
            .iter_mut()
            .find(|m| m.modality == name)
            .ok_or_else(|| crate::Error::Validation(format!("dataset has no modality {name:?}")))
    }

    pub fn add_modality(&mut self, m: FeatureMatrix) -> Result<()> {
        ensure!(
            self.modality(&m.modality).is_err(),
            Validation,
            "duplicate modality {:?}",
            m.modality
        );
        ensure!(m.n() == self.n(), Alignment, "modality {:?} has {} rows for {} samples", m.modality, m.n(), self.n());
        self.modalities.push(m);
        Ok(())
    }

    /// Multi-hot `n × T` target matrix.
    pub fn label_matrix(&self) -> Matrix {
        label_matrix(&self.targets, self.num_tags())
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labeled[i]).collect()
    }

    /// Restriction to the listed samples, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            vocabulary: self.vocabulary.clone(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            labeled: idx.iter().map(|&i| self.labeled[i]).collect(),
            modalities: self
                .modalities
                .iter()
                .map(|m| FeatureMatrix {
                    modality: m.modality.clone(),
                    values: m.values.select_rows(idx),
                })
                .collect(),
            extra: ExtraFeatures(self.extra.0.select_rows(idx)),
        }
    }
}

pub fn label_matrix(targets: &[MultiLabelTarget], num_tags: usize) -> Matrix {
    let mut y = Matrix::zeros(targets.len(), num_tags);
    for (i, t) in targets.iter().enumerate() {
        for &tag in t.positives() {
            y.set(i, tag, 1.0);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_rejects_gaps_and_duplicates() {
        let tag = |id, name: &str| Tag { id, name: name.into(), category: None };
        assert!(TagVocabulary::new(vec![tag(0, "a"), tag(2, "b")]).is_err());
        assert!(TagVocabulary::new(vec![tag(0, "a"), tag(1, "a")]).is_err());
        let mixed = vec![
            Tag { id: 0, name: "a".into(), category: Some(0) },
            tag(1, "b"),
        ];
        assert!(TagVocabulary::new(mixed).is_err());
        let gap = vec![
            Tag { id: 0, name: "a".into(), category: Some(0) },
            Tag { id: 1, name: "b".into(), category: Some(2) },
        ];
        assert!(TagVocabulary::new(gap).is_err());
    }

    #[test]
    fn unflagged_empty_label_set_is_rejected() {
        let vocab = TagVocabulary::numbered(2, None);
        let ids = vec!["a".to_string(), "b".to_string()];
        let targets = vec![MultiLabelTarget::new([0]), MultiLabelTarget::default()];
        let err = Dataset::new(ids.clone(), vocab.clone(), targets.clone(), vec![true, true], vec![], ExtraFeatures::empty(2));
        assert!(err.is_err());
        let ok = Dataset::new(ids, vocab, targets, vec![true, false], vec![], ExtraFeatures::empty(2)).unwrap();
        assert_eq!(ok.labeled_indices(), vec![0]);
    }

    #[test]
    fn target_normalizes_order_and_duplicates() {
        let t = MultiLabelTarget::new([3, 1, 3]);
        assert_eq!(t.positives(), &[1, 3]);
        assert!(t.contains(3) && !t.contains(2));
    }
}
