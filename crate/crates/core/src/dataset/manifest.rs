//! JSON dataset manifest and its assembly into an aligned [`Dataset`].

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;
use crate::util::{read_json, write_json};

use super::synth::{RawDataset, RawText};
use super::{load_feature_file, write_feature_file, Dataset, FeatureFile, MultiLabelTarget, PoolMode, TagVocabulary};

/// JSON object whose key order and duplicate keys are preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedList<V>(pub Vec<(String, V)>);

impl<V> Default for NamedList<V> {
    fn default() -> Self {
        NamedList(Vec::new())
    }
}

impl<V: Serialize> Serialize for NamedList<V> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de, V: Deserialize<'de>> Deserialize<'de> for NamedList<V> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V2<V>(std::marker::PhantomData<V>);
        impl<'de, V: Deserialize<'de>> Visitor<'de> for V2<V> {
            type Value = NamedList<V>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, V>()? {
                    entries.push((k, v));
                }
                Ok(NamedList(entries))
            }
        }
        d.deserialize_map(V2(std::marker::PhantomData))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextSource {
    /// JSON array of pre-segmented token arrays, aligned to `sample_ids`.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<usize>,
    #[serde(default = "default_min_df")]
    pub min_df: usize,
}

fn default_min_df() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub sample_ids: Vec<String>,
    pub modalities: NamedList<String>,
    pub labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<String>,
    pub vocabulary: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unlabeled: Vec<String>,
    #[serde(default, skip_serializing_if = "is_empty_list")]
    pub texts: NamedList<TextSource>,
    #[serde(default)]
    pub pool: PoolMode,
    /// Directory relative paths resolve against; set by [`DatasetManifest::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn is_empty_list<V>(l: &NamedList<V>) -> bool {
    l.0.is_empty()
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: DatasetManifest = read_json(path)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for id in &self.sample_ids {
            ensure!(ids.insert(id.as_str()), Validation, "duplicate sample id {id:?}");
        }
        let mut names = HashSet::new();
        for name in self.modalities.0.iter().map(|(k, _)| k).chain(self.texts.0.iter().map(|(k, _)| k)) {
            ensure!(names.insert(name.as_str()), Validation, "duplicate modality name {name:?}");
        }
        for id in &self.unlabeled {
            ensure!(ids.contains(id.as_str()), Validation, "unlabeled list names unknown sample {id:?}");
        }
        let mut paths: Vec<PathBuf> = self.modalities.0.iter().map(|(_, p)| self.resolve(p)).collect();
        paths.extend(self.texts.0.iter().map(|(_, t)| self.resolve(&t.path)));
        paths.push(self.resolve(&self.labels));
        paths.push(self.resolve(&self.vocabulary));
        paths.extend(self.extra.iter().map(|p| self.resolve(p)));
        for p in paths {
            if !p.is_file() {
                return Err(Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist")));
            }
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<TagVocabulary> {
        read_json(&self.resolve(&self.vocabulary))
    }

    /// Label sets aligned to `sample_ids`.
    pub fn targets(&self) -> Result<Vec<MultiLabelTarget>> {
        let labels: Vec<Vec<usize>> = read_json(&self.resolve(&self.labels))?;
        let n = self.sample_ids.len();
        ensure!(labels.len() == n, Alignment, "labels file has {} rows for {n} sample ids", labels.len());
        Ok(labels.into_iter().map(MultiLabelTarget::new).collect())
    }

    /// Reads every referenced file without pooling or vectorizing.
    pub fn load_raw(&self) -> Result<RawDataset> {
        self.validate()?;
        let n = self.sample_ids.len();
        let vocabulary = self.vocabulary()?;
        let targets = self.targets()?;
        let unlabeled: HashSet<&str> = self.unlabeled.iter().map(String::as_str).collect();
        let labeled = self.sample_ids.iter().map(|id| !unlabeled.contains(id.as_str())).collect();

        let files: Vec<(String, FeatureFile)> = self
            .modalities
            .0
            .par_iter()
            .map(|(name, rel)| load_feature_file(&self.resolve(rel)).map(|f| (name.clone(), f)))
            .collect::<Result<_>>()?;
        for (name, f) in &files {
            ensure!(f.n() == n, Alignment, "modality {name:?} has {} rows for {n} sample ids", f.n());
        }
        let extra = match &self.extra {
            Some(rel) => match load_feature_file(&self.resolve(rel))? {
                FeatureFile::Matrix(m) => {
                    ensure!(m.rows() == n, Alignment, "extra features have {} rows for {n} sample ids", m.rows());
                    m
                }
                FeatureFile::Sequences { .. } => {
                    return Err(Error::Format("extra features must be a matrix file".into()))
                }
            },
            None => Matrix::zeros(n, 0),
        };
        let mut texts = Vec::with_capacity(self.texts.0.len());
        for (name, src) in &self.texts.0 {
            ensure!(src.min_df >= 1, Validation, "text {name:?}: min_df must be at least 1");
            let docs: Vec<Vec<String>> = read_json(&self.resolve(&src.path))?;
            ensure!(docs.len() == n, Alignment, "text {name:?} has {} documents for {n} sample ids", docs.len());
            texts.push(RawText {
                name: name.clone(),
                docs,
                truncate: src.truncate,
                min_df: src.min_df,
            });
        }
        Ok(RawDataset {
            sample_ids: self.sample_ids.clone(),
            vocabulary,
            targets,
            labeled,
            modalities: files,
            texts,
            extra,
        })
    }
}

/// Loads all modalities, pools sequences with the manifest's mode and checks
/// alignment. Sample order is the manifest order.
pub fn assemble_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.load_raw()?.into_dataset(manifest.pool)
}

/// Writes a raw dataset as a manifest plus feature, label and vocabulary files.
pub fn write_dataset(raw: &RawDataset, dir: &Path) -> Result<DatasetManifest> {
    let mut modalities = Vec::new();
    for (name, file) in &raw.modalities {
        let rel = format!("{name}.mmfb");
        write_feature_file(&dir.join(&rel), file)?;
        modalities.push((name.clone(), rel));
    }
    let mut texts = Vec::new();
    for t in &raw.texts {
        let rel = format!("{}.tokens.json", t.name);
        write_json(&dir.join(&rel), &t.docs)?;
        texts.push((
            t.name.clone(),
            TextSource {
                path: rel,
                truncate: t.truncate,
                min_df: t.min_df,
            },
        ));
    }
    let labels: Vec<&[usize]> = raw.targets.iter().map(MultiLabelTarget::positives).collect();
    write_json(&dir.join("labels.json"), &labels)?;
    write_json(&dir.join("vocabulary.json"), &raw.vocabulary)?;
    let extra = if raw.extra.cols() > 0 {
        write_feature_file(&dir.join("extra.mmfb"), &FeatureFile::Matrix(raw.extra.clone()))?;
        Some("extra.mmfb".to_string())
    } else {
        None
    };
    let manifest = DatasetManifest {
        sample_ids: raw.sample_ids.clone(),
        modalities: NamedList(modalities),
        labels: "labels.json".into(),
        extra,
        vocabulary: "vocabulary.json".into(),
        unlabeled: raw
            .sample_ids
            .iter()
            .zip(&raw.labeled)
            .filter(|(_, &l)| !l)
            .map(|(id, _)| id.clone())
            .collect(),
        texts: NamedList(texts),
        pool: PoolMode::Mean,
        base_dir: dir.to_path_buf(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
