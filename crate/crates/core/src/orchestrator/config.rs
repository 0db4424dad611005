use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{assemble_dataset, synth_generate, Dataset, DatasetManifest, SynthConfig};
use crate::error::{ensure, Result};
use crate::fusion::{FusionKind, FusionSpec};
use crate::learners::TrainConfig;
use crate::metrics::MetricConfig;
use crate::stacking::{LearnerSpec, MetaSpec, ModalitySpec, StackingConfig};
use crate::util::read_json;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Manifest(String),
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSettings {
    #[serde(default = "all_strategies")]
    pub strategies: Vec<FusionKind>,
    #[serde(default)]
    pub model: FusionSpec,
}

fn all_strategies() -> Vec<FusionKind> {
    FusionKind::ALL.to_vec()
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            strategies: all_strategies(),
            model: FusionSpec::default(),
        }
    }
}

/// One rung of the feature-combination ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Block names (see [`ModalitySpec::block_name`]).
    pub blocks: Vec<String>,
    #[serde(default)]
    pub extra: bool,
}

impl LadderStep {
    pub fn display_name(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => {
                let mut s = self.blocks.join("+");
                if self.extra {
                    s.push_str("+extra");
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    /// Base learner per modality; empty selects the defaults.
    #[serde(default)]
    pub modalities: Vec<ModalitySpec>,
    #[serde(default)]
    pub meta: MetaSpec,
    #[serde(default = "default_true")]
    pub use_extra: bool,
    #[serde(default)]
    pub stratified: bool,
    #[serde(default)]
    pub fusion: FusionSettings,
    /// Feature-combination ladder; empty selects cumulative prefixes of the
    /// block order followed by `+extra`.
    #[serde(default)]
    pub ladder: Vec<LadderStep>,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default = "default_out")]
    pub out_dir: String,
}

fn default_folds() -> usize {
    5
}

fn default_holdout() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

fn default_out() -> String {
    "out".into()
}

impl RunConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            dataset,
            seed: 0,
            folds: default_folds(),
            holdout_fraction: default_holdout(),
            modalities: Vec::new(),
            meta: MetaSpec::default(),
            use_extra: true,
            stratified: false,
            fusion: FusionSettings::default(),
            ladder: Vec::new(),
            metric: MetricConfig::default(),
            out_dir: default_out(),
        }
    }

    /// Reads a config file; relative manifest paths resolve against it.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        if let DatasetSource::Manifest(m) = &mut cfg.dataset {
            let p = Path::new(m.as_str());
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *m = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.version == CONFIG_VERSION,
            Validation,
            "unsupported config version {} (expected {CONFIG_VERSION})",
            self.version
        );
        ensure!(self.folds >= 2, Validation, "folds must be at least 2");
        ensure!(
            self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0,
            Validation,
            "holdout_fraction must lie in (0,1)"
        );
        ensure!(self.metric.top_k >= 1, Validation, "metric top_k must be at least 1");
        ensure!(!self.fusion.strategies.is_empty(), Validation, "fusion strategy list is empty");
        if let DatasetSource::Synth(s) = &self.dataset {
            s.validate()?;
        }
        for m in &self.modalities {
            m.learner.validate()?;
        }
        self.meta.train.validate()?;
        self.fusion.model.train.validate()?;
        for step in &self.ladder {
            ensure!(!step.blocks.is_empty(), Validation, "ladder step {:?} lists no blocks", step.display_name());
        }
        Ok(())
    }

    pub fn out_path(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    pub fn stacking(&self, use_extra: bool) -> StackingConfig {
        StackingConfig {
            folds: self.folds,
            seed: self.seed,
            meta: self.meta.clone(),
            use_extra,
            stratified: self.stratified,
        }
    }

    /// Names of tf-idf text modalities in the configured dataset.
    pub fn text_modalities(&self) -> Result<Vec<String>> {
        Ok(match &self.dataset {
            DatasetSource::Synth(s) => s.text.iter().map(|t| t.name.clone()).collect(),
            DatasetSource::Manifest(p) => DatasetManifest::load(Path::new(p))?
                .texts
                .0
                .into_iter()
                .map(|(name, _)| name)
                .collect(),
        })
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Synth(s) => synth_generate(s, self.seed),
            DatasetSource::Manifest(p) => assemble_dataset(&DatasetManifest::load(Path::new(p))?),
        }
    }

    /// Configured learner specs, or defaults: an MLP per dense modality and a
    /// logistic plus a squared-hinge learner per tf-idf modality.
    pub fn resolve_specs(&self, dataset: &Dataset) -> Result<Vec<ModalitySpec>> {
        if !self.modalities.is_empty() {
            return Ok(self.modalities.clone());
        }
        let text = self.text_modalities()?;
        let mut specs = Vec::new();
        for name in dataset.modality_names() {
            if text.iter().any(|t| t == name) {
                let linear = TrainConfig {
                    learning_rate: 1e-2,
                    ..TrainConfig::default()
                };
                specs.push(ModalitySpec {
                    modality: name.to_string(),
                    learner: LearnerSpec::Logistic { train: linear.clone() },
                    name: Some(format!("{name}:logistic")),
                });
                specs.push(ModalitySpec {
                    modality: name.to_string(),
                    learner: LearnerSpec::SquaredHinge { train: linear },
                    name: Some(format!("{name}:hinge")),
                });
            } else {
                specs.push(ModalitySpec::new(
                    name,
                    LearnerSpec::Mlp {
                        hidden: vec![128],
                        dropout: vec![0.3],
                        train: TrainConfig::default(),
                    },
                ));
            }
        }
        Ok(specs)
    }
}
