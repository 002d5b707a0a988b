use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical::canonical_json;
use crate::data::SyntheticSpec;
use crate::embeddings::DEFAULT_TOP_K;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// Tokenized parallel text for one split. Image indexes are one integer per
/// line naming a row of the feature file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    pub source: PathBuf,
    pub target: PathBuf,
    #[serde(default)]
    pub images: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub train: SplitPaths,
    pub val: SplitPaths,
    pub test: SplitPaths,
    /// MMVF or CSV visual features.
    #[serde(default)]
    pub features: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Files(FileData),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Word vectors for the source side (text format).
    pub source_vectors: Option<PathBuf>,
    pub target_vectors: Option<PathBuf>,
    /// Apply all-but-the-top to pretrained tables. Turn off for vectors
    /// already written by `prep-embeddings`.
    pub debias: bool,
    pub top_k: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            source_vectors: None,
            target_vectors: None,
            debias: true,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub embeddings: EmbeddingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Subtract the training-image centroid from all features.
    #[serde(default = "yes")]
    pub visual_debias: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn yes() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        ExperimentConfig {
            data: DataConfig::Synthetic(spec),
            embeddings: EmbeddingConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            visual_debias: true,
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_json(&std::fs::read_to_string(path)?)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(config)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataConfig::Files(f) = &mut self.data {
            for split in [&mut f.train, &mut f.val, &mut f.test] {
                fix(&mut split.source);
                fix(&mut split.target);
                split.images.as_mut().map(fix);
            }
            f.features.as_mut().map(fix);
        }
        self.embeddings.source_vectors.as_mut().map(fix);
        self.embeddings.target_vectors.as_mut().map(fix);
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let DataConfig::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Pretty JSON with sorted keys; what runs write next to their outputs.
    pub fn to_json(&self) -> Result<String> {
        let value: serde_json::Value = serde_json::from_str(&canonical_json(self)?)?;
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }
}
