use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, Shape3};
use crate::augment::AugmentationPolicy;
use crate::dataset::{self, ChannelPolicy, DatasetManifest, SplitSpec};
use crate::error::{Error, Result};
use crate::optimizer::AdamHyper;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 30,
            batch_size: 32,
            seed: 10,
        }
    }
}

/// Where the labelled, split records come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A manifest JSON whose records already carry split assignments.
    Manifest(PathBuf),
    /// A folder-per-class corpus, balanced then split on load.
    Folder {
        root: PathBuf,
        #[serde(default)]
        balance_seed: u64,
        split: SplitSpec,
    },
}

impl DatasetSource {
    pub fn resolve(&self) -> Result<DatasetManifest> {
        match self {
            DatasetSource::Manifest(path) => DatasetManifest::load(path),
            DatasetSource::Folder {
                root,
                balance_seed,
                split,
            } => {
                let (manifest, _) = dataset::ingest(root)?;
                let balanced = dataset::balance(&manifest, *balance_seed)?;
                dataset::split(&balanced, split)
            }
        }
    }
}

fn default_width_scale() -> f64 {
    1.0
}

fn default_input_size() -> usize {
    256
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: Architecture,
    #[serde(default = "default_width_scale")]
    pub width_scale: f64,
    /// Square input side after resizing.
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default)]
    pub channel_policy: ChannelPolicy,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub augmentation: AugmentationPolicy,
    /// Augment validation batches with the training policy.
    #[serde(default = "default_true")]
    pub augment_validation: bool,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(architecture: Architecture, dataset: DatasetSource) -> Self {
        Self {
            architecture,
            width_scale: default_width_scale(),
            input_size: default_input_size(),
            channel_policy: ChannelPolicy::default(),
            dataset,
            augmentation: AugmentationPolicy::none(),
            augment_validation: true,
            hyperparameters: Hyperparameters::default(),
            output_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyperparameters;
        if h.epochs == 0 || h.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "epochs must be ≥ 1 and batch_size ≥ 2 (got {} and {})",
                h.epochs, h.batch_size
            )));
        }
        self.adam().validate()?;
        self.augmentation.validate()
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.hyperparameters.learning_rate,
            ..AdamHyper::default()
        }
    }

    pub fn input_shape(&self) -> Shape3 {
        Shape3 {
            h: self.input_size,
            w: self.input_size,
            c: self.channel_policy.channels(),
        }
    }
}
