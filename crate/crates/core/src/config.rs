//! TOML experiment configuration. Unknown keys are rejected; parse errors
//! carry the line and column of the offending token.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adp::ValidationRamp;
use crate::data::{synth_blobs_with, BlobParams, LabeledDataset, SamplerMode};
use crate::error::{Error, Result};
use crate::experiment::{load_digits, SplitConfig};
use crate::nn::{InitMode, LayerSpec};
use crate::optim::OptimizerConfig;
use crate::transfer::{FinetuneConfig, FinetuneMode, PretrainConfig, WarmupRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusConfig {
    /// IDX image/label pair, optionally gzip-compressed. Relative paths resolve against the config file.
    Idx { images: PathBuf, labels: PathBuf },
    SynthBlobs {
        classes: usize,
        per_class: usize,
        image_size: usize,
        seed: u64,
        #[serde(default)]
        params: BlobParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub corpus: CorpusConfig,
    pub source_classes: Vec<usize>,
    pub target_classes: Vec<usize>,
    #[serde(default)]
    pub split: SplitConfig,
    /// Nearest-neighbour resize to `[height, width]`.
    #[serde(default)]
    pub resize: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    #[serde(default)]
    pub architecture: Option<Vec<LayerSpec>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_pretrain_init")]
    pub init: InitMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::sgd(0.9)
}

fn default_pretrain_init() -> InitMode {
    InitMode::KaimingFanIn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdoptSection {
    pub init: InitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub mode: FinetuneMode,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerMode,
    #[serde(default)]
    pub warmup: WarmupRule,
    #[serde(default)]
    pub update_bn_when_frozen: bool,
    #[serde(default)]
    pub hflip: bool,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_sampler() -> SamplerMode {
    SamplerMode::Balanced
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// `fibonacci` is the only scheme; extra steps are added with `extra_checkpoints`.
    #[serde(default = "default_scheme")]
    pub checkpoints: String,
    #[serde(default)]
    pub extra_checkpoints: Vec<usize>,
    #[serde(default)]
    pub validation: ValidationRamp,
    #[serde(default)]
    pub validate_every_step: bool,
    /// Score the source task through the detached source head at every checkpoint.
    #[serde(default = "default_true")]
    pub source_retention: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            checkpoints: default_scheme(),
            extra_checkpoints: Vec::new(),
            validation: ValidationRamp::default(),
            validate_every_step: false,
            source_retention: true,
        }
    }
}

fn default_scheme() -> String {
    "fibonacci".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Pretrained checkpoint path; `<dir>/pretrained.json` when absent.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub pretrain: PretrainSection,
    pub adopt: AdoptSection,
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub eval: EvalSection,
    pub output: OutputSection,
    /// Directory of the config file, used to resolve relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval.checkpoints != "fibonacci" {
            return Err(Error::Config(format!(
                "unknown checkpoint scheme {:?} (expected \"fibonacci\")",
                self.eval.checkpoints
            )));
        }
        if self.finetune.seeds.is_empty() {
            return Err(Error::Config("finetune.seeds must list at least one seed".into()));
        }
        if self.data.source_classes.len() < 2 || self.data.target_classes.len() < 2 {
            return Err(Error::Config("source and target tasks need at least two classes each".into()));
        }
        self.finetune_config(self.finetune.seeds[0]).validate()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match &self.output.checkpoint {
            Some(p) => self.resolve(p),
            None => self.output_dir().join("pretrained.json"),
        }
    }

    pub fn load_corpus(&self) -> Result<LabeledDataset> {
        let ds = match &self.data.corpus {
            CorpusConfig::Idx { images, labels } => {
                crate::data::load_idx(&self.resolve(images), &self.resolve(labels))?
            }
            CorpusConfig::SynthBlobs {
                classes,
                per_class,
                image_size,
                seed,
                params,
            } => synth_blobs_with(*classes, *per_class, *image_size, *seed, *params)?,
        };
        match self.data.resize {
            Some([h, w]) => ds.resize_nearest(h, w),
            None => Ok(ds),
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            architecture: p.architecture.clone(),
            epochs: p.epochs,
            batch_size: p.batch_size,
            lr: p.lr,
            optimizer: p.optimizer,
            init: p.init,
            seed: p.seed,
        }
    }

    pub fn finetune_config(&self, seed: u64) -> FinetuneConfig {
        let f = &self.finetune;
        FinetuneConfig {
            mode: f.mode,
            alpha: f.alpha,
            beta: f.beta,
            init: self.adopt.init,
            optimizer: f.optimizer,
            batch_size: f.batch_size,
            max_steps: f.max_steps,
            sampler: f.sampler,
            warmup: f.warmup,
            update_bn_when_frozen: f.update_bn_when_frozen,
            hflip: f.hflip,
            temperature: f.temperature,
            validation: self.eval.validation,
            validate_every_step: self.eval.validate_every_step,
            extra_checkpoints: self.eval.extra_checkpoints.clone(),
            seed,
        }
    }
}

/// Loads the bundled digit corpus; used by tests and the default configs.
pub fn bundled_corpus() -> Result<LabeledDataset> {
    load_digits(&crate::experiment::bundled_data_dir())
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = include_str!("../../../configs/fast.toml");

    #[test]
    fn example_config_parses() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.finetune.mode, FinetuneMode::Fast);
        assert!(cfg.adopt.init.is_zero());
        assert_eq!(cfg.finetune_config(7).seed, 7);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let bad = EXAMPLE.replace("[finetune]", "[finetune]\nlearning_rate = 3");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn syntax_errors_report_line_and_column() {
        let err = ExperimentConfig::from_toml("[data\nx = 1").unwrap_err().to_string();
        assert!(err.contains("line 1, column"), "{err}");
    }

    #[test]
    fn fast_with_random_init_is_rejected() {
        let bad = EXAMPLE.replace("mode = \"zero\"", "mode = \"kaiming_fan_in\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let re = EXAMPLE
            .lines()
            .map(|l| if l.starts_with("seeds") { "seeds = []" } else { l })
            .collect::<Vec<_>>()
            .join("\n");
        let err = ExperimentConfig::from_toml(&re).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }
}
