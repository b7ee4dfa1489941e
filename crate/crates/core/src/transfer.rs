//! Model adoption and the fine-tuning procedures: feature extraction,
//! traditional fine-tuning, classifier warmup followed by joint training,
//! zero-initialized fine-tuning with decoupled rates, and free joint training.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adp::{
    accuracy, fibonacci_checkpoints, record_checkpoint, theta_distance, AdpLog, AdpRecord, DeploymentEval,
    ValidationRamp, ValidationTracker,
};
use crate::data::{hflip_augment, Batch, BatchSampler, LabeledDataset, SamplerMode};
use crate::error::{Error, Result};
use crate::nn::{
    desk_backbone_specs, ClassifierHead, FeatureExtractor, ForwardMode, InitMode, LayerSpec, ModelCheckpoint,
    Network,
};
use crate::optim::{OptimizerConfig, OptimizerState, ParamGroup};
use crate::tensor::{entropy_rows, frobenius_norm, nll_loss, prediction_error, softmax_rows, Tensor};

/// Derives an independent stream seed from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Head and backbone learning rates for one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub alpha: f64,
    pub beta: f64,
}

/// Batch statistics of one update, measured before the parameters move.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: f64,
    pub mean_entropy: f64,
    /// `(1/M) Σ_m ‖Δ_m‖²`.
    pub delta_sq: f64,
    /// `‖∂ℓ/∂A‖_F`, the gradient reaching the extractor output.
    pub feature_grad_norm: f64,
    pub features: Tensor,
}

/// One forward/backward/update on `batch`. The extractor is only
/// backpropagated when `beta > 0`; `mode` selects batch or running BN statistics.
pub fn train_step(
    extractor: &mut FeatureExtractor,
    head: &mut ClassifierHead,
    optimizer: &mut OptimizerState,
    batch: &Batch,
    rates: Rates,
    mode: ForwardMode,
    temperature: f64,
) -> Result<StepOutcome> {
    let a = extractor.forward(&batch.images, mode)?;
    let z = head.forward(&a)?;
    let y_hat = softmax_rows(&z, temperature)?;
    let delta = prediction_error(&batch.targets, &y_hat)?;
    let loss = nll_loss(&y_hat, &batch.targets)?;
    let m = batch.labels.len() as f64;
    let mean_entropy = entropy_rows(&y_hat)?.data().iter().sum::<f64>() / m;
    let delta_sq = delta.data().iter().map(|d| d * d).sum::<f64>() / m;
    let grad_delta = if temperature == 1.0 { delta } else { delta.scale(1.0 / temperature) };
    let grad_a = head.backward_store(&a, &grad_delta)?;
    let feature_grad_norm = frobenius_norm(&grad_a);
    let train_backbone = rates.beta > 0.0;
    if train_backbone {
        if mode != ForwardMode::Train {
            return Err(Error::InvalidArgument("backbone updates need a training-mode forward pass".into()));
        }
        extractor.backward_params(&grad_a)?;
    }
    let mut groups = vec![ParamGroup {
        name: "head",
        lr: rates.alpha,
        params: vec![head.param_slot()],
    }];
    if train_backbone {
        groups.push(ParamGroup {
            name: "extractor",
            lr: rates.beta,
            params: extractor.param_slots(),
        });
    }
    optimizer.step(&mut groups)?;
    if !head.weight().is_finite() {
        return Err(Error::NonFinite("head weights diverged"));
    }
    Ok(StepOutcome {
        loss,
        mean_entropy,
        delta_sq,
        feature_grad_norm,
        features: a,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Layer stack; the desk backbone when absent.
    pub architecture: Option<Vec<LayerSpec>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerConfig,
    pub init: InitMode,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            architecture: None,
            epochs: 3,
            batch_size: 20,
            lr: 0.05,
            optimizer: OptimizerConfig::sgd(0.9),
            init: InitMode::KaimingFanIn,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Trains a fresh network jointly on the source task.
pub fn pretrain(ds: &LabeledDataset, cfg: &PretrainConfig) -> Result<(Network, PretrainReport)> {
    let input_shape = ds.image_shape().to_vec();
    let specs = match &cfg.architecture {
        Some(s) => s.clone(),
        None => desk_backbone_specs(&input_shape)?,
    };
    let mut extractor = FeatureExtractor::new(&input_shape, specs, derive_seed(cfg.seed, 1))?;
    let mut head = ClassifierHead::new(ds.class_count(), extractor.output_dim(), cfg.init, derive_seed(cfg.seed, 2));
    let mut optimizer = OptimizerState::new(cfg.optimizer)?;
    let mut sampler = BatchSampler::new(ds, cfg.batch_size, SamplerMode::Shuffled, derive_seed(cfg.seed, 3))?;
    let steps = cfg.epochs * (ds.len() / cfg.batch_size);
    let rates = Rates {
        alpha: cfg.lr,
        beta: cfg.lr,
    };
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch = sampler.next_batch(ds)?;
        let out = train_step(&mut extractor, &mut head, &mut optimizer, &batch, rates, ForwardMode::Train, 1.0)?;
        losses.push(out.loss);
    }
    extractor.clear_caches();
    let train_accuracy = accuracy(&extractor, &head, ds)?;
    Ok((
        Network {
            extractor,
            head,
            seed: cfg.seed,
        },
        PretrainReport {
            losses,
            train_accuracy,
        },
    ))
}

/// A pretrained backbone with a fresh target head. The source head and the
/// pretrained parameters `θ_s*` are kept aside and never updated.
#[derive(Debug, Clone)]
pub struct AdoptedModel {
    network: Network,
    source_head: ClassifierHead,
    theta_source: Vec<f64>,
}

impl AdoptedModel {
    pub fn adopt(pretrained: &Network, n_target: usize, init: InitMode, seed: u64) -> Result<Self> {
        if n_target < 2 {
            return Err(Error::InvalidArgument(format!("target task needs ≥2 classes, got {n_target}")));
        }
        let mut extractor = pretrained.extractor.clone();
        extractor.clear_caches();
        let target_head = ClassifierHead::new(n_target, extractor.output_dim(), init, seed);
        Ok(Self {
            theta_source: extractor.theta(),
            source_head: pretrained.head.clone(),
            network: Network {
                extractor,
                head: target_head,
                seed,
            },
        })
    }

    pub fn adopt_checkpoint(ckpt: &ModelCheckpoint, n_target: usize, init: InitMode, seed: u64) -> Result<Self> {
        Self::adopt(&Network::from_checkpoint(ckpt)?, n_target, init, seed)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.network.extractor
    }

    pub fn target_head(&self) -> &ClassifierHead {
        &self.network.head
    }

    pub fn source_head(&self) -> &ClassifierHead {
        &self.source_head
    }

    pub fn theta_source(&self) -> &[f64] {
        &self.theta_source
    }

    pub fn theta_distance(&self) -> f64 {
        theta_distance(&self.network.extractor.theta(), &self.theta_source)
    }

    /// Source-task top-1 accuracy through the current extractor (inference mode) and the detached source head.
    pub fn evaluate_source_retention(&self, source_test: &LabeledDataset) -> Result<f64> {
        accuracy(&self.network.extractor, &self.source_head, source_test)
    }

    pub fn into_network(self) -> Network {
        self.network
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// Only the head trains (`β = 0`); BN statistics stay frozen.
    FeatureExtraction,
    /// Joint training with one rate: `α ← β`.
    Traditional,
    /// Head-only warmup until validation stalls, then joint training with `(α, β)`.
    WarmupThenJoint,
    /// Zero-initialized head, joint training with independent `α` and `β`.
    Fast,
    /// Joint training with independent rates and any head init.
    Joint,
}

impl FinetuneMode {
    pub fn label(&self) -> &'static str {
        match self {
            FinetuneMode::FeatureExtraction => "feature_extraction",
            FinetuneMode::Traditional => "traditional",
            FinetuneMode::WarmupThenJoint => "warmup_then_joint",
            FinetuneMode::Fast => "fast",
            FinetuneMode::Joint => "joint",
        }
    }
}

/// Ends classifier warmup once validation accuracy has not improved by
/// `min_improvement_pct` points over its best for `patience` consecutive steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmupRule {
    pub min_improvement_pct: f64,
    pub patience: usize,
}

impl Default for WarmupRule {
    fn default() -> Self {
        Self {
            min_improvement_pct: 1.0,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    pub alpha: f64,
    pub beta: f64,
    pub init: InitMode,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub sampler: SamplerMode,
    pub warmup: WarmupRule,
    /// Ablation: let BN running statistics follow the target data while the backbone is frozen.
    pub update_bn_when_frozen: bool,
    pub hflip: bool,
    pub temperature: f64,
    pub validation: ValidationRamp,
    /// Validate after every step for the per-step log (the snapshot schedule is unchanged).
    pub validate_every_step: bool,
    /// Deployment checkpoints in addition to the Fibonacci steps.
    pub extra_checkpoints: Vec<usize>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            mode: FinetuneMode::Fast,
            alpha: 0.1,
            beta: 0.01,
            init: InitMode::ZERO,
            optimizer: OptimizerConfig::sgd(0.9),
            batch_size: 20,
            max_steps: 89,
            sampler: SamplerMode::Balanced,
            warmup: WarmupRule::default(),
            update_bn_when_frozen: false,
            hflip: false,
            temperature: 1.0,
            validation: ValidationRamp::default(),
            validate_every_step: false,
            extra_checkpoints: Vec::new(),
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    /// Joint-phase rates after applying the mode's constraints.
    pub fn resolved_rates(&self) -> Result<Rates> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(match self.mode {
            FinetuneMode::FeatureExtraction => Rates {
                alpha: self.alpha,
                beta: 0.0,
            },
            FinetuneMode::Traditional => Rates {
                alpha: self.beta,
                beta: self.beta,
            },
            _ => Rates {
                alpha: self.alpha,
                beta: self.beta,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_rates()?;
        self.optimizer.validate()?;
        if self.mode == FinetuneMode::Fast && !self.init.is_zero() {
            return Err(Error::Config(format!(
                "fast mode requires a zero-initialized head, got {}",
                self.init.label()
            )));
        }
        if self.max_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_steps and batch_size must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.validation.cap == 0 {
            return Err(Error::Config("validation cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Sorted, deduplicated deployment steps.
    pub fn checkpoints(&self) -> Result<Vec<usize>> {
        let mut steps = fibonacci_checkpoints(self.max_steps)?;
        steps.extend(self.extra_checkpoints.iter().copied().filter(|&s| s >= 1 && s <= self.max_steps));
        steps.sort_unstable();
        steps.dedup();
        Ok(steps)
    }
}

/// Target splits plus the optional source test split.
pub struct TransferData<'a> {
    pub train: &'a LabeledDataset,
    pub val: &'a LabeledDataset,
    pub test: &'a LabeledDataset,
    pub source_test: Option<&'a LabeledDataset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Joint,
}

/// State after `step` updates. The batch fields describe the forward pass of
/// update `step + 1` and are absent on the final row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss: Option<f64>,
    pub entropy: Option<f64>,
    pub delta_sq: Option<f64>,
    pub feature_grad_norm: Option<f64>,
    pub w_fro: f64,
    pub theta_dist: f64,
    /// `‖θ_t − θ_{t−1}‖₂`, the backbone velocity of the last update.
    pub theta_step: f64,
    pub val_acc: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str =
    "step,phase,loss,entropy,delta_sq,feature_grad_norm,w_fro,theta_dist,theta_step,val_acc";

pub fn metrics_csv(steps: &[StepRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in steps {
        let phase = match r.phase {
            Phase::Warmup => "warmup",
            Phase::Joint => "joint",
        };
        let _ = writeln!(
            out,
            "{},{phase},{},{},{},{},{},{},{},{}",
            r.step,
            opt(r.loss),
            opt(r.entropy),
            opt(r.delta_sq),
            opt(r.feature_grad_norm),
            r.w_fro,
            r.theta_dist,
            r.theta_step,
            opt(r.val_acc)
        );
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub package_version: String,
    pub seed: u64,
    pub mode: FinetuneMode,
    pub transition_step: Option<usize>,
    pub best_val_step: Option<usize>,
    pub notes: Vec<String>,
    pub config: FinetuneConfig,
}

/// Everything a fine-tuning run produced.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: FinetuneConfig,
    pub steps: Vec<StepRecord>,
    pub adp: AdpLog,
    /// Last warmup step in `WarmupThenJoint`, when the stop rule fired.
    pub transition_step: Option<usize>,
    pub best: Option<Network>,
    pub notes: Vec<String>,
}

impl TrainRun {
    pub fn metadata(&self) -> RunMetadata {
        RunMetadata {
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            mode: self.config.mode,
            transition_step: self.transition_step,
            best_val_step: self.adp.last().map(|r| r.best_val_step),
            notes: self.notes.clone(),
            config: self.config.clone(),
        }
    }

    /// Writes `metrics.csv`, `adp.csv`, `metadata.json` and `best.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: &[u8]| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write("metrics.csv", metrics_csv(&self.steps).as_bytes())?;
        write("adp.csv", self.adp.to_csv().as_bytes())?;
        let mut meta = serde_json::to_vec_pretty(&self.metadata())?;
        meta.push(b'\n');
        write("metadata.json", &meta)?;
        if let Some(best) = &self.best {
            write("best.json", &best.to_checkpoint().to_bytes()?)?;
        }
        Ok(())
    }
}

/// Runs one fine-tuning procedure on an adopted model. `hook` sees every step record as it is produced.
pub fn finetune(
    model: &mut AdoptedModel,
    cfg: &FinetuneConfig,
    data: &TransferData<'_>,
    mut hook: Option<&mut dyn FnMut(&StepRecord)>,
) -> Result<TrainRun> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(Error::Dataset("empty split".into()));
    }
    if data.train.class_count() != model.target_head().classes() {
        return Err(Error::Dataset(format!(
            "target data has {} classes, head has {}",
            data.train.class_count(),
            model.target_head().classes()
        )));
    }
    if cfg.mode == FinetuneMode::Fast && !model.target_head().init_mode().is_zero() {
        return Err(Error::Config("fast mode requires the adopted head to be zero-initialized".into()));
    }
    let joint = cfg.resolved_rates()?;
    let checkpoints = cfg.checkpoints()?;
    let mut sampler = BatchSampler::new(data.train, cfg.batch_size, cfg.sampler, derive_seed(cfg.seed, 11))?;
    let mut flip_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 12));
    let mut optimizer = OptimizerState::new(cfg.optimizer)?;
    let mut tracker = ValidationTracker::new();
    let mut adp = AdpLog::default();
    let mut steps = Vec::with_capacity(cfg.max_steps + 1);
    let mut notes = Vec::new();
    if cfg.hflip {
        notes.push("horizontal flip augmentation enabled".to_string());
    } else {
        notes.push("horizontal flip augmentation disabled".to_string());
    }

    let source_head = model.source_head.clone();
    let theta_source = model.theta_source.clone();
    let eval = DeploymentEval {
        target_test: data.test,
        source: data.source_test.map(|ds| (ds, &source_head)),
        theta_source: &theta_source,
    };

    let mut in_warmup = cfg.mode == FinetuneMode::WarmupThenJoint;
    let mut warmup_best: Option<f64> = None;
    let mut since_improvement = 0usize;
    let mut transition_step = None;
    let mut prev_theta = theta_source.clone();
    let mut last_record: Option<AdpRecord> = None;

    for t in 0..=cfg.max_steps {
        let net = &mut model.network;
        let theta = net.extractor.theta();
        let ramp_due = t > 0 && cfg.validation.due(t);
        let val_acc = if ramp_due || in_warmup || cfg.validate_every_step {
            Some(accuracy(&net.extractor, &net.head, data.val)?)
        } else {
            None
        };
        if ramp_due {
            tracker.observe(t, val_acc.expect("computed when due"), net);
        }
        let phase = if in_warmup { Phase::Warmup } else { Phase::Joint };
        if in_warmup {
            let acc = val_acc.expect("computed during warmup");
            match warmup_best {
                Some(best) if acc < best + cfg.warmup.min_improvement_pct / 100.0 => since_improvement += 1,
                _ => {
                    warmup_best = Some(acc);
                    since_improvement = 0;
                }
            }
            if since_improvement >= cfg.warmup.patience {
                in_warmup = false;
                transition_step = Some(t);
            }
        }
        if checkpoints.binary_search(&t).is_ok() {
            let record = match &last_record {
                Some(prev) if Some(prev.best_val_step) == tracker.best_step() => AdpRecord { step: t, ..prev.clone() },
                _ => record_checkpoint(&tracker, t, &eval)?,
            };
            adp.push(record.clone())?;
            last_record = Some(record);
        }
        let mut record = StepRecord {
            step: t,
            phase,
            loss: None,
            entropy: None,
            delta_sq: None,
            feature_grad_norm: None,
            w_fro: frobenius_norm(net.head.weight()),
            theta_dist: theta_distance(&theta, &theta_source),
            theta_step: theta_distance(&theta, &prev_theta),
            val_acc,
        };
        prev_theta = theta;

        if t < cfg.max_steps {
            let mut batch = sampler.next_batch(data.train)?;
            if cfg.hflip {
                batch.images = hflip_augment(&batch.images, 0.5, &mut flip_rng)?.0;
            }
            let frozen = cfg.mode == FinetuneMode::FeatureExtraction || in_warmup;
            let rates = if frozen {
                Rates {
                    alpha: joint.alpha,
                    beta: 0.0,
                }
            } else {
                joint
            };
            let mode = if frozen && !cfg.update_bn_when_frozen {
                ForwardMode::Inference
            } else {
                ForwardMode::Train
            };
            let out = train_step(
                &mut net.extractor,
                &mut net.head,
                &mut optimizer,
                &batch,
                rates,
                mode,
                cfg.temperature,
            )?;
            record.loss = Some(out.loss);
            record.entropy = Some(out.mean_entropy);
            record.delta_sq = Some(out.delta_sq);
            record.feature_grad_norm = Some(out.feature_grad_norm);
        }
        if let Some(h) = hook.as_mut() {
            h(&record);
        }
        steps.push(record);
    }
    model.network.extractor.clear_caches();
    if cfg.mode == FinetuneMode::WarmupThenJoint && transition_step.is_none() {
        notes.push("warmup stop rule never fired".to_string());
    }
    Ok(TrainRun {
        config: cfg.clone(),
        steps,
        adp,
        transition_step,
        best: tracker.snapshot().cloned(),
        notes,
    })
}
