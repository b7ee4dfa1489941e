//! Desk-scale transfer experiments on a split handwritten-digit corpus:
//! source digits {0..4}, target digits {5..9}.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::adp::{fibonacci_checkpoints, median, AdpRecord};
use crate::data::{load_idx, stratified_split, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{InitMode, Network};
use crate::optim::OptimizerConfig;
use crate::transfer::{
    derive_seed, finetune, metrics_csv, pretrain, AdoptedModel, FinetuneConfig, FinetuneMode, PretrainConfig,
    PretrainReport, TrainRun, TransferData,
};

pub const SOURCE_DIGITS: [usize; 5] = [0, 1, 2, 3, 4];
pub const TARGET_DIGITS: [usize; 5] = [5, 6, 7, 8, 9];

/// The bundled 5000-image digit subset shipped in `data/mnist5k`.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k")
}

pub fn load_digits(dir: &Path) -> Result<LabeledDataset> {
    load_idx(&dir.join("images-idx3-ubyte.gz"), &dir.join("labels-idx1-ubyte.gz"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            val_fraction: 0.05,
            seed: 0,
        }
    }
}

type Splits = (LabeledDataset, LabeledDataset, LabeledDataset, LabeledDataset, LabeledDataset);

/// `(source_train, source_test, target_train, target_val, target_test)`.
fn task_splits(
    corpus: &LabeledDataset,
    source_classes: &[usize],
    target_classes: &[usize],
    split: &SplitConfig,
) -> Result<Splits> {
    let target = corpus.select_classes(target_classes)?;
    let (target_rest, target_test) = stratified_split(&target, split.test_fraction, derive_seed(split.seed, 2))?;
    let (target_train, target_val) = stratified_split(&target_rest, split.val_fraction, derive_seed(split.seed, 3))?;
    if source_classes == target_classes {
        return Ok((target_rest, target_test.clone(), target_train, target_val, target_test));
    }
    let source = corpus.select_classes(source_classes)?;
    let (source_train, source_test) = stratified_split(&source, split.test_fraction, derive_seed(split.seed, 1))?;
    Ok((source_train, source_test, target_train, target_val, target_test))
}

/// Source/target splits and the pretrained source model.
#[derive(Debug, Clone)]
pub struct DeskSetup {
    pub source_train: LabeledDataset,
    pub source_test: LabeledDataset,
    pub target_train: LabeledDataset,
    pub target_val: LabeledDataset,
    pub target_test: LabeledDataset,
    pub pretrained: Network,
    pub pretrain_report: PretrainReport,
}

impl DeskSetup {
    /// Splits `corpus` into the two tasks and pretrains on the source task.
    /// Equal class lists give the identical-task pair of [`DeskSetup::identical_task`].
    pub fn build(
        corpus: &LabeledDataset,
        source_classes: &[usize],
        target_classes: &[usize],
        split: &SplitConfig,
        pretrain_cfg: &PretrainConfig,
    ) -> Result<Self> {
        let splits = task_splits(corpus, source_classes, target_classes, split)?;
        let (pretrained, pretrain_report) = pretrain(&splits.0, pretrain_cfg)?;
        Ok(Self::assemble(splits, pretrained, pretrain_report))
    }

    /// Same splits as [`DeskSetup::build`] around an already pretrained network.
    pub fn with_pretrained(
        corpus: &LabeledDataset,
        source_classes: &[usize],
        target_classes: &[usize],
        split: &SplitConfig,
        pretrained: Network,
    ) -> Result<Self> {
        let splits = task_splits(corpus, source_classes, target_classes, split)?;
        if pretrained.head.classes() != splits.0.class_count() {
            return Err(Error::Config(format!(
                "pretrained head has {} classes, source task has {}",
                pretrained.head.classes(),
                splits.0.class_count()
            )));
        }
        let report = PretrainReport {
            losses: Vec::new(),
            train_accuracy: crate::adp::accuracy(&pretrained.extractor, &pretrained.head, &splits.0)?,
        };
        Ok(Self::assemble(splits, pretrained, report))
    }

    /// Identical-task pair: source and target are the same classes and share one
    /// train/test split, so no test image is ever trained on.
    pub fn identical_task(corpus: &LabeledDataset, split: &SplitConfig, pretrain_cfg: &PretrainConfig) -> Result<Self> {
        let all: Vec<usize> = (0..corpus.class_count()).collect();
        Self::build(corpus, &all, &all, split, pretrain_cfg)
    }

    fn assemble(splits: Splits, pretrained: Network, pretrain_report: PretrainReport) -> Self {
        let (source_train, source_test, target_train, target_val, target_test) = splits;
        Self {
            source_train,
            source_test,
            target_train,
            target_val,
            target_test,
            pretrained,
            pretrain_report,
        }
    }

    /// The default desk task on the bundled corpus.
    pub fn desk() -> Result<Self> {
        let corpus = load_digits(&bundled_data_dir())?;
        Self::build(
            &corpus,
            &SOURCE_DIGITS,
            &TARGET_DIGITS,
            &SplitConfig::default(),
            &PretrainConfig::default(),
        )
    }

    pub fn data(&self, with_source: bool) -> TransferData<'_> {
        TransferData {
            train: &self.target_train,
            val: &self.target_val,
            test: &self.target_test,
            source_test: with_source.then_some(&self.source_test),
        }
    }

    pub fn source_accuracy(&self) -> Result<f64> {
        crate::adp::accuracy(&self.pretrained.extractor, &self.pretrained.head, &self.source_test)
    }

    /// Adopts the pretrained model with `cfg.init` and fine-tunes it.
    pub fn run(&self, cfg: &FinetuneConfig, with_source: bool) -> Result<TrainRun> {
        let classes = self.target_train.class_count();
        let mut model = AdoptedModel::adopt(&self.pretrained, classes, cfg.init, derive_seed(cfg.seed, 20))?;
        finetune(&mut model, cfg, &self.data(with_source), None)
    }
}

/// Runs configurations on a bounded pool of scoped threads, returning results in input order.
pub fn run_parallel<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("poisoned");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("poisoned")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("poisoned")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Memoizes runs by their full configuration so scenarios can share them.
pub struct RunCache<'a> {
    setup: &'a DeskSetup,
    jobs: usize,
    runs: HashMap<String, Arc<TrainRun>>,
}

fn cache_key(cfg: &FinetuneConfig, with_source: bool) -> String {
    format!("{with_source}:{}", serde_json::to_string(cfg).expect("config serializes"))
}

impl<'a> RunCache<'a> {
    pub fn new(setup: &'a DeskSetup, jobs: usize) -> Self {
        Self {
            setup,
            jobs,
            runs: HashMap::new(),
        }
    }

    pub fn setup(&self) -> &DeskSetup {
        self.setup
    }

    /// Runs every configuration not yet cached, in parallel.
    pub fn ensure(&mut self, cfgs: &[FinetuneConfig], with_source: bool) -> Result<()> {
        let mut todo: Vec<FinetuneConfig> = Vec::new();
        for c in cfgs {
            if !self.runs.contains_key(&cache_key(c, with_source)) && !todo.contains(c) {
                todo.push(c.clone());
            }
        }
        let setup = self.setup;
        let results = run_parallel(&todo, self.jobs, |c| setup.run(c, with_source));
        for (c, r) in todo.iter().zip(results) {
            self.runs.insert(cache_key(c, with_source), Arc::new(r?));
        }
        Ok(())
    }

    pub fn get(&mut self, cfg: &FinetuneConfig, with_source: bool) -> Result<Arc<TrainRun>> {
        self.ensure(std::slice::from_ref(cfg), with_source)?;
        self.runs
            .get(&cache_key(cfg, with_source))
            .cloned()
            .ok_or_else(|| Error::Eval("run missing from cache".into()))
    }

    pub fn seeds(&mut self, base: &FinetuneConfig, seeds: &[u64], with_source: bool) -> Result<Vec<Arc<TrainRun>>> {
        let cfgs: Vec<FinetuneConfig> = seeds
            .iter()
            .map(|&seed| FinetuneConfig { seed, ..base.clone() })
            .collect();
        self.ensure(&cfgs, with_source)?;
        Ok(cfgs
            .iter()
            .map(|c| Arc::clone(&self.runs[&cache_key(c, with_source)]))
            .collect())
    }
}

/// Shared knobs of the desk behavioral scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskConfig {
    /// Reference learning rate `c` for momentum SGD.
    pub c: f64,
    /// Reference learning rate for Adam.
    pub adam_c: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            c: 0.1,
            adam_c: 3e-3,
            max_steps: 89,
            batch_size: 20,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl DeskConfig {
    fn base(&self, mode: FinetuneMode, init: InitMode, alpha: f64, beta: f64) -> FinetuneConfig {
        FinetuneConfig {
            mode,
            alpha,
            beta,
            init,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            ..FinetuneConfig::default()
        }
    }

    pub fn fast(&self, alpha: f64, beta: f64) -> FinetuneConfig {
        self.base(FinetuneMode::Fast, InitMode::ZERO, alpha, beta)
    }

    pub fn traditional(&self, init: InitMode, lr: f64) -> FinetuneConfig {
        self.base(FinetuneMode::Traditional, init, lr, lr)
    }

    pub fn joint(&self, init: InitMode, alpha: f64, beta: f64) -> FinetuneConfig {
        self.base(FinetuneMode::Joint, init, alpha, beta)
    }

    pub fn warmup_then_joint(&self, init: InitMode, lr: f64) -> FinetuneConfig {
        self.base(FinetuneMode::WarmupThenJoint, init, lr, lr)
    }

    pub fn feature_extraction(&self, init: InitMode, alpha: f64) -> FinetuneConfig {
        self.base(FinetuneMode::FeatureExtraction, init, alpha, 0.0)
    }

    pub fn with_adam(cfg: FinetuneConfig) -> FinetuneConfig {
        FinetuneConfig {
            optimizer: OptimizerConfig::adam(),
            ..cfg
        }
    }

    /// The deployment checkpoint closest to the middle of training, earlier on ties.
    pub fn mid_checkpoint(&self) -> Result<usize> {
        let half = self.max_steps as f64 / 2.0;
        let cps = fibonacci_checkpoints(self.max_steps)?;
        Ok(cps
            .iter()
            .copied()
            .min_by(|a, b| (*a as f64 - half).abs().total_cmp(&(*b as f64 - half).abs()))
            .expect("non-empty"))
    }
}

/// Result of one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn median_at(runs: &[Arc<TrainRun>], step: usize, f: impl Fn(&AdpRecord) -> Option<f64>) -> Result<f64> {
    let v: Vec<f64> = runs
        .iter()
        .map(|r| {
            r.adp
                .at(step)
                .and_then(&f)
                .ok_or_else(|| Error::Eval(format!("checkpoint {step} missing a metric")))
        })
        .collect::<Result<_>>()?;
    Ok(median(&v))
}

fn target_top1(r: &AdpRecord) -> Option<f64> {
    Some(r.target_top1)
}

fn source_top1(r: &AdpRecord) -> Option<f64> {
    r.source_top1
}

fn final_step(runs: &[Arc<TrainRun>]) -> Result<usize> {
    runs.first()
        .and_then(|r| r.adp.last())
        .map(|r| r.step)
        .ok_or_else(|| Error::Eval("no checkpoints".into()))
}

/// Init sweep: smaller σ never hurts target ADP at checkpoint 21 nor source retention at checkpoint 50.
pub fn init_sweep(cache: &mut RunCache<'_>, desk: &DeskConfig) -> Result<CriterionOutcome> {
    let mut tgt = Vec::new();
    let mut src = Vec::new();
    for std in [1.0, 1e-2, 1e-8] {
        let cfg = FinetuneConfig {
            extra_checkpoints: vec![50],
            ..desk.traditional(InitMode::Normal { std }, desk.c)
        };
        let runs = cache.seeds(&cfg, &desk.seeds, true)?;
        tgt.push(median_at(&runs, 21, target_top1)?);
        src.push(median_at(&runs, 50, source_top1)?);
    }
    let monotone = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
    Ok(CriterionOutcome {
        id: 8,
        name: "init sweep".into(),
        passed: monotone(&tgt) && monotone(&src),
        detail: format!(
            "σ = 1, 1e-2, 1e-8: median target ADP@21 {tgt:.3?}, median source retention@50 {src:.3?}"
        ),
    })
}

/// Frozen head vs jointly trained head, both from Normal(1e-2).
pub fn frozen_head(cache: &mut RunCache<'_>, desk: &DeskConfig) -> Result<CriterionOutcome> {
    let init = InitMode::Normal { std: 1e-2 };
    let both = cache.seeds(&desk.traditional(init, desk.c), &desk.seeds, false)?;
    let joint = median_at(&both, 55, target_top1)?;
    let frozen_runs = cache.seeds(&desk.joint(init, 0.0, desk.c), &desk.seeds, false)?;
    let frozen = median_at(&frozen_runs, 55, target_top1)?;
    Ok(CriterionOutcome {
        id: 9,
        name: "frozen-W heterogeneity".into(),
        passed: joint > frozen,
        detail: format!("median target ADP@55: α=β {joint:.3}, α=0 {frozen:.3}"),
    })
}

/// Validation accuracy drops right after the warmup transition; FAST shows no step-to-step drop above 2 points after step 10.
pub fn warmup_overshoot(cache: &mut RunCache<'_>, desk: &DeskConfig) -> Result<CriterionOutcome> {
    let warm = FinetuneConfig {
        validate_every_step: true,
        ..desk.warmup_then_joint(InitMode::KaimingFanIn, desk.c)
    };
    let runs = cache.seeds(&warm, &desk.seeds, false)?;
    let mut drops = 0;
    let mut transitions = Vec::new();
    for run in &runs {
        let Some(t) = run.transition_step else {
            transitions.push("none".to_string());
            continue;
        };
        let acc = |s: usize| run.steps.get(s).and_then(|r| r.val_acc);
        match (acc(t), acc(t + 1)) {
            (Some(before), Some(after)) => {
                transitions.push(format!("{t}:{before:.2}->{after:.2}"));
                if after < before {
                    drops += 1;
                }
            }
            _ => transitions.push(format!("{t}:end")),
        }
    }
    let fast = FinetuneConfig {
        validate_every_step: true,
        ..desk.fast(desk.c, desk.c / 10.0)
    };
    let fast_runs = cache.seeds(&fast, &desk.seeds, false)?;
    let mut worst = 0.0f64;
    for run in &fast_runs {
        let vals: Vec<f64> = run.steps.iter().skip(10).filter_map(|r| r.val_acc).collect();
        for w in vals.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    let needed = (desk.seeds.len() * 3).div_ceil(5);
    Ok(CriterionOutcome {
        id: 10,
        name: "warmup overshoot".into(),
        passed: drops >= needed && worst <= 0.02,
        detail: format!(
            "warmup drops after transition in {drops}/{} seeds [{}]; worst FAST step drop after step 10: {:.1} pts",
            runs.len(),
            transitions.join(", "),
            worst * 100.0
        ),
    })
}

/// Zero init with α = c, β = c/10 against both symmetric settings.
pub fn asymmetric_rates(cache: &mut RunCache<'_>, desk: &DeskConfig) -> Result<CriterionOutcome> {
    let c = desk.c;
    let asym = cache.seeds(&desk.fast(c, c / 10.0), &desk.seeds, false)?;
    let slow = cache.seeds(&desk.fast(c / 10.0, c / 10.0), &desk.seeds, false)?;
    let fast_sym = cache.seeds(&desk.fast(c, c), &desk.seeds, false)?;
    let mut early_ok = true;
    let mut early = Vec::new();
    for step in fibonacci_checkpoints(desk.max_steps.min(21))? {
        let a = median_at(&asym, step, target_top1)?;
        let s = median_at(&slow, step, target_top1)?;
        early_ok &= a >= s;
        early.push(format!("{step}:{a:.3}/{s:.3}"));
    }
    let last = final_step(&asym)?;
    let a = median_at(&asym, last, target_top1)?;
    let f = median_at(&fast_sym, last, target_top1)?;
    Ok(CriterionOutcome {
        id: 11,
        name: "asymmetric learning rates".into(),
        passed: early_ok && a >= f,
        detail: format!(
            "(c,c/10) vs (c/10,c/10) by checkpoint [{}]; final@{last}: (c,c/10) {a:.3} vs (c,c) {f:.3}",
            early.join(" ")
        ),
    })
}

/// The Adam/SGD gap at mid-training is smaller with a zero head than with a Kaiming head.
pub fn optimizer_gap(cache: &mut RunCache<'_>, desk: &DeskConfig) -> Result<CriterionOutcome> {
    let mid = desk.mid_checkpoint()?;
    let (c, ca) = (desk.c, desk.adam_c);
    let mut gap = |sgd: FinetuneConfig, adam: FinetuneConfig| -> Result<(f64, f64)> {
        let s = median_at(&cache.seeds(&sgd, &desk.seeds, false)?, mid, target_top1)?;
        let a = median_at(&cache.seeds(&adam, &desk.seeds, false)?, mid, target_top1)?;
        Ok((s, a))
    };
    let (fs, fa) = gap(desk.fast(c, c / 10.0), DeskConfig::with_adam(desk.fast(ca, ca / 10.0)))?;
    let (ks, ka) = gap(
        desk.traditional(InitMode::KaimingFanIn, c),
        DeskConfig::with_adam(desk.traditional(InitMode::KaimingFanIn, ca)),
    )?;
    let (gf, gk) = ((fa - fs).abs(), (ka - ks).abs());
    Ok(CriterionOutcome {
        id: 12,
        name: "optimizer gap".into(),
        passed: gf < gk,
        detail: format!(
            "median ADP@{mid}: FAST sgd {fs:.3} adam {fa:.3} (gap {gf:.3}); Kaiming sgd {ks:.3} adam {ka:.3} (gap {gk:.3})"
        ),
    })
}

/// Final backbone travel: FAST below traditional fine-tuning at both rates, feature extraction at zero.
pub fn distance_ordering(cache: &mut RunCache<'_>, desk: &DeskConfig) -> Result<CriterionOutcome> {
    let mean_dist = |runs: Vec<Arc<TrainRun>>| -> Result<f64> {
        let v: Vec<f64> = runs
            .iter()
            .map(|r| r.adp.last().map(|x| x.theta_dist).ok_or_else(|| Error::Eval("no checkpoints".into())))
            .collect::<Result<_>>()?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [desk.c, desk.c / 10.0] {
        let f = mean_dist(cache.seeds(&desk.fast(alpha, alpha / 10.0), &desk.seeds, false)?)?;
        let t = mean_dist(cache.seeds(&desk.traditional(InitMode::KaimingFanIn, alpha), &desk.seeds, false)?)?;
        ok &= f < t;
        parts.push(format!("α={alpha}: FAST {f:.4} vs traditional {t:.4}"));
    }
    let fe = mean_dist(cache.seeds(
        &desk.feature_extraction(InitMode::KaimingFanIn, desk.c),
        &desk.seeds,
        false,
    )?)?;
    ok &= fe == 0.0;
    parts.push(format!("feature extraction {fe}"));
    Ok(CriterionOutcome {
        id: 13,
        name: "distance ordering".into(),
        passed: ok,
        detail: parts.join("; "),
    })
}

/// Re-runs one configuration from scratch and compares the emitted CSVs byte for byte.
pub fn determinism(setup: &DeskSetup, desk: &DeskConfig) -> Result<CriterionOutcome> {
    let cfg = FinetuneConfig {
        seed: desk.seeds.first().copied().unwrap_or(1),
        extra_checkpoints: vec![50],
        ..desk.fast(desk.c, desk.c / 10.0)
    };
    let runs = run_parallel(&[0, 1], 2, |_| setup.run(&cfg, true));
    let mut csvs = Vec::new();
    for r in runs {
        let r = r?;
        csvs.push((r.adp.to_csv(), metrics_csv(&r.steps)));
    }
    Ok(CriterionOutcome {
        id: 14,
        name: "determinism".into(),
        passed: csvs[0] == csvs[1],
        detail: format!(
            "two concurrent runs of seed {}: ADP CSV {} bytes, metrics CSV {} bytes, identical: {}",
            cfg.seed,
            csvs[0].0.len(),
            csvs[0].1.len(),
            csvs[0] == csvs[1]
        ),
    })
}

/// Runs criteria 8 to 14 and returns one outcome per criterion.
pub fn behavioral_suite(setup: &DeskSetup, desk: &DeskConfig, jobs: usize) -> Result<Vec<CriterionOutcome>> {
    let mut cache = RunCache::new(setup, jobs);
    Ok(vec![
        init_sweep(&mut cache, desk)?,
        frozen_head(&mut cache, desk)?,
        warmup_overshoot(&mut cache, desk)?,
        asymmetric_rates(&mut cache, desk)?,
        optimizer_gap(&mut cache, desk)?,
        distance_ordering(&mut cache, desk)?,
        determinism(setup, desk)?,
    ])
}

/// Median (over seeds) of the best validation accuracy seen on the ramp schedule.
pub fn median_best_val(runs: &[Arc<TrainRun>]) -> f64 {
    let best: Vec<f64> = runs
        .iter()
        .map(|r| r.steps.iter().filter_map(|s| s.val_acc).fold(0.0, f64::max))
        .collect();
    median(&best)
}

/// Picks the rate whose traditional fine-tuning baseline (Kaiming head) reaches
/// the highest median validation accuracy; ties go to the smaller rate.
pub fn select_rate(
    cache: &mut RunCache<'_>,
    desk: &DeskConfig,
    candidates: &[f64],
    optimizer: OptimizerConfig,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut scores = Vec::new();
    for &lr in candidates {
        let cfg = FinetuneConfig {
            optimizer,
            ..desk.traditional(InitMode::KaimingFanIn, lr)
        };
        let runs = cache.seeds(&cfg, &desk.seeds, false)?;
        scores.push((lr, median_best_val(&runs)));
    }
    let mut best = scores
        .first()
        .copied()
        .ok_or_else(|| Error::Eval("no candidate rates".into()))?;
    for &(lr, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && lr < best.0) {
            best = (lr, s);
        }
    }
    Ok((best.0, scores))
}
