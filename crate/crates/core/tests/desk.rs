//! Desk-scale transfer examples on the bundled digit subset: source digits
//! {0..4}, target digits {5..9}. Medians are taken over five seeds.

use std::sync::OnceLock;

use fast_transfer::adp::{accuracy, median};
use fast_transfer::config::bundled_corpus;
use fast_transfer::data::SamplerMode;
use fast_transfer::experiment::{run_parallel, DeskConfig, DeskSetup, SplitConfig};
use fast_transfer::nn::InitMode;
use fast_transfer::transfer::{
    derive_seed, finetune, metrics_csv, AdoptedModel, FinetuneConfig, FinetuneMode, Phase, PretrainConfig, TrainRun,
    TransferData,
};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn setup() -> &'static DeskSetup {
    static SETUP: OnceLock<DeskSetup> = OnceLock::new();
    SETUP.get_or_init(|| DeskSetup::desk().expect("desk setup"))
}

fn runs(cfgs: Vec<FinetuneConfig>, with_source: bool) -> Vec<TrainRun> {
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    run_parallel(&cfgs, jobs, |cfg| setup().run(cfg, with_source))
        .into_iter()
        .collect::<Result<_, _>>()
        .expect("run")
}

fn seeds_of(base: FinetuneConfig) -> Vec<FinetuneConfig> {
    SEEDS.iter().map(|&seed| FinetuneConfig { seed, ..base.clone() }).collect()
}

fn to_fifty(cfg: FinetuneConfig) -> FinetuneConfig {
    FinetuneConfig {
        max_steps: 50,
        extra_checkpoints: vec![50],
        ..cfg
    }
}

#[test]
fn pretrained_source_model_is_competent() {
    let acc = setup().source_accuracy().unwrap();
    assert!(acc > 0.9, "source accuracy {acc}");
}

#[test]
fn small_normal_init_travels_less_than_unit_normal() {
    let desk = DeskConfig::default();
    let at_50 = |std: f64| {
        let cfgs = seeds_of(to_fifty(desk.traditional(InitMode::Normal { std }, desk.c)));
        median(&runs(cfgs, false).iter().map(|r| r.steps[50].theta_dist).collect::<Vec<_>>())
    };
    let (wide, narrow) = (at_50(1.0), at_50(1e-8));
    assert!(narrow < wide, "median ‖θ⁵⁰ − θ_s*‖: σ=1e-8 {narrow}, σ=1 {wide}");
}

#[test]
fn fast_retains_more_source_accuracy_than_kaiming_traditional() {
    let desk = DeskConfig::default();
    let retention = |cfg: FinetuneConfig| {
        let rs = runs(seeds_of(to_fifty(cfg)), true);
        median(&rs.iter().map(|r| r.adp.at(50).unwrap().source_top1.unwrap()).collect::<Vec<_>>())
    };
    let fast = retention(desk.fast(desk.c, desk.c / 10.0));
    let traditional = retention(desk.traditional(InitMode::KaimingFanIn, desk.c));
    assert!(fast > traditional, "median source retention@50: fast {fast}, traditional {traditional}");
}

#[test]
fn zero_head_snapshot_scores_chance() {
    let s = setup();
    let m = AdoptedModel::adopt(&s.pretrained, 5, InitMode::ZERO, 0).unwrap();
    let acc = accuracy(m.extractor(), m.target_head(), &s.target_test).unwrap();
    let n = s.target_test.len() as f64;
    let half_width = 1.96 * (0.2f64 * 0.8 / n).sqrt();
    assert!((acc - 0.2).abs() <= half_width, "zero-head accuracy {acc}");
}

#[test]
fn fast_first_steps_grow_w_and_shrink_the_loss() {
    // One balanced batch covering a fixed 50-image subset, so the loss trajectory is comparable step to step.
    let s = setup();
    let idx: Vec<usize> = s.target_train.class_indices().iter().flat_map(|c| c[..10].to_vec()).collect();
    let train = s.target_train.subset(&idx).unwrap();
    let cfg = FinetuneConfig {
        mode: FinetuneMode::Fast,
        alpha: 0.1,
        beta: 0.01,
        batch_size: 50,
        max_steps: 11,
        sampler: SamplerMode::Balanced,
        seed: 3,
        ..FinetuneConfig::default()
    };
    let mut model = AdoptedModel::adopt(&s.pretrained, 5, InitMode::ZERO, 0).unwrap();
    let data = TransferData {
        train: &train,
        val: &s.target_val,
        test: &s.target_test,
        source_test: None,
    };
    let run = finetune(&mut model, &cfg, &data, None).unwrap();
    let first = &run.steps[..=10];
    assert_eq!(first[0].w_fro, 0.0);
    assert_eq!(first[1].theta_dist, 0.0, "auto-warmup: the first update leaves θ untouched");
    for w in first.windows(2) {
        assert!(w[1].w_fro >= w[0].w_fro, "‖W‖ shrank at step {}", w[1].step);
        assert!(w[1].loss.unwrap() <= w[0].loss.unwrap(), "loss rose at step {}", w[1].step);
    }
    assert!((first[0].entropy.unwrap() - 5f64.ln()).abs() < 1e-10);
    assert!((first[0].delta_sq.unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn warmup_freezes_theta_until_the_transition() {
    let desk = DeskConfig::default();
    let mut checked = 0;
    for run in runs(seeds_of(desk.warmup_then_joint(InitMode::KaimingFanIn, desk.c)), false) {
        let Some(t) = run.transition_step else { continue };
        checked += 1;
        for r in &run.steps {
            if r.step <= t {
                assert_eq!(r.theta_dist, 0.0, "θ moved at warmup step {}", r.step);
                assert_eq!(r.phase, Phase::Warmup);
            } else {
                assert!(r.theta_dist > 0.0, "θ frozen after the transition at step {}", r.step);
                assert_eq!(r.phase, Phase::Joint);
            }
        }
    }
    assert!(checked >= 3, "stop rule fired in only {checked} of 5 seeds");
}

#[test]
fn feature_extraction_leaves_the_source_path_alone() {
    let desk = DeskConfig::default();
    let cfg = FinetuneConfig {
        max_steps: 21,
        seed: 1,
        ..desk.feature_extraction(InitMode::KaimingFanIn, desk.c)
    };
    let s = setup();
    let before = s.source_accuracy().unwrap();
    let mut model = AdoptedModel::adopt(&s.pretrained, 5, cfg.init, derive_seed(cfg.seed, 20)).unwrap();
    let run = finetune(&mut model, &cfg, &s.data(true), None).unwrap();
    assert!(run.steps.iter().all(|r| r.theta_dist == 0.0));
    assert!(run.adp.last().unwrap().source_top1 == Some(before));
    assert_eq!(model.evaluate_source_retention(&s.source_test).unwrap(), before);
}

#[test]
fn identical_runs_are_bit_identical() {
    let desk = DeskConfig::default();
    let cfg = FinetuneConfig {
        max_steps: 21,
        seed: 4,
        ..desk.fast(desk.c, desk.c / 10.0)
    };
    let rs = runs(vec![cfg.clone(), cfg], true);
    assert_eq!(metrics_csv(&rs[0].steps), metrics_csv(&rs[1].steps));
    assert_eq!(rs[0].adp.to_csv(), rs[1].adp.to_csv());
}

#[test]
fn identical_task_fast_keeps_source_accuracy() {
    let corpus = bundled_corpus().unwrap();
    let pre = PretrainConfig {
        epochs: 2,
        ..PretrainConfig::default()
    };
    let s = DeskSetup::identical_task(&corpus, &SplitConfig::default(), &pre).unwrap();
    let before = s.source_accuracy().unwrap();
    let desk = DeskConfig::default();
    let cfg = FinetuneConfig {
        max_steps: 34,
        seed: 1,
        ..desk.fast(desk.c, desk.c / 10.0)
    };
    let run = s.run(&cfg, true).unwrap();
    let last = run.adp.last().unwrap();
    assert!(before > 0.85, "identical-task pretraining reached {before}");
    assert!(last.target_top1 > 0.8, "target ADP@34 {}", last.target_top1);
    assert!(last.source_top1.unwrap() >= before - 0.05, "source {} vs {before}", last.source_top1.unwrap());
}
