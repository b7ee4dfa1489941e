//! Numerical property suite: the analytic acceptance checks plus the
//! invariants of every module, each reported as pass/fail with a detail line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::adp::{fibonacci_checkpoints, validation_due};
use crate::data::{stratified_split_indices, synth_blobs, Batch, BatchSampler, SamplerMode};
use crate::error::Result;
use crate::experiment::CriterionOutcome;
use crate::nn::{ClassifierHead, FeatureExtractor, ForwardMode, InitMode, LayerSpec, Network};
use crate::optim::{OptimizerConfig, OptimizerState, ParamGroup, ParamSlot};
use crate::tensor::{entropy_rows, nll_loss, one_hot, prediction_error, softmax_rows, Tensor};
use crate::transfer::{train_step, Rates};

fn outcome(id: u32, name: &str, passed: bool, detail: String) -> CriterionOutcome {
    CriterionOutcome {
        id,
        name: name.to_string(),
        passed,
        detail,
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Small architectures (each below 5·10³ parameters) used by the random-model checks.
pub fn small_architectures() -> Vec<(Vec<usize>, Vec<LayerSpec>)> {
    vec![
        (
            vec![6],
            vec![
                LayerSpec::Dense { inputs: 6, outputs: 8 },
                LayerSpec::Relu,
                LayerSpec::BatchNorm { channels: 8 },
                LayerSpec::Dense { inputs: 8, outputs: 7 },
                LayerSpec::Relu,
            ],
        ),
        (
            vec![1, 8, 8],
            vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::BatchNorm { channels: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 48, outputs: 6 },
            ],
        ),
        (
            vec![2, 7, 7],
            vec![
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 4,
                    kernel: 3,
                    stride: 2,
                    padding: 0,
                },
                LayerSpec::Relu,
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::AvgPoolGlobal,
                LayerSpec::Dense { inputs: 4, outputs: 5 },
                LayerSpec::Relu,
            ],
        ),
    ]
}

fn balanced_labels(n: usize, per_class: usize) -> Vec<usize> {
    (0..n * per_class).map(|i| i % n).collect()
}

/// Zero head: every prediction is `1/N` and the mean entropy is `ln N`.
pub fn zero_init_uniformity() -> Result<CriterionOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_p = 0.0f64;
    let mut worst_h = 0.0f64;
    for (arch, (shape, specs)) in small_architectures().into_iter().enumerate() {
        for n in [2usize, 5, 10] {
            let mut fe = FeatureExtractor::new(&shape, specs.clone(), rng.gen())?;
            let mut batch_shape = vec![4 + arch];
            batch_shape.extend_from_slice(&shape);
            let x = random_tensor(&batch_shape, &mut rng).scale(3.0);
            let a = fe.forward(&x, ForwardMode::Train)?;
            let head = ClassifierHead::new(n, fe.output_dim(), InitMode::ZERO, 0);
            let p = softmax_rows(&head.forward(&a)?, 1.0)?;
            worst_p = p.data().iter().fold(worst_p, |w, &v| w.max((v - 1.0 / n as f64).abs()));
            let h = entropy_rows(&p)?;
            let mean = h.data().iter().sum::<f64>() / h.len() as f64;
            worst_h = worst_h.max((mean - (n as f64).ln()).abs());
        }
    }
    Ok(outcome(
        1,
        "zero-init uniformity",
        worst_p <= 1e-6 && worst_h <= 1e-6,
        format!("max |ŷ − 1/N| = {worst_p:.2e}, max |H̄ − ln N| = {worst_h:.2e}"),
    ))
}

/// Zero head on a balanced batch: `(1/M) Σ ‖Δ_m‖² = 1 − 1/N`.
pub fn initial_error_variance() -> Result<CriterionOutcome> {
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [2usize, 5, 10, 100] {
        let labels = balanced_labels(n, 3);
        let y = one_hot(&labels, n)?;
        let p = softmax_rows(&Tensor::zeros(&[labels.len(), n]), 1.0)?;
        let delta = prediction_error(&y, &p)?;
        let v = delta.data().iter().map(|d| d * d).sum::<f64>() / labels.len() as f64;
        let err = (v - (1.0 - 1.0 / n as f64)).abs();
        ok &= err <= 1e-6;
        parts.push(format!("N={n}: {v:.9}"));
    }
    Ok(outcome(2, "balanced-batch initial error variance", ok, parts.join(", ")))
}

fn stall_norm(epsilon: f64, seed: u64) -> Result<(f64, f64)> {
    let (shape, specs) = small_architectures().swap_remove(1);
    let mut fe = FeatureExtractor::new(&shape, specs, seed)?;
    let theta0 = fe.theta();
    let mut head = ClassifierHead::new(5, fe.output_dim(), InitMode::Zero { epsilon }, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = balanced_labels(5, 2);
    let batch = Batch {
        indices: (0..labels.len()).collect(),
        images: random_tensor(&[labels.len(), 1, 8, 8], &mut rng),
        targets: one_hot(&labels, 5)?,
        labels,
    };
    let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.9))?;
    let out = train_step(
        &mut fe,
        &mut head,
        &mut opt,
        &batch,
        Rates { alpha: 0.1, beta: 0.1 },
        ForwardMode::Train,
        1.0,
    )?;
    let moved = fe
        .theta()
        .iter()
        .zip(&theta0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok((out.feature_grad_norm, moved))
}

/// Zero head stalls backpropagation into the extractor at step 0.
pub fn auto_warmup_stall() -> Result<CriterionOutcome> {
    let (g0, moved0) = stall_norm(0.0, 7)?;
    let (g8, _) = stall_norm(1e-8, 7)?;
    Ok(outcome(
        3,
        "auto-warmup stall",
        g0 == 0.0 && moved0 == 0.0 && g8 <= 1e-6,
        format!("ε=0: ‖∂ℓ/∂A‖ = {g0:e}, ‖θ¹ − θ⁰‖ = {moved0:e}; ε=1e-8: ‖∂ℓ/∂A‖ = {g8:.2e}"),
    ))
}

/// The first head update equals per-class feature sums minus the shared batch-mean term.
pub fn prototype_identity() -> Result<CriterionOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let n = [2usize, 3, 5, 10][trial % 4];
        let per = 1 + trial % 3;
        let (shape, specs) = small_architectures().swap_remove(trial % 3);
        let mut fe = FeatureExtractor::new(&shape, specs, rng.gen())?;
        let d = fe.output_dim();
        let mut head = ClassifierHead::new(n, d, InitMode::ZERO, 0);
        let labels = balanced_labels(n, per);
        let m = labels.len();
        let mut batch_shape = vec![m];
        batch_shape.extend_from_slice(&shape);
        let batch = Batch {
            indices: (0..m).collect(),
            images: random_tensor(&batch_shape, &mut rng),
            targets: one_hot(&labels, n)?,
            labels: labels.clone(),
        };
        let alpha = rng.gen_range(0.01..1.0);
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.0))?;
        let out = train_step(
            &mut fe,
            &mut head,
            &mut opt,
            &batch,
            Rates { alpha, beta: 0.05 },
            ForwardMode::Train,
            1.0,
        )?;
        let a = &out.features;
        for class in 0..n {
            for j in 0..d {
                let own: f64 = (0..m).filter(|&i| labels[i] == class).map(|i| a.row(i)[j]).sum();
                let all: f64 = (0..m).map(|i| a.row(i)[j]).sum();
                let expected = alpha / m as f64 * own - alpha / (m * n) as f64 * all;
                worst = worst.max((head.weight().row(class)[j] - expected).abs());
            }
        }
    }
    Ok(outcome(
        4,
        "first-update prototype identity",
        worst <= 1e-10,
        format!("max |W¹ − decomposition| over 20 random balanced batches = {worst:.2e}"),
    ))
}

/// `‖softmax(z)‖² ≥ 1/N`, with equality only for constant rows.
pub fn softmax_norm_bound() -> Result<CriterionOutcome> {
    const ROWS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0usize;
    let mut false_equalities = 0usize;
    let mut near_constant = 0usize;
    let mut min_gap = f64::INFINITY;
    for n in [2usize, 5, 100] {
        let mut z = Vec::with_capacity(ROWS * n);
        for _ in 0..ROWS {
            let scale: f64 = rng.gen_range(0.01..5.0);
            let shift: f64 = rng.gen_range(-50.0..50.0);
            z.extend((0..n).map(|_| shift + scale * rng.sample::<f64, _>(StandardNormal)));
        }
        let logits = Tensor::new(vec![ROWS, n], z)?;
        let p = softmax_rows(&logits, 1.0)?;
        for i in 0..ROWS {
            let gap = p.row(i).iter().map(|v| v * v).sum::<f64>() - 1.0 / n as f64;
            if gap < -1e-15 {
                violations += 1;
            }
            // A row counts as constant at the 1e-9 resolution when its first-order
            // gap sum((z - mean)^2) / N^2 is below twice the tolerance.
            let row = logits.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let spread = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n * n) as f64;
            if spread <= 2e-9 {
                near_constant += 1;
            } else if gap.abs() <= 1e-9 {
                false_equalities += 1;
            }
            min_gap = min_gap.min(gap);
        }
        let constant = Tensor::full(&[16, n], rng.gen_range(-10.0..10.0));
        let p = softmax_rows(&constant, 1.0)?;
        for i in 0..16 {
            let gap = p.row(i).iter().map(|v| v * v).sum::<f64>() - 1.0 / n as f64;
            if gap.abs() > 1e-9 {
                violations += 1;
            }
        }
    }
    Ok(outcome(
        5,
        "softmax norm bound",
        violations == 0 && false_equalities == 0,
        format!(
            "3×10⁵ random rows: {violations} violations, {false_equalities} non-constant rows at equality ({near_constant} numerically constant), min gap {min_gap:.2e}"
        ),
    ))
}

/// Batch-mean NLL through an exact log-sum-exp. The log floor of `nll_loss`
/// bends the loss when a true-class probability drops near 1e-9, which the
/// analytic gradient (of the unfloored loss) does not see.
fn full_model_loss(fe: &mut FeatureExtractor, head: &ClassifierHead, x: &Tensor, y: &Tensor) -> Result<f64> {
    let a = fe.forward(x, ForwardMode::Train)?;
    let z = head.forward(&a)?;
    let mut total = 0.0;
    for m in 0..z.rows() {
        let row = z.row(m);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += y.row(m).iter().zip(row).map(|(t, v)| t * (lse - v)).sum::<f64>();
    }
    Ok(total / z.rows() as f64)
}

/// Relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between analytic and central-difference gradients
/// of the full model (extractor, head, softmax and loss).
pub fn gradient_check(shape: &[usize], specs: Vec<LayerSpec>, seed: u64) -> Result<(usize, f64)> {
    gradient_check_with_step(shape, specs, seed, 1e-5)
}

/// [`gradient_check`] with central-difference step `h`.
pub fn gradient_check_with_step(shape: &[usize], specs: Vec<LayerSpec>, seed: u64, h: f64) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fe = FeatureExtractor::new(shape, specs, rng.gen())?;
    // Zero biases behind a dead unit sit exactly on a ReLU kink, where central
    // differences disagree with any subgradient; jitter θ off such points.
    let jittered: Vec<f64> = fe
        .theta()
        .iter()
        .map(|t| t + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    fe.set_theta(&jittered)?;
    let n = 4;
    let mut head = ClassifierHead::new(n, fe.output_dim(), InitMode::Normal { std: 0.5 }, rng.gen());
    let labels = balanced_labels(n, 2);
    let mut batch_shape = vec![labels.len()];
    batch_shape.extend_from_slice(shape);
    let x = random_tensor(&batch_shape, &mut rng);
    let y = one_hot(&labels, n)?;

    let a = fe.forward(&x, ForwardMode::Train)?;
    let p = softmax_rows(&head.forward(&a)?, 1.0)?;
    let delta = prediction_error(&y, &p)?;
    let (grad_w, grad_a) = head.backward(&a, &delta)?;
    fe.backward(&grad_a)?;
    let mut analytic = fe.grads_flat();
    analytic.extend_from_slice(grad_w.data());

    let theta = fe.theta();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        fe.set_theta(&t)?;
        let up = full_model_loss(&mut fe, &head, &x, &y)?;
        t[i] = theta[i] - h;
        fe.set_theta(&t)?;
        let down = full_model_loss(&mut fe, &head, &x, &y)?;
        numeric.push((up - down) / (2.0 * h));
    }
    fe.set_theta(&theta)?;
    for i in 0..head.weight().len() {
        let orig = head.weight().data()[i];
        head.weight_mut().data_mut()[i] = orig + h;
        let up = full_model_loss(&mut fe, &head, &x, &y)?;
        head.weight_mut().data_mut()[i] = orig - h;
        let down = full_model_loss(&mut fe, &head, &x, &y)?;
        head.weight_mut().data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * h));
    }
    let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok((analytic.len(), diff / na.max(nn).max(1e-300)))
}

pub fn gradient_oracle() -> Result<CriterionOutcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (shape, specs)) in small_architectures().into_iter().enumerate() {
        let (params, rel) = gradient_check(&shape, specs, 40 + i as u64)?;
        ok &= rel < 1e-4 && params <= 5000;
        parts.push(format!("arch {i} ({params} params): {rel:.2e}"));
    }
    Ok(outcome(6, "gradient oracle", ok, parts.join(", ")))
}

/// Zero head: `δ` is `1 − 1/N` on the true class and `−1/N` elsewhere, exactly.
pub fn class_scaling_delta() -> Result<CriterionOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    for n in [2usize, 3, 5, 10, 100] {
        let d = 9;
        let head = ClassifierHead::new(n, d, InitMode::ZERO, 0);
        let a = random_tensor(&[2 * n, d], &mut rng).scale(rng.gen_range(0.1..100.0));
        let labels = balanced_labels(n, 2);
        let delta = prediction_error(&one_hot(&labels, n)?, &softmax_rows(&head.forward(&a)?, 1.0)?)?;
        for (i, &l) in labels.iter().enumerate() {
            for (j, &v) in delta.row(i).iter().enumerate() {
                let expected = if j == l { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 };
                checked += 1;
                if v != expected {
                    mismatches += 1;
                }
            }
        }
    }
    Ok(outcome(
        7,
        "class-scaling δ",
        mismatches == 0,
        format!("{checked} entries checked, {mismatches} differ from 1 − 1/N or −1/N"),
    ))
}

/// Criteria 1 to 7.
pub fn analytic_criteria() -> Result<Vec<CriterionOutcome>> {
    Ok(vec![
        zero_init_uniformity()?,
        initial_error_variance()?,
        auto_warmup_stall()?,
        prototype_identity()?,
        softmax_norm_bound()?,
        gradient_oracle()?,
        class_scaling_delta()?,
    ])
}

/// One named module invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn prop(name: &'static str, passed: bool, detail: String) -> PropertyOutcome {
    PropertyOutcome { name, passed, detail }
}

fn softmax_shift_invariance() -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = random_tensor(&[200, 7], &mut rng).scale(4.0);
    let shifted = Tensor::new(
        vec![200, 7],
        z.data()
            .chunks(7)
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |v| v + (i as f64 - 100.0) * 0.37))
            .collect(),
    )?;
    let a = softmax_rows(&z, 1.0)?;
    let b = softmax_rows(&shifted, 1.0)?;
    let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(prop("softmax shift invariance", worst <= 1e-12, format!("max diff {worst:.2e}")))
}

fn taylor_regime() -> PropertyOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let worst = (0..100_000)
        .map(|_| {
            let z: f64 = rng.gen_range(-1e-4..=1e-4);
            (z.exp() - (z + 1.0)).abs()
        })
        .fold(0.0, f64::max);
    prop("Taylor regime |e^z − (1+z)| ≤ 1e-8 for |z| ≤ 1e-4", worst <= 1e-8, format!("max {worst:.2e}"))
}

fn loss_gradient_fd() -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, n) = (6, 4);
    let z = random_tensor(&[m, n], &mut rng);
    let labels: Vec<usize> = (0..m).map(|i| i % n).collect();
    let y = one_hot(&labels, n)?;
    let delta = prediction_error(&y, &softmax_rows(&z, 1.0)?)?;
    let mut worst = 0.0f64;
    for k in 0..m * n {
        let mut up = z.clone();
        up.data_mut()[k] += 1e-5;
        let mut down = z.clone();
        down.data_mut()[k] -= 1e-5;
        let fd = (nll_loss(&softmax_rows(&up, 1.0)?, &y)? - nll_loss(&softmax_rows(&down, 1.0)?, &y)?) / 2e-5;
        worst = worst.max((fd + delta.data()[k] / m as f64).abs());
    }
    Ok(prop("∂ℓ/∂Z = −Δ/M", worst <= 1e-6, format!("max abs error {worst:.2e}")))
}

fn init_variances() -> PropertyOutcome {
    let (n, d) = (40, 512);
    let var = |mode| {
        let h = ClassifierHead::new(n, d, mode, 9);
        let w = h.weight().data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64
    };
    let checks = [
        (InitMode::KaimingFanIn, 2.0 / d as f64),
        (InitMode::KaimingFanOut, 2.0 / n as f64),
        (InitMode::XavierUniform, 1.0 / (6.0 * d as f64)),
        (InitMode::Normal { std: 0.3 }, 0.09),
    ];
    let worst = checks
        .iter()
        .map(|&(mode, expected)| (var(mode) / expected - 1.0).abs())
        .fold(0.0, f64::max);
    prop("head init variances within 10%", worst <= 0.1, format!("max relative deviation {worst:.3}"))
}

fn ema_unroll() -> Result<PropertyOutcome> {
    let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.9))?;
    let mut p = [0.0f64];
    let g = [1.0f64];
    let mut deltas = Vec::new();
    for _ in 0..2 {
        let before = p[0];
        opt.step(&mut [ParamGroup {
            name: "head",
            lr: 0.1,
            params: vec![ParamSlot::new(&mut p, &g)],
        }])?;
        deltas.push(p[0] - before);
    }
    let ok = (deltas[0] + 0.01).abs() < 1e-15 && (deltas[1] + 0.019).abs() < 1e-15;
    Ok(prop("EMA momentum hand unroll", ok, format!("Δp = {deltas:?}")))
}

fn velocity_product() -> Result<PropertyOutcome> {
    // ‖V_θ‖ at the second update depends on α·β only, to first order.
    let v = |alpha: f64, beta: f64| -> Result<f64> {
        let (shape, specs) = small_architectures().swap_remove(0);
        let mut fe = FeatureExtractor::new(&shape, specs, 3)?;
        let mut head = ClassifierHead::new(4, fe.output_dim(), InitMode::ZERO, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels = balanced_labels(4, 2);
        let batch = Batch {
            indices: (0..8).collect(),
            images: random_tensor(&[8, 6], &mut rng),
            targets: one_hot(&labels, 4)?,
            labels,
        };
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.0))?;
        let rates = Rates { alpha, beta };
        train_step(&mut fe, &mut head, &mut opt, &batch, rates, ForwardMode::Train, 1.0)?;
        let before = fe.theta();
        train_step(&mut fe, &mut head, &mut opt, &batch, rates, ForwardMode::Train, 1.0)?;
        Ok(fe.theta().iter().zip(&before).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
    };
    let base = v(0.02, 0.02)?;
    let swapped = v(0.01, 0.04)?;
    let rel = (swapped / base - 1.0).abs();
    Ok(prop(
        "‖V_θ‖ ∝ α·β at the first backbone update",
        rel <= 0.05 && base > 0.0,
        format!("(α,β)=(0.02,0.02): {base:.3e}, (0.01,0.04): {swapped:.3e}, rel diff {rel:.3}"),
    ))
}

fn equal_rate_groups_match_single_group() -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut a: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
    let mut b = a.clone();
    let grads: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut split = OptimizerState::new(OptimizerConfig::sgd(0.9))?;
    let mut joint = OptimizerState::new(OptimizerConfig::sgd(0.9))?;
    for g in &grads {
        let (a1, a2) = a.split_at_mut(2);
        split.step(&mut [
            ParamGroup {
                name: "head",
                lr: 0.05,
                params: vec![ParamSlot::new(a1, &g[..2])],
            },
            ParamGroup {
                name: "extractor",
                lr: 0.05,
                params: vec![ParamSlot::new(a2, &g[2..])],
            },
        ])?;
        let (b1, b2) = b.split_at_mut(2);
        joint.step(&mut [ParamGroup {
            name: "all",
            lr: 0.05,
            params: vec![ParamSlot::new(b1, &g[..2]), ParamSlot::new(b2, &g[2..])],
        }])?;
    }
    Ok(prop("two equal-rate groups equal one group", a == b, format!("{a:?}")))
}

fn optimizer_state_round_trip() -> Result<PropertyOutcome> {
    let mut opt = OptimizerState::new(OptimizerConfig::adam())?;
    let mut p = vec![0.3, -0.7, 1e-9];
    let g = vec![0.1 + 0.2, -1.0 / 3.0, 7e-12];
    opt.step(&mut [ParamGroup {
        name: "head",
        lr: 1e-3,
        params: vec![ParamSlot::new(&mut p, &g)],
    }])?;
    let json = serde_json::to_string(&opt)?;
    let back: OptimizerState = serde_json::from_str(&json)?;
    Ok(prop("optimizer state JSON round trip", back == opt, format!("{} bytes", json.len())))
}

fn data_properties() -> Result<Vec<PropertyOutcome>> {
    let ds = synth_blobs(5, 37, 10, 4)?;
    let (train, hold) = stratified_split_indices(&ds, 0.2, 1)?;
    let mut all: Vec<usize> = train.iter().chain(&hold).copied().collect();
    all.sort_unstable();
    let partition = all == (0..ds.len()).collect::<Vec<_>>();
    let mut sampler = BatchSampler::new(&ds, 10, SamplerMode::Balanced, 2)?;
    let mut seen = vec![0usize; ds.len()];
    let mut stratified = true;
    while sampler.epoch_has_next() {
        let idx = sampler.next_indices(&ds);
        let mut hist = [0usize; 5];
        for &i in &idx {
            seen[i] += 1;
            hist[ds.labels()[i]] += 1;
        }
        stratified &= hist.iter().all(|&h| h == 2);
    }
    let at_most_once = seen.iter().all(|&s| s <= 1);
    let deterministic = synth_blobs(5, 37, 10, 4)? == ds && stratified_split_indices(&ds, 0.2, 1)? == (train, hold);
    Ok(vec![
        prop("stratified split is a partition", partition, String::new()),
        prop(
            "balanced epoch visits each index at most once",
            at_most_once && stratified,
            format!("{} indices visited", seen.iter().sum::<usize>()),
        ),
        prop("loaders deterministic under a fixed seed", deterministic, String::new()),
    ])
}

fn inference_purity_and_checkpoint() -> Result<Vec<PropertyOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut fe = FeatureExtractor::desk_backbone(&[1, 12, 12], 3)?;
    let x = random_tensor(&[5, 1, 12, 12], &mut rng);
    fe.forward(&x, ForwardMode::Train)?;
    let stats = fe.running_stats();
    let a = fe.infer(&x)?;
    let b = fe.infer(&x)?;
    let pure = a == b && stats == fe.running_stats();
    let net = Network {
        head: ClassifierHead::new(3, fe.output_dim(), InitMode::KaimingFanOut, 4),
        extractor: fe,
        seed: 3,
    };
    let bytes = net.to_checkpoint().to_bytes()?;
    let again = Network::from_checkpoint(&crate::nn::ModelCheckpoint::from_bytes(&bytes)?)?
        .to_checkpoint()
        .to_bytes()?;
    Ok(vec![
        prop("inference forward is referentially transparent", pure, String::new()),
        prop("checkpoint re-save is byte-identical", bytes == again, format!("{} bytes", bytes.len())),
    ])
}

fn schedule_properties() -> Result<Vec<PropertyOutcome>> {
    let fib = fibonacci_checkpoints(100)?;
    let due: Vec<usize> = (1..=60).filter(|&s| validation_due(s)).collect();
    Ok(vec![
        prop(
            "Fibonacci checkpoints",
            fib == [1, 2, 3, 5, 8, 13, 21, 34, 55, 89],
            format!("{fib:?}"),
        ),
        prop(
            "validation ramp",
            due == [1, 3, 6, 10, 15, 21, 28, 36, 45, 55],
            format!("{due:?}"),
        ),
    ])
}

fn kaiming_normal_noise_sanity() -> PropertyOutcome {
    // Normal(1e-8) heads predict within 1e-6 of uniform on unit-scale features.
    let head = ClassifierHead::new(10, 64, InitMode::Normal { std: 1e-8 }, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let a = Tensor::new(vec![32, 64], (0..32 * 64).map(|_| normal.sample(&mut rng)).collect()).expect("shape");
    let worst = head
        .forward(&a)
        .and_then(|z| softmax_rows(&z, 1.0))
        .map(|p| p.data().iter().map(|v| (v - 0.1).abs()).fold(0.0, f64::max))
        .unwrap_or(f64::INFINITY);
    prop("Normal(1e-8) head is near-uniform", worst < 1e-6, format!("max |ŷ − 1/N| = {worst:.2e}"))
}

/// Every module invariant outside criteria 1 to 7.
pub fn module_properties() -> Result<Vec<PropertyOutcome>> {
    let mut out = vec![
        softmax_shift_invariance()?,
        taylor_regime(),
        loss_gradient_fd()?,
        init_variances(),
        kaiming_normal_noise_sanity(),
        ema_unroll()?,
        velocity_product()?,
        equal_rate_groups_match_single_group()?,
        optimizer_state_round_trip()?,
    ];
    out.extend(data_properties()?);
    out.extend(inference_purity_and_checkpoint()?);
    out.extend(schedule_properties()?);
    Ok(out)
}
