//! Anytime deployment evaluation: validation-driven snapshots, Fibonacci
//! deployment checkpoints, per-run and aggregate CSV logs, and the
//! convergence/distance report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{ClassifierHead, FeatureExtractor, Network};
use crate::tensor::{frobenius_norm, Tensor};

pub const ADP_CSV_HEADER: &str = "step,target_top1,target_top5,source_top1,best_val_step,w_fro,theta_dist";

/// Deduplicated Fibonacci steps `1, 2, 3, 5, 8, ...` up to `max_steps`.
pub fn fibonacci_checkpoints(max_steps: usize) -> Result<Vec<usize>> {
    if max_steps == 0 {
        return Err(Error::Eval("max_steps must be at least 1".into()));
    }
    let mut out = vec![1];
    let (mut a, mut b) = (1usize, 2usize);
    while b <= max_steps {
        out.push(b);
        (a, b) = (b, a + b);
    }
    Ok(out)
}

/// Validation cadence: the k-th validation happens `min(k, cap)` steps after the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationRamp {
    pub cap: usize,
}

impl Default for ValidationRamp {
    fn default() -> Self {
        Self { cap: 10 }
    }
}

impl ValidationRamp {
    pub fn due(&self, step: usize) -> bool {
        let cap = self.cap.max(1);
        let mut at = 0;
        for k in 1..cap {
            at += k;
            if at >= step {
                return at == step;
            }
        }
        // Saturated: the remaining validations fall on a fixed stride.
        step >= at && (step - at) % cap == 0
    }
}

/// [`ValidationRamp::due`] with the default cap of 10.
pub fn validation_due(step: usize) -> bool {
    ValidationRamp::default().due(step)
}

/// Best validation accuracy so far and the matching model snapshot.
/// Ties keep the earlier snapshot.
#[derive(Debug, Clone, Default)]
pub struct ValidationTracker {
    best: Option<(usize, f64, Network)>,
}

impl ValidationTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Offers a validation result; returns true if the snapshot was replaced.
    pub fn observe(&mut self, step: usize, val_acc: f64, model: &Network) -> bool {
        let better = match &self.best {
            None => true,
            Some((_, best, _)) => val_acc > *best,
        };
        if better {
            let mut snapshot = model.clone();
            snapshot.extractor.clear_caches();
            self.best = Some((step, val_acc, snapshot));
        }
        better
    }

    pub fn best_step(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn best_val_acc(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    pub fn snapshot(&self) -> Option<&Network> {
        self.best.as_ref().map(|b| &b.2)
    }
}

/// Logits `φ(x; θ) Wᵀ` in inference mode, in chunks.
pub fn inference_logits(extractor: &FeatureExtractor, head: &ClassifierHead, images: &Tensor) -> Result<Tensor> {
    const CHUNK: usize = 256;
    let rows = images.rows();
    let mut data = Vec::with_capacity(rows * head.classes());
    let mut start = 0;
    while start < rows {
        let end = (start + CHUNK).min(rows);
        let idx: Vec<usize> = (start..end).collect();
        let a = extractor.infer(&images.select_rows(&idx))?;
        data.extend_from_slice(head.forward(&a)?.data());
        start = end;
    }
    Tensor::new(vec![rows, head.classes()], data)
}

/// Fraction of rows whose label is among the `k` largest scores. Ties rank the
/// lower class index first, so a constant row predicts class 0.
pub fn topk_accuracy(scores: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    if scores.rows() != labels.len() || labels.is_empty() {
        return Err(Error::shape("topk_accuracy", format!("{} rows vs {} labels", scores.rows(), labels.len())));
    }
    let n = scores.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Eval(format!("label {bad} out of range for {n} classes")));
    }
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = scores.row(i);
        let target = row[label];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > target || (v == target && j < label))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

pub fn accuracy(extractor: &FeatureExtractor, head: &ClassifierHead, ds: &LabeledDataset) -> Result<f64> {
    if ds.class_count() != head.classes() {
        return Err(Error::Eval(format!(
            "dataset has {} classes but the head predicts {}",
            ds.class_count(),
            head.classes()
        )));
    }
    topk_accuracy(&inference_logits(extractor, head, ds.images())?, ds.labels(), 1)
}

/// Test splits and references needed to score a deployed snapshot.
pub struct DeploymentEval<'a> {
    pub target_test: &'a LabeledDataset,
    /// Source test data and the detached source head.
    pub source: Option<(&'a LabeledDataset, &'a ClassifierHead)>,
    /// Pretrained backbone parameters `θ_s*`.
    pub theta_source: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdpRecord {
    pub step: usize,
    pub target_top1: f64,
    /// Present when the target task has at least five classes.
    pub target_top5: Option<f64>,
    pub source_top1: Option<f64>,
    pub best_val_step: usize,
    pub w_fro: f64,
    pub theta_dist: f64,
}

pub fn theta_distance(theta: &[f64], reference: &[f64]) -> f64 {
    theta
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Scores the tracker's snapshot at deployment step `step`; the live model is not involved.
pub fn record_checkpoint(tracker: &ValidationTracker, step: usize, eval: &DeploymentEval<'_>) -> Result<AdpRecord> {
    let (best_step, snapshot) = match (tracker.best_step(), tracker.snapshot()) {
        (Some(s), Some(n)) => (s, n),
        _ => return Err(Error::Eval(format!("no validation snapshot available at step {step}"))),
    };
    if best_step > step {
        return Err(Error::Eval(format!("snapshot from step {best_step} is newer than checkpoint {step}")));
    }
    let logits = inference_logits(&snapshot.extractor, &snapshot.head, eval.target_test.images())?;
    let labels = eval.target_test.labels();
    let target_top1 = topk_accuracy(&logits, labels, 1)?;
    let target_top5 = if snapshot.head.classes() >= 5 {
        Some(topk_accuracy(&logits, labels, 5)?)
    } else {
        None
    };
    let source_top1 = match eval.source {
        Some((ds, head)) => Some(accuracy(&snapshot.extractor, head, ds)?),
        None => None,
    };
    Ok(AdpRecord {
        step,
        target_top1,
        target_top5,
        source_top1,
        best_val_step: best_step,
        w_fro: frobenius_norm(snapshot.head.weight()),
        theta_dist: theta_distance(&snapshot.extractor.theta(), eval.theta_source),
    })
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_field<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Eval(format!("line {line}: bad {name} value {s:?}")))
}

fn parse_opt(line: usize, name: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(line, name, s).map(Some)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdpLog {
    pub records: Vec<AdpRecord>,
}

impl AdpLog {
    pub fn push(&mut self, record: AdpRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Eval(format!(
                    "checkpoint {} does not follow {}",
                    record.step, last.step
                )));
            }
        }
        if record.best_val_step > record.step {
            return Err(Error::Eval("best_val_step after checkpoint".into()));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn at(&self, step: usize) -> Option<&AdpRecord> {
        self.records.iter().find(|r| r.step == step)
    }

    pub fn last(&self) -> Option<&AdpRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ADP_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                r.target_top1,
                opt_field(r.target_top5),
                opt_field(r.source_top1),
                r.best_val_step,
                r.w_fro,
                r.theta_dist
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(ADP_CSV_HEADER) {
            return Err(Error::Eval("ADP CSV header mismatch".into()));
        }
        let mut log = AdpLog::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Eval(format!("line {n}: expected 7 fields, found {}", f.len())));
            }
            log.push(AdpRecord {
                step: parse_field(n, "step", f[0])?,
                target_top1: parse_field(n, "target_top1", f[1])?,
                target_top5: parse_opt(n, "target_top5", f[2])?,
                source_top1: parse_opt(n, "source_top1", f[3])?,
                best_val_step: parse_field(n, "best_val_step", f[4])?,
                w_fro: parse_field(n, "w_fro", f[5])?,
                theta_dist: parse_field(n, "theta_dist", f[6])?,
            })?;
        }
        Ok(log)
    }
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

/// Median and 2.5/97.5 percentile band of one metric at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            median: median(values),
            lo: percentile(values, 2.5),
            hi: percentile(values, 97.5),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub step: usize,
    pub seeds: usize,
    pub target_top1: Band,
    pub target_top5: Option<Band>,
    pub source_top1: Option<Band>,
    pub theta_dist: Band,
}

pub const AGGREGATE_CSV_HEADER: &str = "step,seeds,target_top1_median,target_top1_lo,target_top1_hi,target_top5_median,target_top5_lo,target_top5_hi,source_top1_median,source_top1_lo,source_top1_hi,theta_dist_median,theta_dist_lo,theta_dist_hi";

/// Per-checkpoint statistics over a seed ensemble. Only steps present in every log are kept.
pub fn aggregate(logs: &[AdpLog]) -> Vec<AggregateRow> {
    let Some(first) = logs.first() else {
        return Vec::new();
    };
    let mut rows = Vec::new();
    for step in first.records.iter().map(|r| r.step) {
        let recs: Vec<&AdpRecord> = logs.iter().filter_map(|l| l.at(step)).collect();
        if recs.len() != logs.len() {
            continue;
        }
        let collect = |f: &dyn Fn(&AdpRecord) -> Option<f64>| -> Option<Band> {
            let v: Option<Vec<f64>> = recs.iter().map(|r| f(r)).collect();
            v.and_then(|v| Band::of(&v))
        };
        rows.push(AggregateRow {
            step,
            seeds: recs.len(),
            target_top1: collect(&|r| Some(r.target_top1)).expect("non-empty"),
            target_top5: collect(&|r| r.target_top5),
            source_top1: collect(&|r| r.source_top1),
            theta_dist: collect(&|r| Some(r.theta_dist)).expect("non-empty"),
        });
    }
    rows
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let band = |b: Option<Band>| match b {
        Some(b) => format!("{},{},{}", b.median, b.lo, b.hi),
        None => ",,".to_string(),
    };
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            r.seeds,
            band(Some(r.target_top1)),
            band(r.target_top5),
            band(r.source_top1),
            band(Some(r.theta_dist))
        );
    }
    out
}

/// Mean and sample standard deviation; `std` is `None` with fewer than two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub method: String,
    pub seeds: usize,
    pub top1_error: MeanStd,
    pub top5_error: Option<MeanStd>,
    pub distance: MeanStd,
    /// Set when fewer than two seeds were given and the std is undefined.
    pub single_seed: bool,
}

/// Final-checkpoint error rates and backbone travel per method, in input order.
pub fn convergence_report(runs: &[(String, AdpLog)]) -> Result<Vec<ConvergenceRow>> {
    let mut methods: Vec<&str> = Vec::new();
    for (m, _) in runs {
        if !methods.contains(&m.as_str()) {
            methods.push(m);
        }
    }
    let mut rows = Vec::new();
    for method in methods {
        let finals: Vec<&AdpRecord> = runs
            .iter()
            .filter(|(m, _)| m == method)
            .map(|(_, log)| {
                log.last()
                    .ok_or_else(|| Error::Eval(format!("run of {method} has no checkpoints")))
            })
            .collect::<Result<_>>()?;
        let top1: Vec<f64> = finals.iter().map(|r| 1.0 - r.target_top1).collect();
        let top5: Option<Vec<f64>> = finals.iter().map(|r| r.target_top5.map(|a| 1.0 - a)).collect();
        let dist: Vec<f64> = finals.iter().map(|r| r.theta_dist).collect();
        rows.push(ConvergenceRow {
            method: method.to_string(),
            seeds: finals.len(),
            top1_error: MeanStd::of(&top1),
            top5_error: top5.map(|v| MeanStd::of(&v)),
            distance: MeanStd::of(&dist),
            single_seed: finals.len() < 2,
        });
    }
    Ok(rows)
}

pub const CONVERGENCE_CSV_HEADER: &str =
    "method,seeds,top1_error_mean,top1_error_std,top5_error_mean,top5_error_std,distance_mean,distance_std,flag";

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let ms = |m: Option<MeanStd>| match m {
        Some(m) => format!("{},{}", m.mean, opt_field(m.std)),
        None => ",".to_string(),
    };
    let mut out = String::from(CONVERGENCE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method,
            r.seeds,
            ms(Some(r.top1_error)),
            ms(r.top5_error),
            ms(Some(r.distance)),
            if r.single_seed { "std_undefined" } else { "" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fibonacci_examples() {
        assert_eq!(fibonacci_checkpoints(21).unwrap(), vec![1, 2, 3, 5, 8, 13, 21]);
        assert_eq!(fibonacci_checkpoints(1).unwrap(), vec![1]);
        assert_eq!(
            fibonacci_checkpoints(100).unwrap(),
            vec![1, 2, 3, 5, 8, 13, 21, 34, 55, 89]
        );
        assert!(fibonacci_checkpoints(0).is_err());
    }

    #[test]
    fn validation_ramp_examples() {
        let due: Vec<usize> = (1..=100).filter(|&s| validation_due(s)).collect();
        assert_eq!(due, vec![1, 3, 6, 10, 15, 21, 28, 36, 45, 55, 65, 75, 85, 95]);
        assert!(validation_due(55) && !validation_due(56));
        let every = ValidationRamp { cap: 1 };
        assert!((1..50).all(|s| every.due(s)));
    }

    #[test]
    fn topk_ties_prefer_low_index() {
        let s = Tensor::zeros(&[3, 5]);
        assert_eq!(topk_accuracy(&s, &[0, 1, 4], 1).unwrap(), 1.0 / 3.0);
        assert_eq!(topk_accuracy(&s, &[0, 1, 4], 5).unwrap(), 1.0);
        let s = Tensor::from_rows(&[vec![0.1, 0.5, 0.2], vec![0.9, 0.0, 0.3]]).unwrap();
        assert_eq!(topk_accuracy(&s, &[1, 2], 1).unwrap(), 0.5);
        assert_eq!(topk_accuracy(&s, &[1, 2], 2).unwrap(), 1.0);
    }

    #[test]
    fn percentiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert!((percentile(&v, 2.5) - 1.1).abs() < 1e-12);
        assert_eq!(median(&[1.0, 2.0]), 1.5);
    }

    #[test]
    fn mean_std_with_identical_values() {
        let m = MeanStd::of(&[0.3, 0.3, 0.3]);
        assert_eq!(m.std, Some(0.0));
        assert_eq!(MeanStd::of(&[0.3]).std, None);
    }

    fn record(step: usize, acc: f64, dist: f64) -> AdpRecord {
        AdpRecord {
            step,
            target_top1: acc,
            target_top5: Some(1.0),
            source_top1: None,
            best_val_step: step,
            w_fro: 0.5,
            theta_dist: dist,
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut log = AdpLog::default();
        log.push(record(1, 0.2, 0.0)).unwrap();
        log.push(record(2, 0.1 + 0.2, 1e-17)).unwrap();
        assert!(log.push(record(2, 0.3, 0.0)).is_err());
        let csv = log.to_csv();
        assert!(csv.starts_with(ADP_CSV_HEADER));
        assert_eq!(AdpLog::from_csv(&csv).unwrap(), log);
    }

    #[test]
    fn convergence_flags_single_seed() {
        let mut a = AdpLog::default();
        a.push(record(5, 0.9, 2.0)).unwrap();
        let rows = convergence_report(&[("fast".into(), a.clone()), ("fe".into(), a.clone()), ("fe".into(), a)]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].single_seed);
        assert!(!rows[1].single_seed);
        assert_eq!(rows[1].distance.std, Some(0.0));
        assert!((rows[1].top1_error.mean - 0.1).abs() < 1e-12);
        assert!(convergence_csv(&rows).contains("std_undefined"));
    }
}
