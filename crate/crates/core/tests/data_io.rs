use fast_transfer::adp::topk_accuracy;
use fast_transfer::config::bundled_corpus;
use fast_transfer::data::{load_idx, stratified_split, synth_blobs, write_idx, BatchSampler, SamplerMode};
use fast_transfer::nn::{ClassifierHead, InitMode};
use fast_transfer::optim::{OptimizerConfig, OptimizerState, ParamGroup};
use fast_transfer::tensor::{one_hot, prediction_error, softmax_rows};

#[test]
fn linear_probe_separates_synthetic_blobs() {
    let ds = synth_blobs(5, 40, 12, 7).unwrap();
    let x = ds.images().clone().reshape(vec![ds.len(), 144]).unwrap();
    let y = one_hot(ds.labels(), 5).unwrap();
    let mut head = ClassifierHead::new(5, 144, InitMode::ZERO, 0);
    let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.9)).unwrap();
    for _ in 0..200 {
        let p = softmax_rows(&head.forward(&x).unwrap(), 1.0).unwrap();
        head.backward_store(&x, &prediction_error(&y, &p).unwrap()).unwrap();
        opt.step(&mut [ParamGroup {
            name: "head",
            lr: 0.5,
            params: vec![head.param_slot()],
        }])
        .unwrap();
    }
    let acc = topk_accuracy(&head.forward(&x).unwrap(), ds.labels(), 1).unwrap();
    assert!(acc >= 0.99, "probe train accuracy {acc}");
}

#[test]
fn crafted_idx_fixture_loads() {
    let dir = std::env::temp_dir().join(format!("fast-transfer-idx-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (img, lbl) = (dir.join("img"), dir.join("lbl"));
    let mut pixels = vec![0u8; 4 * 28 * 28];
    pixels[28 * 28] = 255;
    write_idx(&img, &lbl, &pixels, 28, 28, &[0, 2, 1, 2]).unwrap();
    let ds = load_idx(&img, &lbl).unwrap();
    assert_eq!(ds.images().shape(), &[4, 1, 28, 28]);
    assert_eq!(ds.labels(), &[0, 2, 1, 2]);
    assert!(ds.images().row(0).iter().all(|&v| v == 0.0));
    assert_eq!(ds.images().data()[28 * 28], 1.0);

    std::fs::write(&img, [0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 28, 0, 0, 0, 28]).unwrap();
    let err = load_idx(&img, &lbl).unwrap_err().to_string();
    assert!(err.contains("truncated payload"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bundled_corpus_is_the_5k_digit_subset() {
    let ds = bundled_corpus().unwrap();
    assert_eq!(ds.len(), 5000);
    assert_eq!(ds.class_count(), 10);
    assert_eq!(ds.image_shape(), &[1, 28, 28]);
    assert!(ds.images().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(ds.class_histogram().iter().all(|&c| c >= 400));
}

#[test]
fn five_percent_holdout_per_class() {
    let ds = synth_blobs(4, 100, 8, 1).unwrap();
    let (train, hold) = stratified_split(&ds, 0.05, 9).unwrap();
    assert_eq!(hold.class_histogram(), vec![5; 4]);
    assert_eq!(train.class_histogram(), vec![95; 4]);
}

#[test]
fn shuffled_sampler_needs_no_class_balance() {
    let ds = synth_blobs(3, 5, 8, 1).unwrap();
    let mut s = BatchSampler::new(&ds, 4, SamplerMode::Shuffled, 2).unwrap();
    let b = s.next_batch(&ds).unwrap();
    assert_eq!(b.images.shape(), &[4, 1, 8, 8]);
    assert!(BatchSampler::new(&ds, 4, SamplerMode::Balanced, 2).is_err());
    assert!(BatchSampler::new(&ds, 16, SamplerMode::Shuffled, 2).is_err());
}
