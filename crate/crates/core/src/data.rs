//! Datasets: IDX ingestion, synthetic blob images, stratified splits,
//! balanced batch sampling and horizontal-flip augmentation.

use std::f64::consts::PI;
use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{one_hot, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Images `[count, C, H, W]` scaled to `[0, 1]` with integer labels in `[0, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

/// One mini-batch with materialized one-hot targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub targets: Tensor,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.shape().len() != 4 || images.rows() != labels.len() {
            return Err(Error::Dataset(format!(
                "images {:?} do not match {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if class_count < 2 {
            return Err(Error::Dataset("need at least two classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Dataset(format!("label {bad} out of range for {class_count} classes")));
        }
        let ds = Self {
            images,
            labels,
            class_count,
        };
        if let Some(empty) = ds.class_indices().iter().position(Vec::is_empty) {
            return Err(Error::Dataset(format!("class {empty} has no examples")));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Per-example shape `[C, H, W]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        self.class_indices().iter().map(Vec::len).collect()
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Dataset(format!("index {bad} out of range")));
        }
        Self::new(
            self.images.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
        )
    }

    /// Keeps only the listed classes and relabels them `0..classes.len()` in the given order.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Self> {
        let mut keep = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if let Some(pos) = classes.iter().position(|&c| c == l) {
                keep.push(i);
                labels.push(pos);
            }
        }
        Self::new(self.images.select_rows(&keep), labels, classes.len())
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Batch {
            indices: indices.to_vec(),
            images: self.images.select_rows(indices),
            targets: one_hot(&labels, self.class_count)?,
            labels,
        })
    }

    /// Nearest-neighbour resize of every image to `height × width`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        let (c, h, w) = match *self.image_shape() {
            [c, h, w] => (c, h, w),
            _ => unreachable!("checked in new"),
        };
        if height == 0 || width == 0 {
            return Err(Error::Dataset("resize target must be non-empty".into()));
        }
        if (height, width) == (h, w) {
            return Ok(self.clone());
        }
        let src = self.images.data();
        let mut out = Vec::with_capacity(self.len() * c * height * width);
        for plane in 0..self.len() * c {
            let base = plane * h * w;
            for y in 0..height {
                let sy = y * h / height;
                for x in 0..width {
                    let sx = x * w / width;
                    out.push(src[base + sy * w + sx]);
                }
            }
        }
        Self::new(
            Tensor::new(vec![self.len(), c, height, width], out)?,
            self.labels.clone(),
            self.class_count,
        )
    }
}

fn read_maybe_gzipped(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX file with an expected magic; returns its dimensions and payload.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let truncated = |expected: usize| Error::TruncatedPayload {
        path: path.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    let found = be_u32(bytes, 0).ok_or_else(|| truncated(4))?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    let dims: Vec<usize> = (0..ndims)
        .map(|d| be_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| truncated(header))?;
    let payload: usize = dims.iter().product();
    if bytes.len() < header + payload || payload == 0 {
        return Err(truncated(header + payload.max(1)));
    }
    Ok((dims, &bytes[header..header + payload]))
}

/// Loads an IDX image/label file pair (raw or gzip-compressed).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let image_bytes = read_maybe_gzipped(images_path)?;
    let label_bytes = read_maybe_gzipped(labels_path)?;
    let (dims, pixels) = parse_idx(images_path, &image_bytes, IDX_IMAGES_MAGIC)?;
    let (ldims, raw_labels) = parse_idx(labels_path, &label_bytes, IDX_LABELS_MAGIC)?;
    if dims[0] != ldims[0] {
        return Err(Error::Dataset(format!(
            "count mismatch: {} images vs {} labels",
            dims[0], ldims[0]
        )));
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&b| usize::from(b)).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let images = Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data)?;
    LabeledDataset::new(images, labels, class_count)
}

/// Writes an IDX pair (uncompressed). Mostly useful for fixtures.
pub fn write_idx(images_path: &Path, labels_path: &Path, pixels: &[u8], rows: usize, cols: usize, labels: &[u8]) -> Result<()> {
    let count = labels.len();
    if pixels.len() != count * rows * cols {
        return Err(Error::Dataset("pixel payload does not match dimensions".into()));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + count);
    for v in [IDX_LABELS_MAGIC, count as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Parameters of the synthetic blob generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobParams {
    /// Blob radius (Gaussian width) in pixels.
    pub width: f64,
    /// Std of the per-example jitter of the blob centre, in pixels.
    pub jitter: f64,
    /// Distance between neighbouring class centres in units of `jitter`.
    pub separation: f64,
    /// Std of additive pixel noise.
    pub noise: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            width: 1.5,
            jitter: 0.6,
            separation: 6.0,
            noise: 0.05,
        }
    }
}

/// Class-conditional Gaussian blob images with the default [`BlobParams`].
pub fn synth_blobs(n_classes: usize, per_class: usize, image_size: usize, seed: u64) -> Result<LabeledDataset> {
    synth_blobs_with(n_classes, per_class, image_size, seed, BlobParams::default())
}

/// Class `c` places a blob on a circle around the image centre at angle
/// `2πc/N`; the circle radius is chosen so neighbouring centres are
/// `separation · jitter` pixels apart.
pub fn synth_blobs_with(
    n_classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
    params: BlobParams,
) -> Result<LabeledDataset> {
    if n_classes < 2 || per_class == 0 || image_size < 4 {
        return Err(Error::Dataset(format!(
            "synth_blobs needs ≥2 classes, ≥1 example each and size ≥4 (got {n_classes}, {per_class}, {image_size})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chord = params.separation * params.jitter;
    let radius = (chord / (2.0 * (PI / n_classes as f64).sin())).min(image_size as f64 * 0.4);
    let mid = (image_size as f64 - 1.0) / 2.0;
    let jitter = Normal::new(0.0, params.jitter.max(1e-12)).expect("finite");
    let noise = Normal::new(0.0, params.noise.max(1e-12)).expect("finite");
    let pixels = image_size * image_size;
    let mut data = Vec::with_capacity(n_classes * per_class * pixels);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for i in 0..n_classes * per_class {
        let class = i % n_classes;
        let angle = 2.0 * PI * class as f64 / n_classes as f64;
        let cy = mid + radius * angle.sin() + jitter.sample(&mut rng);
        let cx = mid + radius * angle.cos() + jitter.sample(&mut rng);
        for y in 0..image_size {
            for x in 0..image_size {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let v = (-d2 / (2.0 * params.width * params.width)).exp() + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    let images = Tensor::new(vec![labels.len(), 1, image_size, image_size], data)?;
    LabeledDataset::new(images, labels, n_classes)
}

/// Per-class seeded split; returns `(train, holdout)` index lists in ascending order.
pub fn stratified_split_indices(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Dataset(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        let k = (fraction * idx.len() as f64).round() as usize;
        if k == 0 || k >= idx.len() {
            return Err(Error::Dataset(format!(
                "class {class} has {} examples, too few for a {fraction} holdout",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        holdout.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

pub fn stratified_split(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, holdout) = stratified_split_indices(ds, fraction, seed)?;
    Ok((ds.subset(&train)?, ds.subset(&holdout)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Balanced,
    Shuffled,
}

/// Seeded mini-batch sampler. Balanced mode draws exactly `M/N` examples of
/// every class per batch; each class is visited without replacement until it
/// is exhausted, then reshuffled.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    mode: SamplerMode,
    rng: ChaCha8Rng,
    queues: Vec<Vec<usize>>,
    epoch: usize,
}

impl BatchSampler {
    pub fn new(ds: &LabeledDataset, batch_size: usize, mode: SamplerMode, seed: u64) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Dataset("empty dataset".into()));
        }
        if batch_size == 0 || batch_size > ds.len() {
            return Err(Error::Dataset(format!(
                "batch size {batch_size} invalid for a dataset of {}",
                ds.len()
            )));
        }
        if mode == SamplerMode::Balanced {
            let n = ds.class_count();
            if batch_size % n != 0 {
                return Err(Error::Dataset(format!(
                    "balanced batches need M mod N = 0 (M = {batch_size}, N = {n})"
                )));
            }
            let smallest = ds.class_histogram().into_iter().min().unwrap_or(0);
            if batch_size / n > smallest {
                return Err(Error::Dataset(format!(
                    "class with {smallest} examples cannot supply {} per batch",
                    batch_size / n
                )));
            }
        }
        let mut sampler = Self {
            batch_size,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queues: Vec::new(),
            epoch: 0,
        };
        sampler.queues = match mode {
            SamplerMode::Balanced => ds.class_indices(),
            SamplerMode::Shuffled => vec![(0..ds.len()).collect()],
        };
        for q in &mut sampler.queues {
            q.shuffle(&mut sampler.rng);
        }
        Ok(sampler)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Whether another batch can be drawn without reshuffling any queue.
    pub fn epoch_has_next(&self) -> bool {
        let need = match self.mode {
            SamplerMode::Balanced => self.batch_size / self.queues.len(),
            SamplerMode::Shuffled => self.batch_size,
        };
        self.queues.iter().all(|q| q.len() >= need)
    }

    /// Indices of the next batch; exhausted queues are refilled and reshuffled.
    pub fn next_indices(&mut self, ds: &LabeledDataset) -> Vec<usize> {
        if !self.epoch_has_next() {
            self.epoch += 1;
            self.queues = match self.mode {
                SamplerMode::Balanced => ds.class_indices(),
                SamplerMode::Shuffled => vec![(0..ds.len()).collect()],
            };
            for q in &mut self.queues {
                q.shuffle(&mut self.rng);
            }
        }
        let mut out = Vec::with_capacity(self.batch_size);
        match self.mode {
            SamplerMode::Balanced => {
                let per = self.batch_size / self.queues.len();
                for q in &mut self.queues {
                    let at = q.len() - per;
                    out.extend(q.drain(at..));
                }
                out.shuffle(&mut self.rng);
            }
            SamplerMode::Shuffled => {
                let q = &mut self.queues[0];
                let at = q.len() - self.batch_size;
                out.extend(q.drain(at..));
            }
        }
        out
    }

    pub fn next_batch(&mut self, ds: &LabeledDataset) -> Result<Batch> {
        let idx = self.next_indices(ds);
        ds.batch(&idx)
    }
}

/// Every batch of one epoch: no index is visited twice.
pub fn balanced_batches<'a>(
    ds: &'a LabeledDataset,
    sampler: &'a mut BatchSampler,
) -> impl Iterator<Item = Result<Batch>> + 'a {
    std::iter::from_fn(move || {
        if sampler.epoch_has_next() {
            Some(sampler.next_batch(ds))
        } else {
            None
        }
    })
}

/// Mirrors the images selected by `mask` along the width axis.
pub fn hflip_with_mask(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (m, w) = match *x.shape() {
        [m, _, _, w] => (m, w),
        ref other => return Err(Error::shape("hflip", format!("expected [M,C,H,W], got {other:?}"))),
    };
    if mask.len() != m {
        return Err(Error::shape("hflip", format!("mask of {} for {m} images", mask.len())));
    }
    let mut out = x.clone();
    let per_image = x.cols();
    for (i, &flip) in mask.iter().enumerate() {
        if flip {
            for row in out.data_mut()[i * per_image..(i + 1) * per_image].chunks_mut(w) {
                row.reverse();
            }
        }
    }
    Ok(out)
}

/// Flips each image independently with `probability`; returns the images and the mask used.
pub fn hflip_augment<R: Rng>(x: &Tensor, probability: f64, rng: &mut R) -> Result<(Tensor, Vec<bool>)> {
    let mask: Vec<bool> = (0..x.rows()).map(|_| rng.gen_bool(probability)).collect();
    Ok((hflip_with_mask(x, &mask)?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("fast-transfer-data-{name}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn idx_fixture_round_trip() {
        let dir = tmpdir("fixture");
        let (img, lab) = (dir.join("img"), dir.join("lab"));
        let pixels: Vec<u8> = (0..4 * 28 * 28).map(|i| (i % 256) as u8).collect();
        write_idx(&img, &lab, &pixels, 28, 28, &[3, 0, 1, 3]).unwrap();
        let ds = load_idx(&img, &lab).unwrap_err();
        // Class 2 is missing from the fixture, which violates the coverage invariant.
        assert!(matches!(ds, Error::Dataset(_)));
        write_idx(&img, &lab, &pixels, 28, 28, &[3, 0, 1, 2]).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.images().shape(), &[4, 1, 28, 28]);
        assert_eq!(ds.labels(), &[3, 0, 1, 2]);
        assert_eq!(ds.images().data()[255], 1.0);
        assert_eq!(ds.images().data()[1], 1.0 / 255.0);
    }

    #[test]
    fn idx_errors() {
        let dir = tmpdir("errors");
        let (img, lab) = (dir.join("img"), dir.join("lab"));
        write_idx(&img, &lab, &[0u8; 2 * 4], 2, 2, &[0, 1]).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert!(ds.images().data().iter().all(|&v| v == 0.0));

        // Header only: the payload is missing.
        fs::write(&img, [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2]).unwrap();
        let err = load_idx(&img, &lab).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { .. }), "{err}");
        assert!(err.to_string().contains("truncated payload"));

        fs::write(&img, [0, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::BadMagic { .. })));

        write_idx(&img, &lab, &[0u8; 3 * 4], 2, 2, &[0, 1, 1]).unwrap();
        fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 2, 0, 1]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Dataset(_))));
    }

    #[test]
    fn gzip_idx_is_transparent() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tmpdir("gzip");
        let (img, lab) = (dir.join("img"), dir.join("lab"));
        write_idx(&img, &lab, &[7u8; 2 * 4], 2, 2, &[0, 1]).unwrap();
        let raw = fs::read(&img).unwrap();
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = dir.join("img.gz");
        fs::write(&gz, enc.finish().unwrap()).unwrap();
        assert_eq!(load_idx(&gz, &lab).unwrap(), load_idx(&img, &lab).unwrap());
    }

    #[test]
    fn synth_blobs_shape_and_determinism() {
        let a = synth_blobs(5, 10, 12, 3).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a.class_histogram(), vec![10; 5]);
        assert_eq!(a, synth_blobs(5, 10, 12, 3).unwrap());
        assert!(a.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(synth_blobs(1, 10, 12, 3).is_err());
    }

    #[test]
    fn split_fraction_per_class() {
        let ds = synth_blobs(4, 100, 8, 1).unwrap();
        let (train, holdout) = stratified_split_indices(&ds, 0.05, 9).unwrap();
        let held = ds.subset(&holdout).unwrap();
        assert_eq!(held.class_histogram(), vec![5; 4]);
        assert_eq!(train.len() + holdout.len(), ds.len());
        let small = synth_blobs(2, 3, 8, 1).unwrap();
        assert!(stratified_split(&small, 0.05, 0).is_err());
    }

    #[test]
    fn balanced_batch_histogram() {
        let ds = synth_blobs(5, 20, 8, 2).unwrap();
        let mut s = BatchSampler::new(&ds, 10, SamplerMode::Balanced, 4).unwrap();
        let b = s.next_batch(&ds).unwrap();
        let mut hist = vec![0; 5];
        b.labels.iter().for_each(|&l| hist[l] += 1);
        assert_eq!(hist, vec![2; 5]);
        assert!(BatchSampler::new(&ds, 12, SamplerMode::Balanced, 4).is_err());
        assert!(BatchSampler::new(&ds, 1000, SamplerMode::Shuffled, 4).is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let x = Tensor::new(vec![2, 1, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let mask = [true, false];
        let once = hflip_with_mask(&x, &mask).unwrap();
        assert_eq!(&once.data()[..6], &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        assert_eq!(&once.data()[6..], &x.data()[6..]);
        assert_eq!(hflip_with_mask(&once, &mask).unwrap(), x);
    }

    #[test]
    fn nearest_resize() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ds = LabeledDataset {
            images: x,
            labels: vec![0],
            class_count: 2,
        };
        let up = ds.resize_nearest(4, 4).unwrap_err();
        assert!(matches!(up, Error::Dataset(_)));
        let ds = LabeledDataset::new(
            Tensor::new(vec![2, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            vec![0, 1],
            2,
        )
        .unwrap();
        let up = ds.resize_nearest(4, 4).unwrap();
        assert_eq!(
            &up.images().data()[..16],
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }
}
