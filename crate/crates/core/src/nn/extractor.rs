use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Layer, LayerSpec, RunningStats};
use crate::error::{Error, Result};
use crate::optim::ParamSlot;
use crate::tensor::Tensor;

/// Whether batch-norm layers normalize with batch statistics (and update their
/// running estimates) or with the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Inference,
}

/// The feature extractor: a fixed stack of layers mapping images to `M×D` features.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    output_dim: usize,
}

impl FeatureExtractor {
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        for spec in &specs {
            shape = spec.output_shape(&shape)?;
        }
        let output_dim = match shape.as_slice() {
            [d] => *d,
            other => {
                return Err(Error::shape(
                    "FeatureExtractor::new",
                    format!("stack must end in a flat feature vector, got {other:?}"),
                ))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs.into_iter().map(|s| Layer::new(s, &mut rng)).collect();
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            output_dim,
        })
    }

    /// Conv(1→8,3)-BN-ReLU-MaxPool(2)-Conv(8→16,3)-BN-ReLU-MaxPool(2)-Flatten-Dense(→64)-ReLU.
    pub fn desk_backbone(input_shape: &[usize], seed: u64) -> Result<Self> {
        Self::new(input_shape, desk_backbone_specs(input_shape)?, seed)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec().clone()).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(
                "extractor_forward",
                format!("expected [M, {:?}], got {:?}", self.input_shape, x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        match mode {
            ForwardMode::Inference => self.infer(x),
            ForwardMode::Train => {
                self.check_input(x)?;
                let mut h = x.clone();
                for layer in &mut self.layers {
                    h = layer.forward_train(&h)?;
                }
                Ok(h)
            }
        }
    }

    /// Inference-mode forward pass; takes `&self`, so it cannot touch any state.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward_inference(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates `∂ℓ/∂A` (already batch-mean scaled) through the stack,
    /// overwriting every layer's gradients. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad_a: &Tensor) -> Result<Tensor> {
        self.backward_impl(grad_a, true)
            .map(|g| g.expect("input gradient requested"))
    }

    /// Same as [`backward`](Self::backward) but skips the input gradient of the first layer.
    pub fn backward_params(&mut self, grad_a: &Tensor) -> Result<()> {
        self.backward_impl(grad_a, false).map(|_| ())
    }

    fn backward_impl(&mut self, grad_a: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        if grad_a.shape() != [grad_a.rows(), self.output_dim] {
            return Err(Error::shape(
                "extractor_backward",
                format!("expected [M, {}], got {:?}", self.output_dim, grad_a.shape()),
            ));
        }
        let mut g = grad_a.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            match layer.backward(&g, need_input_grad || i > 0)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn theta_len(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(Tensor::len)
            .sum()
    }

    /// All trainable parameters flattened in declaration order.
    pub fn theta(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta_len());
        for p in self.layers.iter().flat_map(|l| l.params()) {
            out.extend_from_slice(p.data());
        }
        out
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta_len() {
            return Err(Error::shape(
                "set_theta",
                format!("expected {} values, got {}", self.theta_len(), theta.len()),
            ));
        }
        let mut offset = 0;
        for p in self.layers.iter_mut().flat_map(|l| l.params_mut()) {
            let n = p.len();
            p.data_mut().copy_from_slice(&theta[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn grads_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta_len());
        for g in self.layers.iter().flat_map(|l| l.grads()) {
            out.extend_from_slice(g.data());
        }
        out
    }

    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_grad_pairs())
            .map(|(p, g)| ParamSlot::new(p.data_mut(), g.data()))
            .collect()
    }

    pub fn running_stats(&self) -> Vec<RunningStats> {
        self.layers
            .iter()
            .filter_map(|l| l.running_stats().cloned())
            .collect()
    }

    pub fn set_running_stats(&mut self, stats: &[RunningStats]) -> Result<()> {
        let mut it = stats.iter();
        for layer in self.layers.iter_mut().filter(|l| l.running_stats().is_some()) {
            let s = it
                .next()
                .ok_or_else(|| Error::shape("set_running_stats", "too few entries"))?;
            layer.set_running_stats(s.clone())?;
        }
        if it.next().is_some() {
            return Err(Error::shape("set_running_stats", "too many entries"));
        }
        Ok(())
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }
}

pub fn desk_backbone_specs(input_shape: &[usize]) -> Result<Vec<LayerSpec>> {
    let channels = *input_shape
        .first()
        .ok_or_else(|| Error::shape("desk_backbone", "empty input shape"))?;
    let mut specs = vec![
        LayerSpec::Conv2d {
            in_channels: channels,
            out_channels: 8,
            kernel: 3,
            stride: 1,
            padding: 0,
        },
        LayerSpec::BatchNorm { channels: 8 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::Conv2d {
            in_channels: 8,
            out_channels: 16,
            kernel: 3,
            stride: 1,
            padding: 0,
        },
        LayerSpec::BatchNorm { channels: 16 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::Flatten,
    ];
    let mut shape = input_shape.to_vec();
    for s in &specs {
        shape = s.output_shape(&shape)?;
    }
    specs.push(LayerSpec::Dense {
        inputs: shape[0],
        outputs: 64,
    });
    specs.push(LayerSpec::Relu);
    Ok(specs)
}
