use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Architecture descriptor of one layer. Serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    AvgPoolGlobal,
    Flatten,
    BatchNorm {
        channels: usize,
    },
}

impl LayerSpec {
    /// Per-example output shape for a per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |detail: String| Error::shape("layer", detail);
        match *self {
            LayerSpec::Dense { inputs, outputs } => match input {
                [d] if *d == inputs => Ok(vec![outputs]),
                _ => Err(mismatch(format!("dense expects [{inputs}], got {input:?}"))),
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => match input {
                [c, h, w] if *c == in_channels => {
                    let span_h = h + 2 * padding;
                    let span_w = w + 2 * padding;
                    if stride == 0 || span_h < kernel || span_w < kernel {
                        return Err(mismatch(format!("conv kernel {kernel} too large for {input:?}")));
                    }
                    Ok(vec![
                        out_channels,
                        (span_h - kernel) / stride + 1,
                        (span_w - kernel) / stride + 1,
                    ])
                }
                _ => Err(mismatch(format!("conv expects {in_channels} channels, got {input:?}"))),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool { size } => match input {
                [c, h, w] if size > 0 && *h >= size && *w >= size => {
                    Ok(vec![*c, h / size, w / size])
                }
                _ => Err(mismatch(format!("max-pool {size} cannot reduce {input:?}"))),
            },
            LayerSpec::AvgPoolGlobal => match input {
                [c, _, _] => Ok(vec![*c]),
                _ => Err(mismatch(format!("global pooling expects [C,H,W], got {input:?}"))),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::BatchNorm { channels } => match input.first() {
                Some(&c) if c == channels && matches!(input.len(), 1 | 3) => Ok(input.to_vec()),
                _ => Err(mismatch(format!(
                    "batch-norm over {channels} channels, got {input:?}"
                ))),
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::AvgPoolGlobal => "avg_pool_global",
            LayerSpec::Flatten => "flatten",
            LayerSpec::BatchNorm { .. } => "batch_norm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor),
    MaxPool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Shape(Vec<usize>),
    BatchNorm { x_hat: Tensor, inv_std: Vec<f64> },
}

/// A layer with its parameters, matching gradients, and whatever the backward pass needs.
#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    params: Vec<Tensor>,
    grads: Vec<Tensor>,
    running: Option<RunningStats>,
    cache: Option<Cache>,
}

fn kaiming_normal<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

impl Layer {
    pub fn new<R: Rng>(spec: LayerSpec, rng: &mut R) -> Self {
        let (params, running) = match spec {
            LayerSpec::Dense { inputs, outputs } => (
                vec![
                    kaiming_normal(&[outputs, inputs], inputs, rng),
                    Tensor::zeros(&[outputs]),
                ],
                None,
            ),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                vec![
                    kaiming_normal(
                        &[out_channels, in_channels, kernel, kernel],
                        in_channels * kernel * kernel,
                        rng,
                    ),
                    Tensor::zeros(&[out_channels]),
                ],
                None,
            ),
            LayerSpec::BatchNorm { channels } => (
                vec![Tensor::full(&[channels], 1.0), Tensor::zeros(&[channels])],
                Some(RunningStats {
                    mean: vec![0.0; channels],
                    var: vec![1.0; channels],
                }),
            ),
            _ => (Vec::new(), None),
        };
        let grads = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            spec,
            params,
            grads,
            running,
            cache: None,
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    /// Parameter values paired with their gradients, borrowed disjointly.
    pub fn param_grad_pairs(&mut self) -> impl Iterator<Item = (&mut Tensor, &Tensor)> {
        self.params.iter_mut().zip(self.grads.iter())
    }

    pub fn running_stats(&self) -> Option<&RunningStats> {
        self.running.as_ref()
    }

    pub fn set_running_stats(&mut self, stats: RunningStats) -> Result<()> {
        match (&self.spec, &mut self.running) {
            (LayerSpec::BatchNorm { channels }, Some(slot))
                if stats.mean.len() == *channels && stats.var.len() == *channels =>
            {
                if stats.var.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::InvalidArgument(
                        "batch-norm running variance must be positive".into(),
                    ));
                }
                *slot = stats;
                Ok(())
            }
            _ => Err(Error::shape("set_running_stats", format!("{:?}", self.spec))),
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Forward pass that reads no batch statistics and mutates nothing.
    pub fn forward_inference(&self, x: &Tensor) -> Result<Tensor> {
        match self.spec {
            LayerSpec::Dense { .. } => dense_forward(x, &self.params[0], &self.params[1]),
            LayerSpec::Conv2d { stride, padding, .. } => {
                conv_forward(x, &self.params[0], &self.params[1], stride, padding)
            }
            LayerSpec::Relu => Ok(x.map(|v| v.max(0.0))),
            LayerSpec::MaxPool { size } => maxpool_forward(x, size).map(|(y, _)| y),
            LayerSpec::AvgPoolGlobal => avgpool_forward(x),
            LayerSpec::Flatten => flatten(x),
            LayerSpec::BatchNorm { channels } => {
                let stats = self.running.as_ref().expect("batch-norm has running stats");
                let inv_std: Vec<f64> = stats
                    .var
                    .iter()
                    .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
                    .collect();
                let mut y = x.clone();
                let spatial = channel_spatial(x, channels)?;
                let (gamma, beta) = (self.params[0].data(), self.params[1].data());
                for (c, chunk) in channel_chunks_mut(y.data_mut(), channels, spatial) {
                    for v in chunk {
                        *v = gamma[c] * (*v - stats.mean[c]) * inv_std[c] + beta[c];
                    }
                }
                y.ensure_finite("batch_norm")
            }
        }
    }

    /// Training-mode forward: caches what backward needs and updates batch-norm running stats.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        match self.spec {
            LayerSpec::Relu | LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => {
                let y = self.forward_inference(x)?;
                self.cache = Some(Cache::Input(x.clone()));
                Ok(y)
            }
            LayerSpec::MaxPool { size } => {
                let (y, argmax) = maxpool_forward(x, size)?;
                self.cache = Some(Cache::MaxPool {
                    argmax,
                    input_shape: x.shape().to_vec(),
                });
                Ok(y)
            }
            LayerSpec::AvgPoolGlobal | LayerSpec::Flatten => {
                let y = self.forward_inference(x)?;
                self.cache = Some(Cache::Shape(x.shape().to_vec()));
                Ok(y)
            }
            LayerSpec::BatchNorm { channels } => {
                let spatial = channel_spatial(x, channels)?;
                let count = (x.rows() * spatial) as f64;
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for (c, chunk) in channel_chunks(x.data(), channels, spatial) {
                    mean[c] += chunk.iter().sum::<f64>();
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for (c, chunk) in channel_chunks(x.data(), channels, spatial) {
                    var[c] += chunk.iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
                }
                var.iter_mut().for_each(|v| *v /= count);
                let inv_std: Vec<f64> =
                    var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();

                let mut x_hat = x.clone();
                for (c, chunk) in channel_chunks_mut(x_hat.data_mut(), channels, spatial) {
                    for v in chunk {
                        *v = (*v - mean[c]) * inv_std[c];
                    }
                }
                let mut y = x_hat.clone();
                let (gamma, beta) = (self.params[0].data(), self.params[1].data());
                for (c, chunk) in channel_chunks_mut(y.data_mut(), channels, spatial) {
                    for v in chunk {
                        *v = gamma[c] * *v + beta[c];
                    }
                }

                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let stats = self.running.as_mut().expect("batch-norm has running stats");
                for c in 0..channels {
                    stats.mean[c] =
                        BATCH_NORM_MOMENTUM * stats.mean[c] + (1.0 - BATCH_NORM_MOMENTUM) * mean[c];
                    stats.var[c] = BATCH_NORM_MOMENTUM * stats.var[c]
                        + (1.0 - BATCH_NORM_MOMENTUM) * var[c] * unbias;
                }
                self.cache = Some(Cache::BatchNorm { x_hat, inv_std });
                y.ensure_finite("batch_norm")
            }
        }
    }

    /// Consumes the cached forward state, overwrites this layer's gradients and
    /// returns the gradient with respect to the layer input (skipped when
    /// `need_input_grad` is false).
    pub fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let name = self.spec.name();
        let cache = self.cache.take().ok_or(Error::MissingForwardCache(name))?;
        match (self.spec.clone(), cache) {
            (LayerSpec::Dense { .. }, Cache::Input(x)) => {
                self.grads[0] = matmul_at(grad_out, &x)?;
                self.grads[1] = column_sums(grad_out);
                if need_input_grad {
                    Ok(Some(matmul(grad_out, &self.params[0])?))
                } else {
                    Ok(None)
                }
            }
            (LayerSpec::Conv2d { stride, padding, .. }, Cache::Input(x)) => {
                let (gw, gb, gx) =
                    conv_backward(&x, &self.params[0], grad_out, stride, padding, need_input_grad)?;
                self.grads[0] = gw;
                self.grads[1] = gb;
                Ok(gx)
            }
            (LayerSpec::Relu, Cache::Input(x)) => {
                let mut g = grad_out.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                Ok(Some(g))
            }
            (LayerSpec::MaxPool { .. }, Cache::MaxPool { argmax, input_shape }) => {
                let mut g = Tensor::zeros(&input_shape);
                for (&src, &gv) in argmax.iter().zip(grad_out.data()) {
                    g.data_mut()[src] += gv;
                }
                Ok(Some(g))
            }
            (LayerSpec::AvgPoolGlobal, Cache::Shape(shape)) => {
                let spatial = shape[2] * shape[3];
                let mut g = Tensor::zeros(&shape);
                for (dst, &gv) in g.data_mut().chunks_mut(spatial).zip(grad_out.data()) {
                    dst.iter_mut().for_each(|d| *d = gv / spatial as f64);
                }
                Ok(Some(g))
            }
            (LayerSpec::Flatten, Cache::Shape(shape)) => Ok(Some(grad_out.clone().reshape(shape)?)),
            (LayerSpec::BatchNorm { channels }, Cache::BatchNorm { x_hat, inv_std }) => {
                let spatial = channel_spatial(&x_hat, channels)?;
                let count = (x_hat.rows() * spatial) as f64;
                let mut sum_g = vec![0.0; channels];
                let mut sum_gx = vec![0.0; channels];
                for ((c, g), (_, xh)) in channel_chunks(grad_out.data(), channels, spatial)
                    .zip(channel_chunks(x_hat.data(), channels, spatial))
                {
                    sum_g[c] += g.iter().sum::<f64>();
                    sum_gx[c] += g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
                }
                self.grads[0] = Tensor::new(vec![channels], sum_gx.clone())?;
                self.grads[1] = Tensor::new(vec![channels], sum_g.clone())?;
                if !need_input_grad {
                    return Ok(None);
                }
                let gamma = self.params[0].data().to_vec();
                let mut gx = grad_out.clone();
                for ((c, g), (_, xh)) in channel_chunks_mut(gx.data_mut(), channels, spatial)
                    .zip(channel_chunks(x_hat.data(), channels, spatial))
                {
                    let k = gamma[c] * inv_std[c] / count;
                    for (gv, &xv) in g.iter_mut().zip(xh) {
                        *gv = k * (count * *gv - sum_g[c] - xv * sum_gx[c]);
                    }
                }
                Ok(Some(gx))
            }
            (spec, _) => Err(Error::MissingForwardCache(spec.name())),
        }
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = vec![0.0; c];
    for i in 0..t.rows() {
        for (o, &v) in out.iter_mut().zip(t.row(i)) {
            *o += v;
        }
    }
    Tensor::new(vec![c], out).expect("column count")
}

fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::shape("dense", format!("expected [M, D], got {:?}", x.shape())));
    }
    let mut y = matmul_bt(x, w)?;
    let outputs = b.len();
    for row in y.data_mut().chunks_mut(outputs) {
        for (v, &bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    y.ensure_finite("dense")
}

fn flatten(x: &Tensor) -> Result<Tensor> {
    let rows = x.rows();
    let cols = x.cols();
    x.clone().reshape(vec![rows, cols])
}

/// Number of elements per (example, channel) pair; validates the channel extent.
fn channel_spatial(x: &Tensor, channels: usize) -> Result<usize> {
    match x.shape() {
        [_, c, rest @ ..] if *c == channels => Ok(rest.iter().product()),
        other => Err(Error::shape(
            "batch_norm",
            format!("expected {channels} channels, got {other:?}"),
        )),
    }
}

fn channel_chunks(
    data: &[f64],
    channels: usize,
    spatial: usize,
) -> impl Iterator<Item = (usize, &[f64])> {
    data.chunks(spatial).enumerate().map(move |(i, c)| (i % channels, c))
}

fn channel_chunks_mut(
    data: &mut [f64],
    channels: usize,
    spatial: usize,
) -> impl Iterator<Item = (usize, &mut [f64])> {
    data.chunks_mut(spatial)
        .enumerate()
        .map(move |(i, c)| (i % channels, c))
}

fn image_dims(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [m, c, h, w] => Ok((m, c, h, w)),
        ref other => Err(Error::shape(op, format!("expected [M,C,H,W], got {other:?}"))),
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (m, cin, h, wd) = image_dims(x, "conv2d")?;
    let (cout, wcin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if cin != wcin {
        return Err(Error::shape("conv2d", format!("input has {cin} channels, kernel expects {wcin}")));
    }
    let out_shape = LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
        stride,
        padding: pad,
    }
    .output_shape(&[cin, h, wd])?;
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let xd = x.data();
    let wdata = w.data();
    let mut out = vec![0.0; m * cout * oh * ow];
    for n in 0..m {
        for co in 0..cout {
            let plane = &mut out[((n * cout + co) * oh) * ow..((n * cout + co + 1) * oh) * ow];
            plane.iter_mut().for_each(|v| *v = b.data()[co]);
            for ci in 0..cin {
                let xin = &xd[(n * cin + ci) * h * wd..(n * cin + ci + 1) * h * wd];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdata[((co * cin + ci) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xin[iy as usize * wd..(iy as usize + 1) * wd];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    *o += wv * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![m, cout, oh, ow], out)?.ensure_finite("conv2d")
}

fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let (m, cin, h, wd) = image_dims(x, "conv2d backward")?;
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let (_, gc, oh, ow) = image_dims(g, "conv2d backward")?;
    if gc != cout {
        return Err(Error::shape("conv2d backward", "gradient channel mismatch"));
    }
    let xd = x.data();
    let gd = g.data();
    let wdata = w.data();
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; cout];
    let mut gx = if need_input_grad { vec![0.0; x.len()] } else { Vec::new() };
    for n in 0..m {
        for co in 0..cout {
            let gplane = &gd[((n * cout + co) * oh) * ow..((n * cout + co + 1) * oh) * ow];
            gb[co] += gplane.iter().sum::<f64>();
            for ci in 0..cin {
                let base = (n * cin + ci) * h * wd;
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((co * cin + ci) * k + ky) * k + kx;
                        let wv = wdata[widx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = base + iy as usize * wd;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let gv = gplane[oy * ow + ox];
                                acc += gv * xd[row + ix as usize];
                                if need_input_grad {
                                    gx[row + ix as usize] += gv * wv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    let gx = if need_input_grad {
        Some(Tensor::new(x.shape().to_vec(), gx)?)
    } else {
        None
    };
    Ok((
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![cout], gb)?,
        gx,
    ))
}

fn maxpool_forward(x: &Tensor, size: usize) -> Result<(Tensor, Vec<usize>)> {
    let (m, c, h, w) = image_dims(x, "max_pool")?;
    if size == 0 || h < size || w < size {
        return Err(Error::shape("max_pool", format!("window {size} on {h}x{w}")));
    }
    let (oh, ow) = (h / size, w / size);
    let xd = x.data();
    let mut out = Vec::with_capacity(m * c * oh * ow);
    let mut argmax = Vec::with_capacity(m * c * oh * ow);
    for plane in 0..m * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * size + dy) * w + ox * size + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![m, c, oh, ow], out)?, argmax))
}

fn avgpool_forward(x: &Tensor) -> Result<Tensor> {
    let (m, c, h, w) = image_dims(x, "avg_pool_global")?;
    let spatial = (h * w) as f64;
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().sum::<f64>() / spatial)
        .collect();
    Tensor::new(vec![m, c], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn output_shapes_propagate() {
        let conv = LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 8,
            kernel: 3,
            stride: 1,
            padding: 0,
        };
        assert_eq!(conv.output_shape(&[1, 28, 28]).unwrap(), vec![8, 26, 26]);
        assert_eq!(
            LayerSpec::MaxPool { size: 2 }.output_shape(&[8, 26, 26]).unwrap(),
            vec![8, 13, 13]
        );
        assert!(conv.output_shape(&[3, 28, 28]).is_err());
        assert!(LayerSpec::BatchNorm { channels: 4 }.output_shape(&[4]).is_ok());
        assert!(LayerSpec::BatchNorm { channels: 4 }.output_shape(&[3, 2, 2]).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let layer = Layer::new(LayerSpec::Relu, &mut rng());
        let x = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(layer.forward_inference(&x).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn backward_requires_forward() {
        let mut layer = Layer::new(LayerSpec::Dense { inputs: 2, outputs: 2 }, &mut rng());
        let g = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            layer.backward(&g, true),
            Err(Error::MissingForwardCache("dense"))
        ));
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut layer = Layer::new(LayerSpec::MaxPool { size: 2 }, &mut rng());
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let y = layer.forward_train(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = layer
            .backward(&Tensor::full(&[1, 1, 1, 1], 2.5), true)
            .unwrap()
            .unwrap();
        assert_eq!(g.data(), &[0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn batch_norm_training_output_is_standardized() {
        let mut layer = Layer::new(LayerSpec::BatchNorm { channels: 2 }, &mut rng());
        let x = Tensor::new(vec![3, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let y = layer.forward_train(&x).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..3).map(|i| y.data()[i * 2 + c]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
        }
        let stats = layer.running_stats().unwrap();
        assert!((stats.mean[0] - 0.2).abs() < 1e-12);
        assert!(stats.var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn inference_forward_is_pure() {
        let mut layer = Layer::new(LayerSpec::BatchNorm { channels: 1 }, &mut rng());
        layer
            .set_running_stats(RunningStats {
                mean: vec![1.0],
                var: vec![4.0],
            })
            .unwrap();
        let x = Tensor::new(vec![2, 1], vec![3.0, -1.0]).unwrap();
        let a = layer.forward_inference(&x).unwrap();
        let b = layer.forward_inference(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(layer.running_stats().unwrap().mean, vec![1.0]);
        assert!(layer
            .set_running_stats(RunningStats {
                mean: vec![0.0],
                var: vec![0.0],
            })
            .is_err());
    }
}
