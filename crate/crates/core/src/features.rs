//! A small fixed-filter convolutional feature extractor with exact backpropagation.
//!
//! Stage `l` (1-based) is `conv -> activation`; its activation output is the feature
//! map of layer `l`. When a stage carries a downsampling tag, the 2x2 mean pool is
//! applied to its output before it feeds the next stage. Feature maps are stored
//! channel-major as `N x M` matrices (`N` channels, `M = width * height`).

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Downsample {
    None,
    MeanPool2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub activation: Activation,
    pub downsample: Downsample,
}

impl LayerSpec {
    pub fn conv3(in_channels: usize, out_channels: usize, downsample: Downsample) -> Self {
        LayerSpec {
            kernel: 3,
            in_channels,
            out_channels,
            stride: 1,
            activation: Activation::Relu,
            downsample,
        }
    }

    fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

/// Architecture plus the seed its filters are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
}

impl Default for ExtractorConfig {
    /// Four 3x3 stages, channels 3-8-8-16-16, pooling after stages 1 and 2.
    fn default() -> Self {
        ExtractorConfig {
            seed: 0x5eed_f11e,
            layers: vec![
                LayerSpec::conv3(3, 8, Downsample::MeanPool2),
                LayerSpec::conv3(8, 8, Downsample::MeanPool2),
                LayerSpec::conv3(8, 16, Downsample::None),
                LayerSpec::conv3(16, 16, Downsample::None),
            ],
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("extractor needs at least one layer"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.kernel % 2 == 0 {
                return Err(Error::config(format!("layer {}: kernel size must be odd, got {}", i + 1, l.kernel)));
            }
            if l.stride == 0 || l.in_channels == 0 || l.out_channels == 0 {
                return Err(Error::config(format!("layer {}: zero stride or channel count", i + 1)));
            }
            if i > 0 && self.layers[i - 1].out_channels != l.in_channels {
                return Err(Error::config(format!(
                    "layer {}: expects {} input channels but layer {} produces {}",
                    i + 1,
                    l.in_channels,
                    i,
                    self.layers[i - 1].out_channels
                )));
            }
        }
        Ok(())
    }

    /// Product of every stride and pooling factor; inputs must be divisible by it.
    pub fn total_downsampling(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.stride * if l.downsample == Downsample::MeanPool2 { 2 } else { 1 })
            .product()
    }
}

/// One layer's `N x M` feature map (or a gradient with the same shape).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer: usize,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros_like(other: &FeatureMap) -> Self {
        FeatureMap { data: vec![0.0; other.data.len()], ..other.clone() }
    }

    /// `M_l`, the spatial size.
    pub fn spatial(&self) -> usize {
        self.width * self.height
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        let m = self.spatial();
        &self.data[channel * m..(channel + 1) * m]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.width == other.width && self.height == other.height
    }
}

/// Feature maps for a set of layers, ordered by layer index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureStack {
    pub maps: Vec<FeatureMap>,
}

impl FeatureStack {
    pub fn layer(&self, layer: usize) -> Option<&FeatureMap> {
        self.maps.iter().find(|m| m.layer == layer)
    }
}

/// Maps an image to feature maps and gradients on those maps back to the image.
pub trait FeatureExtractor: Send + Sync {
    fn layer_count(&self) -> usize;

    /// Rejects input sizes the network cannot process.
    fn check_input(&self, width: usize, height: usize) -> Result<()>;

    fn forward(&self, image: &Image, layers: &[usize]) -> Result<FeatureStack>;

    /// Gradient with respect to the pixels (HWC layout) of `sum_l <upstream_l, F_l(image)>`.
    fn backward(&self, image: &Image, upstream: &[FeatureMap]) -> Result<Vec<f64>>;

    /// Forward pass, a loss head on the features, and backpropagation of the head's gradient.
    fn forward_backward(
        &self,
        image: &Image,
        layers: &[usize],
        head: &mut dyn FnMut(&FeatureStack) -> Result<(f64, Vec<FeatureMap>)>,
    ) -> Result<(f64, Vec<f64>)> {
        let stack = self.forward(image, layers)?;
        let (loss, upstream) = head(&stack)?;
        Ok((loss, self.backward(image, &upstream)?))
    }
}

#[derive(Debug, Clone)]
pub struct ConvExtractor {
    config: ExtractorConfig,
    weights: Vec<Vec<f64>>,
}

struct Stage {
    width: usize,
    height: usize,
    input: Vec<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
}

impl ConvExtractor {
    /// Draws every filter from the seeded generator and scales it to unit Frobenius norm.
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let weights = config
            .layers
            .iter()
            .map(|l| {
                let per_filter = l.in_channels * l.kernel * l.kernel;
                let mut w: Vec<f64> = (0..l.weight_len()).map(|_| StandardNormal.sample(rng.inner())).collect();
                for filter in w.chunks_mut(per_filter) {
                    let norm = filter.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        filter.iter_mut().for_each(|v| *v /= norm);
                    }
                }
                w
            })
            .collect();
        Ok(ConvExtractor { config, weights })
    }

    /// Uses caller-provided filters, laid out `[out][in][ky][kx]` per layer.
    pub fn with_filters(config: ExtractorConfig, weights: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.layers.len() {
            return Err(Error::config("one filter bank per layer required"));
        }
        for (i, (l, w)) in config.layers.iter().zip(&weights).enumerate() {
            if w.len() != l.weight_len() {
                return Err(Error::config(format!(
                    "layer {}: {} filter weights, expected {}",
                    i + 1,
                    w.len(),
                    l.weight_len()
                )));
            }
        }
        Ok(ConvExtractor { config, weights })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer - 1]
    }

    /// Spatial size of layer `layer`'s feature map for a given input size.
    pub fn layer_dims(&self, layer: usize, width: usize, height: usize) -> (usize, usize) {
        let (mut w, mut h) = (width, height);
        for (i, l) in self.config.layers.iter().enumerate() {
            w = w.div_ceil(l.stride);
            h = h.div_ceil(l.stride);
            if i + 1 == layer {
                break;
            }
            if l.downsample == Downsample::MeanPool2 {
                w /= 2;
                h /= 2;
            }
        }
        (w, h)
    }

    fn check_layers(&self, layers: &[usize]) -> Result<usize> {
        let n = self.config.layers.len();
        if let Some(&bad) = layers.iter().find(|&&l| l == 0 || l > n) {
            return Err(Error::config(format!("layer {bad} out of range 1..={n}")));
        }
        Ok(layers.iter().copied().max().unwrap_or(0))
    }

    fn run(&self, image: &Image, depth: usize) -> Result<Vec<Stage>> {
        self.check_input(image.width(), image.height())?;
        let first = &self.config.layers[0];
        if image.channels() != first.in_channels {
            return Err(Error::shape(format!(
                "extractor expects {} input channels, image has {}",
                first.in_channels,
                image.channels()
            )));
        }
        let (mut w, mut h) = (image.width(), image.height());
        let mut input = to_planar(image);
        let mut stages = Vec::with_capacity(depth);
        for (i, l) in self.config.layers.iter().take(depth).enumerate() {
            let (pre, ow, oh) = conv_forward(&input, l, &self.weights[i], w, h);
            let out = match l.activation {
                Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
                Activation::Identity => pre.clone(),
            };
            let next = if l.downsample == Downsample::MeanPool2 && i + 1 < depth {
                Some(pool_forward(&out, l.out_channels, ow, oh))
            } else {
                None
            };
            stages.push(Stage { width: ow, height: oh, input, pre, out });
            let last = stages.last().unwrap();
            match next {
                Some(p) => {
                    input = p;
                    w = ow / 2;
                    h = oh / 2;
                }
                None => {
                    input = last.out.clone();
                    w = ow;
                    h = oh;
                }
            }
        }
        Ok(stages)
    }

    fn collect(&self, stages: &[Stage], layers: &[usize]) -> FeatureStack {
        let mut sorted: Vec<usize> = layers.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        FeatureStack {
            maps: sorted
                .into_iter()
                .map(|l| {
                    let s = &stages[l - 1];
                    FeatureMap {
                        layer: l,
                        channels: self.config.layers[l - 1].out_channels,
                        width: s.width,
                        height: s.height,
                        data: s.out.clone(),
                    }
                })
                .collect(),
        }
    }

    fn backprop(&self, stages: &[Stage], upstream: &[FeatureMap], width: usize, height: usize) -> Result<Vec<f64>> {
        let depth = self.check_layers(&upstream.iter().map(|u| u.layer).collect::<Vec<_>>())?;
        let in_channels = self.config.layers[0].in_channels;
        if depth == 0 {
            return Ok(vec![0.0; width * height * in_channels]);
        }
        let mut grad: Vec<f64> = vec![0.0; stages[depth - 1].out.len()];
        for idx in (0..depth).rev() {
            let spec = &self.config.layers[idx];
            let stage = &stages[idx];
            for u in upstream.iter().filter(|u| u.layer == idx + 1) {
                if u.channels != spec.out_channels || u.width != stage.width || u.height != stage.height {
                    return Err(Error::shape(format!(
                        "upstream gradient for layer {} is {}x{}x{}, features are {}x{}x{}",
                        idx + 1,
                        u.channels,
                        u.width,
                        u.height,
                        spec.out_channels,
                        stage.width,
                        stage.height
                    )));
                }
                grad.iter_mut().zip(&u.data).for_each(|(g, v)| *g += v);
            }
            if spec.activation == Activation::Relu {
                grad.iter_mut().zip(&stage.pre).for_each(|(g, &p)| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let (iw, ih) = if idx == 0 {
                (width, height)
            } else {
                let prev = &stages[idx - 1];
                match self.config.layers[idx - 1].downsample {
                    Downsample::MeanPool2 => (prev.width / 2, prev.height / 2),
                    Downsample::None => (prev.width, prev.height),
                }
            };
            debug_assert_eq!(stage.input.len(), iw * ih * spec.in_channels);
            let grad_in = conv_backward(&grad, spec, &self.weights[idx], iw, ih, stage.width, stage.height);
            grad = if idx > 0 && self.config.layers[idx - 1].downsample == Downsample::MeanPool2 {
                pool_backward(&grad_in, spec.in_channels, iw, ih)
            } else {
                grad_in
            };
        }
        Ok(from_planar(&grad, in_channels, width, height))
    }
}

impl FeatureExtractor for ConvExtractor {
    fn layer_count(&self) -> usize {
        self.config.layers.len()
    }

    fn check_input(&self, width: usize, height: usize) -> Result<()> {
        let factor = self.config.total_downsampling();
        if width % factor != 0 || height % factor != 0 || width == 0 || height == 0 {
            return Err(Error::Divisibility {
                width,
                height,
                factor,
                padded_width: width.div_ceil(factor).max(1) * factor,
                padded_height: height.div_ceil(factor).max(1) * factor,
            });
        }
        Ok(())
    }

    fn forward(&self, image: &Image, layers: &[usize]) -> Result<FeatureStack> {
        let depth = self.check_layers(layers)?;
        let stages = self.run(image, depth)?;
        Ok(self.collect(&stages, layers))
    }

    fn backward(&self, image: &Image, upstream: &[FeatureMap]) -> Result<Vec<f64>> {
        let depth = self.check_layers(&upstream.iter().map(|u| u.layer).collect::<Vec<_>>())?;
        let stages = self.run(image, depth)?;
        self.backprop(&stages, upstream, image.width(), image.height())
    }

    fn forward_backward(
        &self,
        image: &Image,
        layers: &[usize],
        head: &mut dyn FnMut(&FeatureStack) -> Result<(f64, Vec<FeatureMap>)>,
    ) -> Result<(f64, Vec<f64>)> {
        let depth = self.check_layers(layers)?;
        let stages = self.run(image, depth)?;
        let stack = self.collect(&stages, layers);
        let (loss, upstream) = head(&stack)?;
        if upstream.iter().any(|u| u.layer > depth) {
            return Err(Error::shape("loss head returned gradient for a layer it was not given"));
        }
        Ok((loss, self.backprop(&stages, &upstream, image.width(), image.height())?))
    }
}

fn to_planar(image: &Image) -> Vec<f64> {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let mut out = vec![0.0; w * h * c];
    for (p, px) in image.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[ch * w * h + p] = v;
        }
    }
    out
}

fn from_planar(planar: &[f64], c: usize, w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h * c];
    for ch in 0..c {
        for p in 0..w * h {
            out[p * c + ch] = planar[ch * w * h + p];
        }
    }
    out
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `k`.
#[inline]
fn tap_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // input index = o * stride + k - pad must lie in [0, in_len)
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad > k { (in_len + pad - k).div_ceil(stride) } else { 0 };
    (lo.min(out_len), hi.min(out_len))
}

fn conv_forward(input: &[f64], spec: &LayerSpec, weights: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (k, s) = (spec.kernel, spec.stride);
    let pad = k / 2;
    let (ow, oh) = (w.div_ceil(s), h.div_ceil(s));
    let cin = spec.in_channels;
    let mut out = vec![0.0; spec.out_channels * ow * oh];
    out.par_chunks_mut(ow * oh).enumerate().for_each(|(o, plane)| {
        for c in 0..cin {
            let src = &input[c * w * h..(c + 1) * w * h];
            for ky in 0..k {
                let (ylo, yhi) = tap_range(ky, pad, s, h, oh);
                for kx in 0..k {
                    let wt = weights[((o * cin + c) * k + ky) * k + kx];
                    if wt == 0.0 {
                        continue;
                    }
                    let (xlo, xhi) = tap_range(kx, pad, s, w, ow);
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - pad;
                        let row = &src[iy * w..(iy + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let off = kx as isize - pad as isize;
                            let srow = &row[(xlo as isize + off) as usize..(xhi as isize + off) as usize];
                            for (d, &v) in dst[xlo..xhi].iter_mut().zip(srow) {
                                *d += wt * v;
                            }
                        } else {
                            for ox in xlo..xhi {
                                dst[ox] += wt * row[ox * s + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    });
    (out, ow, oh)
}

fn conv_backward(
    grad_out: &[f64],
    spec: &LayerSpec,
    weights: &[f64],
    w: usize,
    h: usize,
    ow: usize,
    oh: usize,
) -> Vec<f64> {
    let (k, s) = (spec.kernel, spec.stride);
    let pad = k / 2;
    let cin = spec.in_channels;
    let mut grad_in = vec![0.0; cin * w * h];
    grad_in.par_chunks_mut(w * h).enumerate().for_each(|(c, plane)| {
        for o in 0..spec.out_channels {
            let g = &grad_out[o * ow * oh..(o + 1) * ow * oh];
            for ky in 0..k {
                let (ylo, yhi) = tap_range(ky, pad, s, h, oh);
                for kx in 0..k {
                    let wt = weights[((o * cin + c) * k + ky) * k + kx];
                    if wt == 0.0 {
                        continue;
                    }
                    let (xlo, xhi) = tap_range(kx, pad, s, w, ow);
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - pad;
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        if s == 1 {
                            let off = kx as isize - pad as isize;
                            let drow = &mut dst[(xlo as isize + off) as usize..(xhi as isize + off) as usize];
                            for (d, &v) in drow.iter_mut().zip(&grow[xlo..xhi]) {
                                *d += wt * v;
                            }
                        } else {
                            for ox in xlo..xhi {
                                dst[ox * s + kx - pad] += wt * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    grad_in
}

fn pool_forward(input: &[f64], c: usize, w: usize, h: usize) -> Vec<f64> {
    let (pw, ph) = (w / 2, h / 2);
    let mut out = vec![0.0; c * pw * ph];
    for ch in 0..c {
        let src = &input[ch * w * h..];
        for y in 0..ph {
            for x in 0..pw {
                let i = 2 * y * w + 2 * x;
                out[ch * pw * ph + y * pw + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    out
}

/// `grad` is on the pooled grid (`w x h`); returns the gradient on the `2w x 2h` grid.
fn pool_backward(grad: &[f64], c: usize, w: usize, h: usize) -> Vec<f64> {
    let (fw, fh) = (w * 2, h * 2);
    let mut out = vec![0.0; c * fw * fh];
    for ch in 0..c {
        for y in 0..fh {
            for x in 0..fw {
                out[ch * fw * fh + y * fw + x] = 0.25 * grad[ch * w * h + (y / 2) * w + x / 2];
            }
        }
    }
    out
}
