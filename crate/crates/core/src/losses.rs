//! Content, style and temporal losses with their exact gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureMap, FeatureStack};
use crate::image::{Image, WeightMask};

/// `G_ij = sum_k F_ik F_jk` for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub layer: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl GramMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

pub fn gram(features: &FeatureMap) -> GramMatrix {
    let n = features.channels;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let fi = features.row(i);
        for j in i..n {
            let v: f64 = fi.iter().zip(features.row(j)).map(|(a, b)| a * b).sum();
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    GramMatrix { layer: features.layer, n, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalNorm {
    #[default]
    Squared,
    Absolute,
}

/// Loss weights, the layer roles and the long-term offset set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub content_layers: Vec<usize>,
    pub style_layers: Vec<usize>,
    /// Offsets `j` of the earlier frames `i - j` each frame is tied to; strictly increasing.
    pub offsets: Vec<usize>,
    #[serde(default)]
    pub temporal_norm: TemporalNorm,
}

impl Default for LossWeights {
    /// The benchmark weighting `(1, 100, 400)` with short-term consistency only.
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 100.0,
            gamma: 400.0,
            content_layers: vec![3],
            style_layers: vec![1, 2, 3, 4],
            offsets: vec![1],
            temporal_norm: TemporalNorm::Squared,
        }
    }
}

/// Resolution anchors `(width, height, alpha, beta, gamma)` for the default weights.
pub const RESOLUTION_WEIGHTS: [(usize, usize, f64, f64, f64); 3] = [
    (350, 450, 1.0, 20.0, 200.0),
    (768, 432, 1.0, 40.0, 200.0),
    (1024, 436, 1.0, 100.0, 400.0),
];

/// `(alpha, beta, gamma)` used for the short-term benchmark.
pub const BENCHMARK_WEIGHTS: (f64, f64, f64) = (1.0, 100.0, 400.0);

impl LossWeights {
    /// Weights of the anchor resolution closest in pixel count.
    pub fn for_resolution(width: usize, height: usize) -> Self {
        let pixels = (width * height) as i64;
        let &(_, _, alpha, beta, gamma) = RESOLUTION_WEIGHTS
            .iter()
            .min_by_key(|(w, h, ..)| ((w * h) as i64 - pixels).abs())
            .expect("non-empty table");
        LossWeights { alpha, beta, gamma, ..Default::default() }
    }

    pub fn benchmark() -> Self {
        let (alpha, beta, gamma) = BENCHMARK_WEIGHTS;
        LossWeights { alpha, beta, gamma, ..Default::default() }
    }

    /// Absolute-error temporal penalty with the temporal weight doubled.
    pub fn with_robust_temporal(mut self) -> Self {
        if self.temporal_norm != TemporalNorm::Absolute {
            self.temporal_norm = TemporalNorm::Absolute;
            self.gamma *= 2.0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if self.offsets.is_empty() || self.offsets[0] == 0 || self.offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "offsets must be strictly increasing positive integers, got {:?}",
                self.offsets
            )));
        }
        Ok(())
    }

    /// Union of content and style layers, sorted.
    pub fn feature_layers(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.content_layers.iter().chain(&self.style_layers).copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

/// Penalize deviation of the current frame from `warped` where `weights` is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTerm {
    pub warped: Image,
    pub weights: WeightMask,
}

fn layer_pair<'a>(a: &'a FeatureStack, b: &'a FeatureStack, layer: usize) -> Result<(&'a FeatureMap, &'a FeatureMap)> {
    let fa = a.layer(layer).ok_or_else(|| Error::shape(format!("layer {layer} missing from features")))?;
    let fb = b.layer(layer).ok_or_else(|| Error::shape(format!("layer {layer} missing from target features")))?;
    if !fa.same_shape(fb) {
        return Err(Error::shape(format!("layer {layer}: feature shapes differ")));
    }
    Ok((fa, fb))
}

/// `sum_l 1/(N M) sum (F - P)^2`; gradient `2 (F - P) / (N M)` per layer.
pub fn content_loss_grad(
    features: &FeatureStack,
    target: &FeatureStack,
    layers: &[usize],
) -> Result<(f64, Vec<FeatureMap>)> {
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(layers.len());
    for &l in layers {
        let (f, p) = layer_pair(features, target, l)?;
        let scale = 1.0 / (f.channels * f.spatial()) as f64;
        let mut grad = FeatureMap::zeros_like(f);
        let mut sum = 0.0;
        for ((g, a), b) in grad.data.iter_mut().zip(&f.data).zip(&p.data) {
            let d = a - b;
            sum += d * d;
            *g = 2.0 * scale * d;
        }
        loss += scale * sum;
        grads.push(grad);
    }
    Ok((loss, grads))
}

/// `sum_l 1/(N^2 M^2) sum (G - A)^2`; gradient `4 (G - A) F / (N^2 M^2)` per layer.
pub fn style_loss_grad(
    features: &FeatureStack,
    targets: &[GramMatrix],
    layers: &[usize],
) -> Result<(f64, Vec<FeatureMap>)> {
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(layers.len());
    for &l in layers {
        let f = features.layer(l).ok_or_else(|| Error::shape(format!("layer {l} missing from features")))?;
        let a = targets
            .iter()
            .find(|g| g.layer == l)
            .ok_or_else(|| Error::shape(format!("no style Gram matrix for layer {l}")))?;
        let n = f.channels;
        if a.n != n {
            return Err(Error::shape(format!("layer {l}: Gram {}x{} vs {n} channels", a.n, a.n)));
        }
        let m = f.spatial();
        let scale = 1.0 / ((n * n) as f64 * (m * m) as f64);
        let g = gram(f);
        let diff: Vec<f64> = g.data.iter().zip(&a.data).map(|(x, y)| x - y).collect();
        loss += scale * diff.iter().map(|d| d * d).sum::<f64>();
        let mut grad = FeatureMap::zeros_like(f);
        for i in 0..n {
            let out = &mut grad.data[i * m..(i + 1) * m];
            for j in 0..n {
                let c = 4.0 * scale * diff[i * n + j];
                if c != 0.0 {
                    for (o, v) in out.iter_mut().zip(f.row(j)) {
                        *o += c * v;
                    }
                }
            }
        }
        grads.push(grad);
    }
    Ok((loss, grads))
}

/// `(1/D) sum_k c_k (x_k - w_k)^2` (or `|x_k - w_k|`) with the pixel weight shared across channels.
pub fn temporal_loss_grad(x: &Image, term: &TemporalTerm, norm: TemporalNorm) -> Result<(f64, Vec<f64>)> {
    x.ensure_same_shape(&term.warped, "temporal loss")?;
    term.weights.ensure_matches(x.width(), x.height(), "temporal loss")?;
    let d = x.len() as f64;
    let ch = x.channels();
    let mut loss = 0.0;
    let mut grad = vec![0.0; x.len()];
    for (k, ((g, &a), &b)) in grad.iter_mut().zip(x.data()).zip(term.warped.data()).enumerate() {
        let c = term.weights.data()[k / ch];
        let r = a - b;
        match norm {
            TemporalNorm::Squared => {
                loss += c * r * r;
                *g = 2.0 * c * r / d;
            }
            TemporalNorm::Absolute => {
                loss += c * r.abs();
                *g = if r > 0.0 {
                    c / d
                } else if r < 0.0 {
                    -c / d
                } else {
                    0.0
                };
            }
        }
    }
    Ok((loss / d, grad))
}

/// Precomputed targets for one frame: content features of `p`, style Grams of `a`,
/// and the temporal terms tying the frame to earlier stylized frames.
#[derive(Debug, Clone)]
pub struct FrameTargets {
    pub content: FeatureStack,
    pub style: Vec<GramMatrix>,
    pub temporal: Vec<TemporalTerm>,
}

impl FrameTargets {
    pub fn new(
        extractor: &dyn FeatureExtractor,
        content: &Image,
        style: &StyleTargets,
        weights: &LossWeights,
    ) -> Result<Self> {
        Ok(FrameTargets {
            content: extractor.forward(content, &weights.content_layers)?,
            style: style.grams.clone(),
            temporal: Vec::new(),
        })
    }

    pub fn with_temporal(mut self, terms: Vec<TemporalTerm>) -> Self {
        self.temporal = terms;
        self
    }
}

/// Style Gram matrices of a style image resampled to the working resolution.
#[derive(Debug, Clone)]
pub struct StyleTargets {
    pub grams: Vec<GramMatrix>,
}

impl StyleTargets {
    pub fn new(
        extractor: &dyn FeatureExtractor,
        style: &Image,
        width: usize,
        height: usize,
        layers: &[usize],
    ) -> Result<Self> {
        let resized = style.resize(width, height);
        let feats = extractor.forward(&resized, layers)?;
        Ok(StyleTargets { grams: feats.maps.iter().map(gram).collect() })
    }
}

/// Weighted loss components (each already multiplied by its weight) and the total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub content: f64,
    pub style: f64,
    pub temporal: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.content + self.style + self.temporal
    }
}

/// `alpha * content + beta * style + gamma * sum(temporal)` and its pixel gradient.
pub fn total_loss_grad(
    x: &Image,
    targets: &FrameTargets,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let layers = weights.feature_layers();
    let mut parts = LossBreakdown::default();
    let mut head = |stack: &FeatureStack| -> Result<(f64, Vec<FeatureMap>)> {
        let (lc, gc) = content_loss_grad(stack, &targets.content, &weights.content_layers)?;
        let (ls, gs) = style_loss_grad(stack, &targets.style, &weights.style_layers)?;
        parts.content = weights.alpha * lc;
        parts.style = weights.beta * ls;
        let mut upstream: Vec<FeatureMap> = Vec::new();
        for (w, grads) in [(weights.alpha, gc), (weights.beta, gs)] {
            if w == 0.0 {
                continue;
            }
            for mut g in grads {
                g.data.iter_mut().for_each(|v| *v *= w);
                match upstream.iter_mut().find(|u| u.layer == g.layer) {
                    Some(u) => u.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b),
                    None => upstream.push(g),
                }
            }
        }
        Ok((parts.content + parts.style, upstream))
    };
    let (_, mut grad) = if weights.alpha == 0.0 && weights.beta == 0.0 {
        (0.0, vec![0.0; x.len()])
    } else {
        extractor.forward_backward(x, &layers, &mut head)?
    };
    for term in &targets.temporal {
        let (lt, gt) = temporal_loss_grad(x, term, weights.temporal_norm)?;
        parts.temporal += weights.gamma * lt;
        if weights.gamma != 0.0 {
            grad.iter_mut().zip(&gt).for_each(|(g, t)| *g += weights.gamma * t);
        }
    }
    Ok((parts, grad))
}
