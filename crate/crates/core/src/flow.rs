//! Optical flow fields, backward warping and flow-reliability masks.
//!
//! Conventions: the *forward* flow of a pair `(a, b)` lives on frame `a`'s grid and
//! points into frame `b`; the *backward* flow lives on frame `b`'s grid and points
//! back into `a`. Warping is always backward (pull) warping, so a warped image,
//! its disocclusion mask and its motion-boundary mask all live on frame `b`'s grid.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{bilinear_axis, Image, WeightMask};

/// `"PIEH"` read as a little-endian `f32` is 202021.25.
pub const FLO_MAGIC: [u8; 4] = *b"PIEH";

/// Dense `height x width` field of `(u, v)` displacements in pixels.
///
/// Values are kept as `f32` so that `.flo` files re-encode byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape(format!("degenerate flow field {width}x{height}")));
        }
        if data.len() != width * height * 2 {
            return Err(Error::shape(format!(
                "flow data length {} != {width}x{height}x2",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("flow component {i} is not finite")));
        }
        Ok(FlowField { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField { width, height, data: vec![0.0; width * height * 2] }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self::from_fn(width, height, |_, _| (u, v))
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut data = Vec::with_capacity(width * height * 2);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                data.push(u);
                data.push(v);
            }
        }
        FlowField { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (f64::from(self.data[i]), f64::from(self.data[i + 1]))
    }

    /// Bilinear sample of both components at a fractional, edge-clamped position.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1, tx) = bilinear_axis(x, self.width);
        let (y0, y1, ty) = bilinear_axis(y, self.height);
        let at = |xx: usize, yy: usize| self.get(xx, yy);
        let (a, b, c, d) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
        let lerp = |p: f64, q: f64, t: f64| p * (1.0 - t) + q * t;
        (
            lerp(lerp(a.0, b.0, tx), lerp(c.0, d.0, tx), ty),
            lerp(lerp(a.1, b.1, tx), lerp(c.1, d.1, tx), ty),
        )
    }

    fn same_dims(&self, other: &FlowField) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Forward (`a -> b`) and backward (`b -> a`) flow between two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair {
    pub forward: FlowField,
    pub backward: FlowField,
}

impl FlowPair {
    pub fn new(forward: FlowField, backward: FlowField) -> Result<Self> {
        if !forward.same_dims(&backward) {
            return Err(Error::shape(format!(
                "flow pair: forward {}x{} vs backward {}x{}",
                forward.width, forward.height, backward.width, backward.height
            )));
        }
        Ok(FlowPair { forward, backward })
    }

    /// The same pair seen from the other frame: `(b, a)`.
    pub fn reversed(&self) -> FlowPair {
        FlowPair { forward: self.backward.clone(), backward: self.forward.clone() }
    }

    pub fn width(&self) -> usize {
        self.forward.width
    }

    pub fn height(&self) -> usize {
        self.forward.height
    }
}

/// Boolean per-pixel predicate (flagged = `true`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        PixelMask { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Weight mask with flagged pixels at 0 and the rest at 1.
    pub fn to_weights(&self) -> WeightMask {
        WeightMask::from_bools(self.width, self.height, self.data.iter().map(|&f| !f))
    }
}

/// Coefficients of the forward-backward and motion-boundary tests.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyParams {
    pub disocclusion_rel: f64,
    pub disocclusion_abs: f64,
    pub boundary_rel: f64,
    pub boundary_abs: f64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        ConsistencyParams {
            disocclusion_rel: 0.01,
            disocclusion_abs: 0.5,
            boundary_rel: 0.01,
            boundary_abs: 0.002,
        }
    }
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    let fmt = |offset: usize, message: String| Error::Format { what: "flo", offset, message };
    if bytes.len() < 4 {
        return Err(fmt(0, "file shorter than magic".into()));
    }
    if bytes[..4] != FLO_MAGIC {
        return Err(Error::NotAFlowFile { found: u32::from_le_bytes(bytes[..4].try_into().unwrap()) });
    }
    if bytes.len() < 12 {
        return Err(fmt(bytes.len(), "truncated header".into()));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 {
        return Err(fmt(4, format!("invalid width {width}")));
    }
    if height <= 0 {
        return Err(fmt(8, format!("invalid height {height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let need = width * height * 8;
    let payload = &bytes[12..];
    if payload.len() != need {
        return Err(fmt(
            12 + payload.len().min(need),
            format!("payload is {} bytes, header implies {need}", payload.len()),
        ));
    }
    let mut data = Vec::with_capacity(width * height * 2);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fmt(12 + i * 4, "non-finite flow value".into()));
        }
        data.push(v);
    }
    Ok(FlowField { width, height, data })
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.data.len() * 4);
    out.extend_from_slice(&FLO_MAGIC);
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for v in &flow.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes)
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

/// Pull-warp `src` onto the grid of `backward_flow`: `out(p) = src(p + flow(p))`.
pub fn warp_image(src: &Image, backward_flow: &FlowField) -> Result<Image> {
    if src.width() != backward_flow.width || src.height() != backward_flow.height {
        return Err(Error::shape(format!(
            "warp: image {}x{} vs flow {}x{}",
            src.width(),
            src.height(),
            backward_flow.width,
            backward_flow.height
        )));
    }
    let c = src.channels();
    let mut out = vec![0.0; src.len()];
    let mut px = vec![0.0; c];
    for y in 0..src.height() {
        for x in 0..src.width() {
            let (u, v) = backward_flow.get(x, y);
            src.sample_bilinear(x as f64 + u, y as f64 + v, &mut px);
            let i = (y * src.width() + x) * c;
            out[i..i + c].copy_from_slice(&px);
        }
    }
    Image::from_clamped(src.width(), src.height(), c, out)
}

/// Forward flow resampled onto the second frame: `w~(p) = w(p + w^(p))`.
pub fn warp_flow_forward(pair: &FlowPair) -> FlowField {
    let (fw, bw) = (&pair.forward, &pair.backward);
    FlowField::from_fn(bw.width, bw.height, |x, y| {
        let (du, dv) = bw.get(x, y);
        let (u, v) = fw.sample(x as f64 + du, y as f64 + dv);
        (u as f32, v as f32)
    })
}

/// `first` followed by `second`: `out(p) = first(p) + second(p + first(p))`.
///
/// Composing backward flows `i -> i-1` and `i-1 -> i-2` yields `i -> i-2`.
pub fn compose_flows(first: &FlowField, second: &FlowField) -> Result<FlowField> {
    if !first.same_dims(second) {
        return Err(Error::shape("compose_flows: dimension mismatch"));
    }
    Ok(FlowField::from_fn(first.width, first.height, |x, y| {
        let (u1, v1) = first.get(x, y);
        let (u2, v2) = second.sample(x as f64 + u1, y as f64 + v1);
        ((u1 + u2) as f32, (v1 + v2) as f32)
    }))
}

pub fn disocclusion_mask(pair: &FlowPair) -> PixelMask {
    disocclusion_mask_with(pair, &ConsistencyParams::default())
}

/// Flags pixels where `|w~ + w^|^2 > rel (|w~|^2 + |w^|^2) + abs`.
pub fn disocclusion_mask_with(pair: &FlowPair, params: &ConsistencyParams) -> PixelMask {
    let warped = warp_flow_forward(pair);
    let bw = &pair.backward;
    PixelMask::from_fn(bw.width, bw.height, |x, y| {
        let (wu, wv) = warped.get(x, y);
        let (bu, bv) = bw.get(x, y);
        let sum = (wu + bu).powi(2) + (wv + bv).powi(2);
        let mag = wu * wu + wv * wv + bu * bu + bv * bv;
        sum > params.disocclusion_rel * mag + params.disocclusion_abs
    })
}

pub fn motion_boundary_mask(backward: &FlowField) -> PixelMask {
    motion_boundary_mask_with(backward, &ConsistencyParams::default())
}

/// Flags pixels where `|grad u^|^2 + |grad v^|^2 > rel |w^|^2 + abs`.
///
/// Gradients are central differences, one-sided on the border.
pub fn motion_boundary_mask_with(backward: &FlowField, params: &ConsistencyParams) -> PixelMask {
    let (w, h) = (backward.width, backward.height);
    let diff = |lo: usize, hi: usize, a: (f64, f64), b: (f64, f64)| -> (f64, f64) {
        if hi == lo {
            (0.0, 0.0)
        } else {
            let s = (hi - lo) as f64;
            ((b.0 - a.0) / s, (b.1 - a.1) / s)
        }
    };
    PixelMask::from_fn(w, h, |x, y| {
        let (xl, xh) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yl, yh) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let (ux, vx) = diff(xl, xh, backward.get(xl, y), backward.get(xh, y));
        let (uy, vy) = diff(yl, yh, backward.get(x, yl), backward.get(x, yh));
        let grad = ux * ux + uy * uy + vx * vx + vy * vy;
        let (u, v) = backward.get(x, y);
        grad > params.boundary_rel * (u * u + v * v) + params.boundary_abs
    })
}

pub fn consistency_weights(pair: &FlowPair) -> WeightMask {
    consistency_weights_with(pair, &ConsistencyParams::default())
}

/// 0 where the pair is disoccluded or on a motion boundary, 1 elsewhere.
pub fn consistency_weights_with(pair: &FlowPair, params: &ConsistencyParams) -> WeightMask {
    let occ = disocclusion_mask_with(pair, params);
    let mb = motion_boundary_mask_with(&pair.backward, params);
    WeightMask::from_bools(
        occ.width,
        occ.height,
        occ.data.iter().zip(&mb.data).map(|(&a, &b)| !(a || b)),
    )
}

/// Long-term weights for one offset: the short-term weights of `target_offset`
/// minus those of every closer offset, floored at zero.
///
/// `short_weights` holds `(j, c^(i-j, i))` with strictly increasing `j`.
pub fn long_term_weights(short_weights: &[(usize, WeightMask)], target_offset: usize) -> Result<WeightMask> {
    if short_weights.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::config("long-term offsets must be strictly increasing"));
    }
    let (_, target) = short_weights
        .iter()
        .find(|(j, _)| *j == target_offset)
        .ok_or_else(|| Error::config(format!("offset {target_offset} has no weight mask")))?;
    let mut data = target.data().to_vec();
    for (j, mask) in short_weights.iter().take_while(|(j, _)| *j < target_offset) {
        mask.ensure_matches(target.width(), target.height(), &format!("long-term weights, offset {j}"))?;
        for (d, c) in data.iter_mut().zip(mask.data()) {
            *d -= c;
        }
    }
    for d in &mut data {
        *d = d.max(0.0);
    }
    WeightMask::new(target.width(), target.height(), data)
}

/// Visualization of flow reliability: disocclusions black, motion boundaries gray, rest white.
pub fn reliability_map(pair: &FlowPair) -> WeightMask {
    let occ = disocclusion_mask(pair);
    let mb = motion_boundary_mask(&pair.backward);
    let data = occ
        .data
        .iter()
        .zip(&mb.data)
        .map(|(&o, &m)| if o { 0.0 } else if m { 0.5 } else { 1.0 })
        .collect();
    WeightMask::new(occ.width, occ.height, data).expect("values in [0, 1]")
}
