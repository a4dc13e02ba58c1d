//! Images, weight masks, deterministic noise, and the PPM/PGM codecs.
//!
//! Pixels are `f64` in `[0, 1]`, stored row-major with channels interleaved
//! (`data[(y * width + x) * channels + c]`).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense `height x width x channels` raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Wraps `data`, rejecting wrong lengths and values that are non-finite or outside `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, channels, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "image component {i} has value {} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    /// Like [`Image::new`] but clamps into `[0, 1]`; only NaN is rejected.
    pub fn from_clamped(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        check_len(width, height, channels, data.len())?;
        if let Some(i) = data.iter().position(|v| v.is_nan()) {
            return Err(Error::Validation(format!("image component {i} is NaN")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        let value = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
        Image { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(x, y, c);
                    data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
                }
            }
        }
        Image { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of scalar components, `width * height * channels`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Mean squared difference over all components.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other, "mse")?;
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Quantize every component to the 8-bit grid used by the PPM codec.
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| f64::from(to_byte(v)) / 255.0).collect(),
            ..self.clone()
        }
    }

    /// Bilinear resampling to a new resolution (pixel-center aligned, edge clamped).
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Vec::with_capacity(width * height * self.channels);
        let mut px = vec![0.0; self.channels];
        for y in 0..height {
            for x in 0..width {
                let fx = (x as f64 + 0.5) * sx - 0.5;
                let fy = (y as f64 + 0.5) * sy - 0.5;
                self.sample_bilinear(fx, fy, &mut px);
                out.extend_from_slice(&px);
            }
        }
        Image { width, height, channels: self.channels, data: out }
    }

    /// Bilinear sample at a fractional position; coordinates are clamped to the image.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64]) {
        let (x0, x1, tx) = bilinear_axis(x, self.width);
        let (y0, y1, ty) = bilinear_axis(y, self.height);
        let c = self.channels;
        let i00 = (y0 * self.width + x0) * c;
        let i01 = (y0 * self.width + x1) * c;
        let i10 = (y1 * self.width + x0) * c;
        let i11 = (y1 * self.width + x1) * c;
        for (k, o) in out.iter_mut().enumerate().take(c) {
            let top = self.data[i00 + k] * (1.0 - tx) + self.data[i01 + k] * tx;
            let bot = self.data[i10 + k] * (1.0 - tx) + self.data[i11 + k] * tx;
            *o = top * (1.0 - ty) + bot * ty;
        }
    }
}

/// Clamped linear-interpolation stencil along one axis: `(lo, hi, frac)`.
#[inline]
pub(crate) fn bilinear_axis(t: f64, len: usize) -> (usize, usize, f64) {
    let max = (len - 1) as f64;
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, max) };
    let lo = t.floor();
    let frac = t - lo;
    let lo = lo as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, frac)
}

fn check_len(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 || channels == 0 {
        return Err(Error::shape(format!("degenerate image {width}x{height}x{channels}")));
    }
    if len != width * height * channels {
        return Err(Error::shape(format!(
            "data length {len} != {width}x{height}x{channels}"
        )));
    }
    Ok(())
}

/// Per-pixel weights in `[0, 1]`, shared by all channels of the pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl WeightMask {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, 1, data.len())?;
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "mask value {} at pixel {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(WeightMask { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        WeightMask { width, height, data: vec![value.clamp(0.0, 1.0); width * height] }
    }

    pub fn from_bools(width: usize, height: usize, keep: impl IntoIterator<Item = bool>) -> Self {
        let data: Vec<f64> = keep.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        debug_assert_eq!(data.len(), width * height);
        WeightMask { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub(crate) fn ensure_matches(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: mask {}x{} vs {width}x{height}",
                self.width, self.height
            )))
        }
    }
}

/// Seeded generator; equal seeds (and streams) give identical sequences on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream `stream` of the generator seeded with `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

pub const DEFAULT_INIT_MEAN: f64 = 0.5;
pub const DEFAULT_INIT_STDDEV: f64 = 0.2;

/// I.i.d. normal noise clamped to `[0, 1]`.
pub fn gaussian_init(
    width: usize,
    height: usize,
    channels: usize,
    rng: &mut Rng,
    mean: f64,
    stddev: f64,
) -> Result<Image> {
    if !(stddev >= 0.0 && stddev.is_finite() && mean.is_finite()) {
        return Err(Error::config(format!("invalid noise parameters mean={mean} stddev={stddev}")));
    }
    let n = width * height * channels;
    let data = if stddev == 0.0 {
        vec![mean; n]
    } else {
        let normal = Normal::new(mean, stddev).map_err(|e| Error::config(e.to_string()))?;
        (0..n).map(|_| normal.sample(rng.inner())).collect()
    };
    Image::from_clamped(width, height, channels, data)
}

/// `scalar_a * mask * a + (1 - scalar_a + scalar_a * (1 - mask)) * b`, mask shared across channels.
///
/// This is the multi-pass initialization blend: with `scalar_a = delta` and `mask = c`
/// it propagates the warped neighbour `a` into the consistent region of `b`.
pub fn blend(a: &Image, b: &Image, mask_a: &WeightMask, scalar_a: f64) -> Result<Image> {
    a.ensure_same_shape(b, "blend")?;
    mask_a.ensure_matches(a.width, a.height, "blend")?;
    if !(0.0..=1.0).contains(&scalar_a) {
        return Err(Error::config(format!("blend factor {scalar_a} outside [0, 1]")));
    }
    let c = a.channels;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .enumerate()
        .map(|(k, (&va, &vb))| {
            let m = mask_a.data[k / c];
            scalar_a * m * va + (1.0 - scalar_a + scalar_a * (1.0 - m)) * vb
        })
        .collect();
    Image::from_clamped(a.width, a.height, c, data)
}

#[inline]
pub(crate) fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], what: &'static str) -> Result<Header> {
    let err = |offset: usize, message: &str| Error::Format { what, offset, message: message.to_string() };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(err(0, "missing netpbm magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected decimal number in header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| err(start, "header number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(err(pos, "expected single whitespace after maxval")),
        None => return Err(err(pos, "truncated header")),
    }
    Ok(Header { magic, width: fields[0], height: fields[1], maxval: fields[2], data_offset: pos })
}

fn decode_netpbm(bytes: &[u8], expect: &[u8; 2], channels: usize, what: &'static str) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() >= 2 && bytes[0] == b'P' && &bytes[..2] != expect {
        return Err(Error::UnsupportedFormat(format!(
            "{what} expects {}, found {}",
            String::from_utf8_lossy(expect),
            String::from_utf8_lossy(&bytes[..2])
        )));
    }
    let h = parse_header(bytes, what)?;
    debug_assert_eq!(&h.magic, expect);
    if h.maxval != 255 {
        return Err(Error::Format {
            what,
            offset: h.data_offset - 1,
            message: format!("unsupported maxval {} (only 255)", h.maxval),
        });
    }
    if h.width == 0 || h.height == 0 {
        return Err(Error::Format { what, offset: 2, message: "zero image dimension".into() });
    }
    let need = h.width * h.height * channels;
    let payload = &bytes[h.data_offset..];
    if payload.len() < need {
        return Err(Error::Format {
            what,
            offset: bytes.len(),
            message: format!("truncated payload: expected {need} bytes, found {}", payload.len()),
        });
    }
    Ok((h.width, h.height, payload[..need].to_vec()))
}

/// Decode a binary P6 file (maxval 255) into an RGB image.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (w, h, raw) = decode_netpbm(bytes, b"P6", 3, "PPM")?;
    let data = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Image::new(w, h, 3, data)
}

pub fn encode_ppm(image: &Image) -> Result<Vec<u8>> {
    if image.channels != 3 {
        return Err(Error::shape(format!("PPM needs 3 channels, image has {}", image.channels)));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ppm(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decode a binary P5 file (maxval 255) into a weight mask.
pub fn decode_pgm(bytes: &[u8]) -> Result<WeightMask> {
    let (w, h, raw) = decode_netpbm(bytes, b"P5", 1, "PGM")?;
    WeightMask::new(w, h, raw.into_iter().map(|b| f64::from(b) / 255.0).collect())
}

pub fn encode_pgm(mask: &WeightMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&v| to_byte(v)));
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<WeightMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_pgm(mask: &WeightMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}
