//! C ABI over the `vidstyle` engine.
//!
//! Every fallible call returns a [`VsStatus`]. On failure the message is kept in a
//! thread-local slot readable with [`vs_last_error_message`]. Handles are opaque and
//! owned by the caller until passed to the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vidstyle::features::{ConvExtractor, ExtractorConfig};
use vidstyle::flow::{self, FlowField, FlowPair};
use vidstyle::image::{self, Image};
use vidstyle::losses::LossWeights;
use vidstyle::pipeline::{stylize_single, NoiseConfig};
use vidstyle::solver::SolverConfig;
use vidstyle::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Config = 6,
    Numeric = 7,
    Panic = 8,
}

/// Image with `f64` samples in `[0, 1]`, row-major, channels interleaved.
pub struct VsImage(Image);

/// Dense two-channel optical flow.
pub struct VsFlow(FlowField);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VsStylizeOptions {
    /// Seed of the noise initialization.
    pub seed: u64,
    /// 0 keeps the solver default.
    pub max_iterations: usize,
    /// Use the fixed benchmark weights instead of the per-resolution table.
    pub benchmark_weights: bool,
    /// Loosen the convergence threshold.
    pub relaxed: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> VsStatus {
    match err {
        Error::Io { .. } | Error::MissingFiles(_) => VsStatus::Io,
        Error::Format { .. } | Error::UnsupportedFormat(_) | Error::NotAFlowFile { .. } => VsStatus::Format,
        Error::Shape(_) | Error::Divisibility { .. } => VsStatus::Shape,
        Error::Config(_) | Error::Validation(_) => VsStatus::Config,
        Error::NonFinite { .. } => VsStatus::Numeric,
    }
}

struct Fail(VsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            VsStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Fail(VsStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn vs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn vs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `data` must point to `width * height * channels` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn vs_image_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut VsImage,
) -> VsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Fail(VsStatus::InvalidArgument, "image size overflows".into()))?;
        let pixels = std::slice::from_raw_parts(data, n).to_vec();
        put(out, VsImage(Image::new(width, height, channels, pixels)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vs_image_read_ppm(path: *const c_char, out: *mut *mut VsImage) -> VsStatus {
    guard(|| {
        let path = path_arg(path)?;
        put(out, VsImage(image::read_ppm(path)?))
    })
}

/// Writes an 8-bit binary PPM.
///
/// # Safety
/// `img` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vs_image_write_ppm(img: *const VsImage, path: *const c_char) -> VsStatus {
    guard(|| {
        let img = handle(img, "image")?;
        image::write_ppm(&img.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vs_image_width(img: *const VsImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vs_image_height(img: *const VsImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vs_image_channels(img: *const VsImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.channels())
}

/// Copies the samples into `dst`, which must hold exactly `width * height * channels`.
///
/// # Safety
/// `img` must be a live handle and `dst` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vs_image_copy_data(img: *const VsImage, dst: *mut f64, len: usize) -> VsStatus {
    guard(|| {
        let img = handle(img, "image")?;
        if dst.is_null() {
            return Err(null("dst"));
        }
        if len != img.0.len() {
            return Err(Fail(VsStatus::Shape, format!("buffer holds {len} values, image has {}", img.0.len())));
        }
        std::slice::from_raw_parts_mut(dst, len).copy_from_slice(img.0.data());
        Ok(())
    })
}

/// # Safety
/// `img` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn vs_image_free(img: *mut VsImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// `data` holds `(u, v)` pairs, row-major.
///
/// # Safety
/// `data` must point to `2 * width * height` readable floats.
#[no_mangle]
pub unsafe extern "C" fn vs_flow_new(width: usize, height: usize, data: *const f32, out: *mut *mut VsFlow) -> VsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(2))
            .ok_or_else(|| Fail(VsStatus::InvalidArgument, "flow size overflows".into()))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        put(out, VsFlow(FlowField::new(width, height, values)?))
    })
}

/// Reads a Middlebury `.flo` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vs_flow_read_flo(path: *const c_char, out: *mut *mut VsFlow) -> VsStatus {
    guard(|| {
        let path = path_arg(path)?;
        put(out, VsFlow(flow::read_flo(path)?))
    })
}

/// # Safety
/// `flow` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vs_flow_width(flow: *const VsFlow) -> usize {
    flow.as_ref().map_or(0, |f| f.0.width())
}

/// # Safety
/// `flow` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vs_flow_height(flow: *const VsFlow) -> usize {
    flow.as_ref().map_or(0, |f| f.0.height())
}

/// # Safety
/// `flow` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn vs_flow_free(flow: *mut VsFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Backward warp: `out(x) = src(x + backward(x))`, bilinear, borders clamped.
///
/// # Safety
/// `src` and `backward` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vs_warp_image(src: *const VsImage, backward: *const VsFlow, out: *mut *mut VsImage) -> VsStatus {
    guard(|| {
        let src = handle(src, "src")?;
        let backward = handle(backward, "backward")?;
        put(out, VsImage(flow::warp_image(&src.0, &backward.0)?))
    })
}

/// Per-pixel temporal weights on the later frame's grid: 0 where the forward-backward
/// check or the motion-boundary check fails, 1 elsewhere.
///
/// # Safety
/// Both flows must be live handles; `dst` must point to `len == width * height`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vs_consistency_weights(
    forward: *const VsFlow,
    backward: *const VsFlow,
    dst: *mut f64,
    len: usize,
) -> VsStatus {
    guard(|| {
        let forward = handle(forward, "forward")?;
        let backward = handle(backward, "backward")?;
        if dst.is_null() {
            return Err(null("dst"));
        }
        let pair = FlowPair::new(forward.0.clone(), backward.0.clone())?;
        let weights = flow::consistency_weights(&pair);
        if len != weights.data().len() {
            return Err(Fail(VsStatus::Shape, format!("buffer holds {len} values, mask has {}", weights.data().len())));
        }
        std::slice::from_raw_parts_mut(dst, len).copy_from_slice(weights.data());
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn vs_stylize_options_default() -> VsStylizeOptions {
    VsStylizeOptions { seed: NoiseConfig::default().seed, max_iterations: 0, benchmark_weights: false, relaxed: false }
}

/// Single-image transfer from noise with the built-in extractor.
///
/// # Safety
/// `content` and `style` must be live handles; `options` may be null for defaults;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vs_stylize_image(
    content: *const VsImage,
    style: *const VsImage,
    options: *const VsStylizeOptions,
    out: *mut *mut VsImage,
) -> VsStatus {
    guard(|| {
        let content = &handle(content, "content")?.0;
        let style = &handle(style, "style")?.0;
        let opts = options.as_ref().copied().unwrap_or_else(|| vs_stylize_options_default());
        if out.is_null() {
            return Err(null("out"));
        }
        let extractor = ConvExtractor::new(ExtractorConfig::default())?;
        let weights = if opts.benchmark_weights {
            LossWeights::benchmark()
        } else {
            LossWeights::for_resolution(content.width(), content.height())
        };
        let mut solver = SolverConfig::default();
        if opts.max_iterations > 0 {
            solver.max_iterations = opts.max_iterations;
        }
        if opts.relaxed {
            solver = solver.relaxed();
        }
        let noise = NoiseConfig { seed: opts.seed, ..NoiseConfig::default() };
        let init = noise.frame_noise(0, content.width(), content.height(), content.channels())?;
        let (result, _) = stylize_single(&extractor, content, style, &init, &weights, &solver)?;
        put(out, VsImage(result))
    })
}
