//! C interface to the scoring pipeline.
//!
//! Every fallible function returns a [`ZvStatus`]. On failure the message is
//! kept per thread and can be copied out with [`zv_last_error`]. Handles are
//! opaque and must be released with their matching `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use zoomvqa::harness::{self, checkpoint, eval, RunConfig};
use zoomvqa::iqa::{self, IqaParams};
use zoomvqa::losses::{self, BatchScores, LossValue};
use zoomvqa::media::{self, RawVideo};
use zoomvqa::metrics;
use zoomvqa::vqa::{self, VqaParams};
use zoomvqa::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Checkpoint = 5,
    Degenerate = 6,
    NonFinite = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZvMetrics {
    pub srcc: f64,
    pub plcc: f64,
    pub main_score: f64,
}

/// A decoded raw video.
pub struct ZvVideo(RawVideo);

/// Trained frame-branch weights.
pub struct ZvIqaModel(IqaParams<f32>);

/// Trained clip-branch weights.
pub struct ZvVqaModel(VqaParams<f32>);

/// Run configuration: preprocessing geometry, view counts and seed.
pub struct ZvConfig(RunConfig);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> ZvStatus {
    match e {
        Error::Io { .. } => ZvStatus::Io,
        Error::Format(_) | Error::CorruptPayload(_) | Error::Json(_) => ZvStatus::Format,
        Error::Checkpoint(_) => ZvStatus::Checkpoint,
        Error::DegenerateBatch(_) | Error::UndefinedMetric(_) => ZvStatus::Degenerate,
        Error::NonFinite(_) => ZvStatus::NonFinite,
        _ => ZvStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ZvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ZvStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            ZvStatus::NullArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            ZvStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Error::Parameter("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

unsafe fn boxed<T>(dst: *mut *mut T, v: T) -> Result<(), Fail> {
    let dst = unsafe { out(dst, "output handle")? };
    *dst = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the length the full message
/// needs including the terminator.
#[no_mangle]
pub unsafe extern "C" fn zv_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len() + 1
    })
}

/// Reads a `.rgb24` payload and its `.json` sidecar.
#[no_mangle]
pub unsafe extern "C" fn zv_video_open(path: *const c_char, video: *mut *mut ZvVideo) -> ZvStatus {
    guard(|| unsafe {
        let v = media::load_raw_video(path_arg(path)?)?;
        boxed(video, ZvVideo(v))
    })
}

/// Wraps packed RGB24 frames already in memory. `data` must hold
/// `width * height * 3 * num_frames` bytes; they are copied.
#[no_mangle]
pub unsafe extern "C" fn zv_video_from_rgb24(
    width: usize,
    height: usize,
    fps_num: u64,
    fps_den: u64,
    num_frames: usize,
    data: *const u8,
    data_len: usize,
    video: *mut *mut ZvVideo,
) -> ZvStatus {
    guard(|| unsafe {
        if data.is_null() && data_len > 0 {
            return Err(Fail::Null("data"));
        }
        let bytes = if data_len == 0 { Vec::new() } else { std::slice::from_raw_parts(data, data_len).to_vec() };
        let v = RawVideo::new(width, height, fps_num, fps_den, num_frames, bytes)?;
        boxed(video, ZvVideo(v))
    })
}

#[no_mangle]
pub unsafe extern "C" fn zv_video_info(
    video: *const ZvVideo,
    width: *mut usize,
    height: *mut usize,
    num_frames: *mut usize,
) -> ZvStatus {
    guard(|| unsafe {
        let v = &get(video, "video")?.0;
        *out(width, "width")? = v.width;
        *out(height, "height")? = v.height;
        *out(num_frames, "num_frames")? = v.num_frames;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn zv_video_free(video: *mut ZvVideo) {
    unsafe { free(video) }
}

#[no_mangle]
pub unsafe extern "C" fn zv_iqa_load(path: *const c_char, model: *mut *mut ZvIqaModel) -> ZvStatus {
    guard(|| unsafe {
        let p = checkpoint::load_iqa(path_arg(path)?)?;
        boxed(model, ZvIqaModel(p))
    })
}

#[no_mangle]
pub unsafe extern "C" fn zv_iqa_free(model: *mut ZvIqaModel) {
    unsafe { free(model) }
}

#[no_mangle]
pub unsafe extern "C" fn zv_vqa_load(path: *const c_char, model: *mut *mut ZvVqaModel) -> ZvStatus {
    guard(|| unsafe {
        let p = checkpoint::load_vqa(path_arg(path)?)?;
        boxed(model, ZvVqaModel(p))
    })
}

#[no_mangle]
pub unsafe extern "C" fn zv_vqa_free(model: *mut ZvVqaModel) {
    unsafe { free(model) }
}

/// Full-size defaults.
#[no_mangle]
pub unsafe extern "C" fn zv_config_default(config: *mut *mut ZvConfig) -> ZvStatus {
    guard(|| unsafe { boxed(config, ZvConfig(RunConfig::default())) })
}

/// The small configuration used for desk-scale experiments.
#[no_mangle]
pub unsafe extern "C" fn zv_config_toy(config: *mut *mut ZvConfig) -> ZvStatus {
    guard(|| unsafe { boxed(config, ZvConfig(RunConfig::toy())) })
}

/// Loads and validates a JSON run configuration.
#[no_mangle]
pub unsafe extern "C" fn zv_config_load(path: *const c_char, config: *mut *mut ZvConfig) -> ZvStatus {
    guard(|| unsafe {
        let c = RunConfig::load(path_arg(path)?)?;
        boxed(config, ZvConfig(c))
    })
}

#[no_mangle]
pub unsafe extern "C" fn zv_config_set_seed(config: *mut ZvConfig, seed: u64) -> ZvStatus {
    guard(|| unsafe {
        out(config, "config")?.0.seed = seed;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn zv_config_free(config: *mut ZvConfig) {
    unsafe { free(config) }
}

/// Frame-branch score: mean over sampled, resized, center-cropped frames.
#[no_mangle]
pub unsafe extern "C" fn zv_score_iqa(
    config: *const ZvConfig,
    model: *const ZvIqaModel,
    video: *const ZvVideo,
    score: *mut f64,
) -> ZvStatus {
    guard(|| unsafe {
        let (c, m, v) = (&get(config, "config")?.0, &get(model, "model")?.0, &get(video, "video")?.0);
        let frames = eval::iqa_eval_frames(v, c)?;
        *out(score, "score")? = iqa::iqa_video_score(&frames, m)?.0;
        Ok(())
    })
}

/// Clip-branch score averaged over the configured number of views.
#[no_mangle]
pub unsafe extern "C" fn zv_score_vqa(
    config: *const ZvConfig,
    model: *const ZvVqaModel,
    video: *const ZvVideo,
    score: *mut f64,
) -> ZvStatus {
    guard(|| unsafe {
        let (c, m, v) = (&get(config, "config")?.0, &get(model, "model")?.0, &get(video, "video")?.0);
        *out(score, "score")? = vqa::vqa_video_score(v, m, &c.vqa.view_spec(), c.seed)?.0;
        Ok(())
    })
}

/// Both branch scores and their fusion.
#[no_mangle]
pub unsafe extern "C" fn zv_score_video(
    config: *const ZvConfig,
    iqa_model: *const ZvIqaModel,
    vqa_model: *const ZvVqaModel,
    video: *const ZvVideo,
    y_iqa: *mut f64,
    y_vqa: *mut f64,
    y_fused: *mut f64,
) -> ZvStatus {
    guard(|| unsafe {
        let c = &get(config, "config")?.0;
        let (a, b) = (&get(iqa_model, "iqa_model")?.0, &get(vqa_model, "vqa_model")?.0);
        let (yi, yv) = eval::score_video(&get(video, "video")?.0, a, b, c)?;
        *out(y_iqa, "y_iqa")? = yi;
        *out(y_vqa, "y_vqa")? = yv;
        *out(y_fused, "y_fused")? = harness::fuse(yi, yv);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn zv_fuse(y_iqa: f64, y_vqa: f64) -> f64 {
    harness::fuse(y_iqa, y_vqa)
}

#[no_mangle]
pub unsafe extern "C" fn zv_srcc(pred: *const f64, label: *const f64, n: usize, value: *mut f64) -> ZvStatus {
    guard(|| unsafe {
        let value = out(value, "value")?;
        *value = metrics::srcc(slice(pred, n, "pred")?, slice(label, n, "label")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn zv_plcc(pred: *const f64, label: *const f64, n: usize, value: *mut f64) -> ZvStatus {
    guard(|| unsafe {
        let value = out(value, "value")?;
        *value = metrics::plcc(slice(pred, n, "pred")?, slice(label, n, "label")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn zv_main_score(
    pred: *const f64,
    label: *const f64,
    n: usize,
    metrics: *mut ZvMetrics,
) -> ZvStatus {
    guard(|| unsafe {
        let dst = out(metrics, "metrics")?;
        let m = metrics::main_score(slice(pred, n, "pred")?, slice(label, n, "label")?)?;
        *dst = ZvMetrics { srcc: m.srcc, plcc: m.plcc, main_score: m.main_score };
        Ok(())
    })
}

/// Smooth L1 of one prediction; `grad` receives d loss / d pred.
#[no_mangle]
pub unsafe extern "C" fn zv_smooth_l1(pred: f64, label: f64, loss: *mut f64, grad: *mut f64) -> ZvStatus {
    guard(|| unsafe {
        let (l, g) = losses::smooth_l1(pred, label);
        *out(loss, "loss")? = l;
        if !grad.is_null() {
            *grad = g;
        }
        Ok(())
    })
}

unsafe fn batch_loss(
    pred: *const f64,
    label: *const f64,
    n: usize,
    loss: *mut f64,
    grad: *mut f64,
    f: impl FnOnce(&BatchScores) -> zoomvqa::Result<LossValue>,
) -> ZvStatus {
    guard(|| unsafe {
        let loss = out(loss, "loss")?;
        let b = BatchScores::new(slice(pred, n, "pred")?.to_vec(), slice(label, n, "label")?.to_vec())?;
        let v = f(&b)?;
        *loss = v.value;
        if !grad.is_null() {
            std::slice::from_raw_parts_mut(grad, n).copy_from_slice(&v.grad);
        }
        Ok(())
    })
}

/// Correlation loss over a batch. `grad`, if not null, receives `n` values.
#[no_mangle]
pub unsafe extern "C" fn zv_plcc_loss(
    pred: *const f64,
    label: *const f64,
    n: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> ZvStatus {
    unsafe { batch_loss(pred, label, n, loss, grad, losses::plcc_loss) }
}

/// Pairwise ranking hinge over a batch. `grad`, if not null, receives `n` values.
#[no_mangle]
pub unsafe extern "C" fn zv_rank_loss(
    pred: *const f64,
    label: *const f64,
    n: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> ZvStatus {
    unsafe { batch_loss(pred, label, n, loss, grad, losses::rank_loss) }
}

#[no_mangle]
pub unsafe extern "C" fn zv_combined_loss(
    pred: *const f64,
    label: *const f64,
    n: usize,
    beta: f64,
    loss: *mut f64,
    grad: *mut f64,
) -> ZvStatus {
    unsafe { batch_loss(pred, label, n, loss, grad, |b| losses::combined_vqa_loss(b, beta)) }
}
