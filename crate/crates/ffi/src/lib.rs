//! C ABI over `apl-core`.
//!
//! Every function returns an [`AplStatus`] and writes results through out
//! pointers. On failure, [`apl_last_error_message`] describes the most recent
//! error raised on the calling thread. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use apl_core::acp::{infonce_loss, ContrastBatch, Granularity};
use apl_core::geometry::{self, Segment};
use apl_core::icd::{similarity_pooled, DiscriminatorModel};
use apl_core::quality::{joint_score, FramePredictions, ScoringConfig};
use apl_core::selection::{dynamic_partition, Instance, SelectionConfig};
use apl_core::AplError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AplStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Computation = 3,
    Io = 4,
    Format = 5,
    Panic = 6,
}

/// A trained instance-consistency discriminator.
pub struct AplDiscriminator {
    model: DiscriminatorModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AplStatus, String);

impl From<AplError> for Failure {
    fn from(e: AplError) -> Self {
        let status = match &e {
            AplError::Io { .. } => AplStatus::Io,
            AplError::Format { .. } => AplStatus::Format,
            AplError::Config(_)
            | AplError::InvalidArgument(_)
            | AplError::InvalidSegment { .. }
            | AplError::LengthMismatch { .. }
            | AplError::ClassOutOfRange { .. }
            | AplError::TemperatureTooSmall(_) => AplStatus::InvalidArgument,
            _ => AplStatus::Computation,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AplStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(AplStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AplStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AplStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            AplStatus::Panic
        }
    }
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// The message of the last failed call on this thread, or NULL if none has
/// failed. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn apl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

fn segment_pair(s1: f64, e1: f64, s2: f64, e2: f64) -> Result<(Segment, Segment), Failure> {
    Ok((Segment::new(s1, e1)?, Segment::new(s2, e2)?))
}

/// Temporal IoU of `[s1, e1]` and `[s2, e2]`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn apl_tiou(s1: f64, e1: f64, s2: f64, e2: f64, out: *mut f64) -> AplStatus {
    guard(|| {
        let (a, b) = segment_pair(s1, e1, s2, e2)?;
        write(out, geometry::tiou(&a, &b))
    })
}

/// Squared center distance over squared cover length.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn apl_tnd(s1: f64, e1: f64, s2: f64, e2: f64, out: *mut f64) -> AplStatus {
    guard(|| {
        let (a, b) = segment_pair(s1, e1, s2, e2)?;
        write(out, geometry::tnd(&a, &b))
    })
}

/// `tiou - tnd`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn apl_diou(s1: f64, e1: f64, s2: f64, e2: f64, out: *mut f64) -> AplStatus {
    guard(|| {
        let (a, b) = segment_pair(s1, e1, s2, e2)?;
        write(out, geometry::diou(&a, &b))
    })
}

/// `max(tiou_hat - tnd_hat, epsilon) * cls` for one frame and class.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn apl_joint_score(
    cls: f64,
    tiou_hat: f64,
    tnd_hat: f64,
    epsilon: f64,
    out: *mut f64,
) -> AplStatus {
    guard(|| {
        let cfg = ScoringConfig {
            epsilon,
            ..ScoringConfig::default()
        };
        cfg.validate()?;
        let preds = FramePredictions::new(vec![vec![cls]], vec![tiou_hat], vec![tnd_hat], vec![(0.0, 0.0)])?;
        write(out, joint_score(&preds, &cfg)[0][0])
    })
}

/// Positive threshold `mean + std` over the scores above `tau_neg`.
/// `*no_survivors` (if non-NULL) is set to 1 and the threshold to 1 when no
/// score exceeds `tau_neg`.
///
/// # Safety
/// `scores` must point to `n` readable doubles; `out` must be valid for
/// writes; `no_survivors` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn apl_dynamic_threshold(
    scores: *const f64,
    n: usize,
    tau_neg: f64,
    out: *mut f64,
    no_survivors: *mut i32,
) -> AplStatus {
    guard(|| {
        let scores = slice(scores, n, "scores")?;
        let cfg = SelectionConfig {
            tau_neg,
            ..SelectionConfig::default()
        };
        cfg.validate()?;
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(invalid(format!("score {bad} outside [0, 1]")));
        }
        let instances: Vec<Instance> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| Ok(Instance::new(Segment::new(i as f64, i as f64 + 1.0)?, 0, s, "")))
            .collect::<Result<_, AplError>>()?;
        let set = dynamic_partition(&instances, &cfg);
        if !no_survivors.is_null() {
            no_survivors.write(i32::from(set.no_survivors));
        }
        write(out, set.tau_pos)
    })
}

/// Fine-grained InfoNCE over `n` row-major feature vectors of length `dim`.
///
/// # Safety
/// `features` must point to `n * dim` readable doubles, `labels` to `n`
/// readable values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn apl_infonce_loss(
    features: *const f64,
    n: usize,
    dim: usize,
    labels: *const usize,
    temperature: f64,
    out: *mut f64,
) -> AplStatus {
    guard(|| {
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let flat = slice(features, len, "features")?;
        let labels = slice(labels, n, "labels")?;
        let batch = ContrastBatch::new(
            flat.chunks_exact(dim).map(<[f64]>::to_vec).collect(),
            labels.to_vec(),
            temperature,
            Granularity::Fine,
        );
        write(out, infonce_loss(&batch)?)
    })
}

fn boxed(model: DiscriminatorModel) -> *mut AplDiscriminator {
    Box::into_raw(Box::new(AplDiscriminator { model }))
}

/// Loads an ICD1 model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
/// Release the handle with [`apl_discriminator_free`].
#[no_mangle]
pub unsafe extern "C" fn apl_discriminator_load(path: *const c_char, out: *mut *mut AplDiscriminator) -> AplStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let model = DiscriminatorModel::load(Path::new(path))?;
        write(out, boxed(model))
    })
}

/// Decodes an ICD1 model from memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn apl_discriminator_from_bytes(
    bytes: *const u8,
    len: usize,
    out: *mut *mut AplDiscriminator,
) -> AplStatus {
    guard(|| {
        let bytes = slice(bytes, len, "bytes")?;
        let model = DiscriminatorModel::from_bytes(bytes).map_err(|m| Failure(AplStatus::Format, m))?;
        write(out, boxed(model))
    })
}

unsafe fn handle<'a>(h: *const AplDiscriminator) -> Result<&'a DiscriminatorModel, Failure> {
    h.as_ref().map(|h| &h.model).ok_or_else(|| null("discriminator"))
}

/// Input feature dimension `D` of the model.
///
/// # Safety
/// `h` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn apl_discriminator_dim(h: *const AplDiscriminator, out: *mut usize) -> AplStatus {
    guard(|| write(out, handle(h)?.dim))
}

/// Probability that pooled features `a` and `b` (each `dim` long) share a
/// class.
///
/// # Safety
/// `h` must be a live handle; `a` and `b` must point to `dim` readable
/// doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn apl_discriminator_pair_probability(
    h: *const AplDiscriminator,
    a: *const f64,
    b: *const f64,
    dim: usize,
    out: *mut f64,
) -> AplStatus {
    guard(|| {
        let model = handle(h)?;
        let (a, b) = (slice(a, dim, "a")?, slice(b, dim, "b")?);
        write(out, model.pair_probability(a, b)?)
    })
}

/// Mean pair probability of `pred` against `n_labeled` pooled labeled
/// features stored row-major.
///
/// # Safety
/// `h` must be a live handle; `pred` must point to `dim` readable doubles and
/// `labeled` to `n_labeled * dim`; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn apl_discriminator_similarity(
    h: *const AplDiscriminator,
    pred: *const f64,
    labeled: *const f64,
    n_labeled: usize,
    dim: usize,
    out: *mut f64,
) -> AplStatus {
    guard(|| {
        let model = handle(h)?;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let pred = slice(pred, dim, "pred")?;
        let len = n_labeled
            .checked_mul(dim)
            .ok_or_else(|| invalid("n_labeled * dim overflows"))?;
        let labeled: Vec<Vec<f64>> = slice(labeled, len, "labeled")?
            .chunks_exact(dim)
            .map(<[f64]>::to_vec)
            .collect();
        write(out, similarity_pooled(model, pred, &labeled)?)
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `h` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn apl_discriminator_free(h: *mut AplDiscriminator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
