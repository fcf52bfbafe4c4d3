//! C interface to csed.
//!
//! Objects are opaque handles released with the matching `*_free`. Every
//! fallible call returns a [`CsedStatus`]; on failure the message is kept per
//! thread and read with [`csed_last_error`]. Matrices are row-major: features
//! are `n_features x frames`, posteriors and rolls are `n_events x frames`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use csed::decision::{threshold, EventRoll, ThresholdConfig, ThresholdMode};
use csed::eventgraph::{CooccurrenceGraph, EventVocabulary};
use csed::features::{FeatureMatrix, SEQUENCE_FRAMES};
use csed::metrics::{score, SegmentConfig};
use csed::network::{predict_clip, Checkpoint, Posteriorgram, Precision};
use csed::tensor::Matrix;
use csed::CsedError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsedStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Numerical = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsedThresholdMode {
    Fixed = 0,
    Adaptive = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsedThresholdConfig {
    pub mode: CsedThresholdMode,
    pub fixed_theta: f64,
    pub adaptive_low: f64,
    pub adaptive_ratio: f64,
    pub min_event_frames: usize,
    pub smoothing_window: usize,
}

/// Segment counts summed over classes. `error_rate` is NaN when the
/// reference has no active events.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CsedScores {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub n_ref: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub error_rate: f64,
}

/// Opaque co-occurrence graph.
pub struct CsedGraph(CooccurrenceGraph);

/// Opaque trained model.
pub struct CsedModel(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &CsedError) -> CsedStatus {
    match e {
        CsedError::Io { .. } => CsedStatus::Io,
        CsedError::Format { .. } | CsedError::Json(_) | CsedError::Wav(_) | CsedError::ParseError { .. } => {
            CsedStatus::Format
        }
        CsedError::DimensionError { .. }
        | CsedError::ShapeError(_)
        | CsedError::CacheMismatch
        | CsedError::MetricInputMismatch(_) => CsedStatus::Shape,
        CsedError::Divergence(_) | CsedError::DegenerateFilterbank { .. } | CsedError::GradientCheckFailed { .. } => {
            CsedStatus::Numerical
        }
        _ => CsedStatus::InvalidArgument,
    }
}

struct Failure(CsedStatus, String);

impl From<CsedError> for Failure {
    fn from(e: CsedError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CsedStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CsedStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CsedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CsedStatus::Ok
        }
        Ok(Err(Failure(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            CsedStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn area(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))
}

fn generic_vocab(m: usize) -> Result<EventVocabulary, Failure> {
    Ok(EventVocabulary::new((0..m).map(|i| format!("event{i}")))?)
}

/// Message for the most recent failure on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn csed_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn csed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Read a graph written by `csed build-graph`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn csed_graph_load(path: *const c_char, out: *mut *mut CsedGraph) -> CsedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let g = CooccurrenceGraph::read_json(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CsedGraph(g)));
        Ok(())
    })
}

/// Build a graph from an `n_events x n_events` adjacency matrix.
///
/// # Safety
/// `adjacency` must hold `n_events * n_events` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn csed_graph_from_adjacency(
    adjacency: *const f64,
    n_events: usize,
    out: *mut *mut CsedGraph,
) -> CsedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = slice_arg(adjacency, area(n_events, n_events)?, "adjacency")?;
        let m = Matrix::from_vec(n_events, n_events, a.to_vec())?;
        let g = CooccurrenceGraph::from_adjacency(generic_vocab(n_events)?, m)?;
        *out = Box::into_raw(Box::new(CsedGraph(g)));
        Ok(())
    })
}

/// Number of event classes, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn csed_graph_n_events(graph: *const CsedGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.n_events())
}

/// Copy the Laplacian into `out` (`n_events * n_events` doubles).
///
/// # Safety
/// `graph` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csed_graph_laplacian(graph: *const CsedGraph, out: *mut f64, len: usize) -> CsedStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| null("graph"))?;
        let l = g.0.laplacian().as_slice();
        if len != l.len() {
            return Err(invalid(format!("output holds {len} values, Laplacian has {}", l.len())));
        }
        slice_mut_arg(out, len, "out")?.copy_from_slice(l);
        Ok(())
    })
}

/// Quadratic form `v' L v` for one activity vector.
///
/// # Safety
/// `graph` must be a live handle, `v` hold `len` doubles, `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn csed_graph_penalty(
    graph: *const CsedGraph,
    v: *const f64,
    len: usize,
    out: *mut f64,
) -> CsedStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| null("graph"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = g.0.penalty(slice_arg(v, len, "v")?)?;
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn csed_graph_free(graph: *mut CsedGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Load a checkpoint written by `csed train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn csed_model_load(path: *const c_char, out: *mut *mut CsedModel) -> CsedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = Checkpoint::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CsedModel(ck)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn csed_model_n_features(model: *const CsedModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.header.model.n_features)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn csed_model_n_events(model: *const CsedModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.header.model.n_events)
}

/// Event posteriors for a clip of log mel features.
///
/// # Safety
/// `model` must be a live handle, `features` hold `n_features * frames`
/// doubles and `out` hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csed_model_predict(
    model: *const CsedModel,
    features: *const f64,
    n_features: usize,
    frames: usize,
    out: *mut f64,
    out_len: usize,
) -> CsedStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let cfg = &m.header.model;
        if n_features != cfg.n_features {
            return Err(invalid(format!("model expects {} features, got {n_features}", cfg.n_features)));
        }
        if out_len != area(cfg.n_events, frames)? {
            return Err(invalid(format!(
                "output holds {out_len} values, need {} x {frames}",
                cfg.n_events
            )));
        }
        let x = slice_arg(features, area(n_features, frames)?, "features")?;
        let v = FeatureMatrix::new(Matrix::from_vec(n_features, frames, x.to_vec())?, m.header.features.hop_ms)?;
        let pad = m.header.features.log_floor.ln();
        let y = predict_clip(&v, &m.params, cfg, Precision::F64, SEQUENCE_FRAMES, pad)?;
        slice_mut_arg(out, out_len, "out")?.copy_from_slice(y.values.as_slice());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn csed_model_free(model: *mut CsedModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fixed threshold 0.5 with no smoothing.
#[no_mangle]
pub extern "C" fn csed_threshold_config_default() -> CsedThresholdConfig {
    let d = ThresholdConfig::default();
    CsedThresholdConfig {
        mode: CsedThresholdMode::Fixed,
        fixed_theta: d.fixed_theta,
        adaptive_low: d.adaptive_low,
        adaptive_ratio: d.adaptive_ratio,
        min_event_frames: d.min_event_frames,
        smoothing_window: d.smoothing_window,
    }
}

/// Binarize `n_events x frames` posteriors into `roll` (0 or 1 per cell).
///
/// # Safety
/// `posteriors` and `roll` must each hold `n_events * frames` elements and
/// `cfg` point to a valid config.
#[no_mangle]
pub unsafe extern "C" fn csed_threshold(
    posteriors: *const f64,
    n_events: usize,
    frames: usize,
    cfg: *const CsedThresholdConfig,
    roll: *mut u8,
) -> CsedStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let cfg = ThresholdConfig {
            mode: match c.mode {
                CsedThresholdMode::Fixed => ThresholdMode::Fixed,
                CsedThresholdMode::Adaptive => ThresholdMode::Adaptive,
            },
            fixed_theta: c.fixed_theta,
            adaptive_low: c.adaptive_low,
            adaptive_ratio: c.adaptive_ratio,
            min_event_frames: c.min_event_frames,
            smoothing_window: c.smoothing_window,
        };
        let n = area(n_events, frames)?;
        let y = slice_arg(posteriors, n, "posteriors")?;
        let y = Posteriorgram {
            values: Matrix::from_vec(n_events, frames, y.to_vec())?,
            hop_ms: 20,
        };
        let r = threshold(&y, &generic_vocab(n_events)?, &cfg)?;
        slice_mut_arg(roll, n, "roll")?.copy_from_slice(r.as_slice());
        Ok(())
    })
}

/// Segment-based counts and scores of a predicted roll against a reference.
///
/// # Safety
/// `pred` and `reference` must each hold `n_events * frames` bytes and `out`
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn csed_segment_scores(
    pred: *const u8,
    reference: *const u8,
    n_events: usize,
    frames: usize,
    hop_ms: u32,
    segment_ms: u32,
    out: *mut CsedScores,
) -> CsedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if hop_ms == 0 {
            return Err(invalid("hop_ms must be positive"));
        }
        let n = area(n_events, frames)?;
        let vocab = generic_vocab(n_events)?;
        let roll = |p: *const u8, what: &str| -> Result<EventRoll, Failure> {
            let a = slice_arg(p, n, what)?;
            if a.iter().any(|&x| x > 1) {
                return Err(invalid(format!("{what} entries must be 0 or 1")));
            }
            Ok(EventRoll::from_activity(vocab.clone(), frames, hop_ms, a.to_vec())?)
        };
        let cfg = SegmentConfig { segment_ms };
        cfg.validate()?;
        let s = score(&roll(pred, "pred")?, &roll(reference, "reference")?, &cfg)?;
        let c = &s.overall;
        *out = CsedScores {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            substitutions: c.s,
            deletions: c.d,
            insertions: c.i,
            n_ref: c.n,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            error_rate: c.error_rate().unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
