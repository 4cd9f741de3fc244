//! C ABI over the `adand` streaming engine.
//!
//! Every entry point returns an [`AdandStatus`]; results come back through
//! out-pointers. Handles are opaque and must be released with the matching
//! `*_free` function. A human-readable message for the most recent failure on
//! the calling thread is available from [`adand_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;
use std::sync::Arc;

use adand::format::read_feature_file;
use adand::metrics::{auroc, fpr_at_95_tpr};
use adand::pipeline::Injection;
use adand::{
    ClassifierBank, Error, FeatureVector, GroundTruth, Method, NoiseBank, NoiseType, Pipeline,
    PipelineConfig, Prediction, PseudoLabel, PseudoSource, SampleDecision, StreamRecord,
    ThresholdPolicy,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdandStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimMismatch = 3,
    Io = 4,
    Format = 5,
    EmptyInput = 6,
    OneClassOnly = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdandMethod {
    Frozen = 0,
    Adand = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdandPseudoSource {
    ZsClip = 0,
    Detector = 1,
    Oracle = 2,
}

/// Pipeline settings. `fixed_threshold` outside `[0, 1]` (conventionally
/// `-1`) selects the adaptive threshold.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdandConfig {
    pub tau: f64,
    pub inject_every: u64,
    pub queue_len: u64,
    pub score_window: u64,
    pub warmup_steps: u64,
    pub lr: f64,
    pub method: AdandMethod,
    pub pseudo_source: AdandPseudoSource,
    pub fixed_threshold: f64,
    pub seed: u64,
}

/// One verdict. `prediction` and `truth` use class indices, with `-1` for
/// noisy. `detector_score` is NaN when the detector was not consulted.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdandDecision {
    pub index: u64,
    pub truth: i32,
    pub prediction: i32,
    pub stage: u8,
    pub injected: u8,
    pub pseudo_label_noise: u8,
    pub mcm_score: f64,
    pub detector_score: f64,
    pub lambda: f64,
}

/// Opaque pipeline handle.
pub struct AdandPipeline {
    inner: Pipeline,
    dim: usize,
}

/// Opaque handle over a parsed feature file.
pub struct AdandFeatureFile {
    prototypes: Vec<f64>,
    features: Vec<f64>,
    labels: Vec<i32>,
    dim: usize,
    classes: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> AdandStatus {
    match e {
        Error::DimMismatch { .. } | Error::ShapeMismatch { .. } => AdandStatus::DimMismatch,
        Error::IoFailure { .. } => AdandStatus::Io,
        Error::BadMagic
        | Error::UnsupportedVersion(_)
        | Error::TruncatedPayload { .. }
        | Error::TrailingBytes { .. }
        | Error::LabelOutOfRange { .. } => AdandStatus::Format,
        Error::EmptyQueue | Error::EmptyBatch | Error::EmptyBank | Error::EmptyLog => {
            AdandStatus::EmptyInput
        }
        Error::OneClassOnly => AdandStatus::OneClassOnly,
        _ => AdandStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> AdandStatus {
    let status = status_of(&e);
    set_error(e.to_string());
    status
}

/// Runs `f`, turning a panic into [`AdandStatus::Panic`].
fn guard(f: impl FnOnce() -> AdandStatus) -> AdandStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            AdandStatus::Panic
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $( if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)));
            return AdandStatus::NullPointer;
        } )+
    };
}

fn vectors(data: &[f64], dim: usize) -> Result<Vec<FeatureVector>, Error> {
    data.chunks_exact(dim)
        .map(|c| FeatureVector::new(c.to_vec()))
        .collect()
}

fn to_config(c: &AdandConfig, injection: Injection) -> Result<PipelineConfig, Error> {
    let threshold = if (0.0..=1.0).contains(&c.fixed_threshold) {
        ThresholdPolicy::Fixed(c.fixed_threshold)
    } else {
        ThresholdPolicy::Adaptive
    };
    let config = PipelineConfig {
        tau: c.tau,
        inject_every: c.inject_every as usize,
        queue_len: c.queue_len as usize,
        score_window: c.score_window as usize,
        warmup_steps: c.warmup_steps,
        lr: c.lr,
        method: match c.method {
            AdandMethod::Frozen => Method::FrozenBaseline,
            AdandMethod::Adand => Method::AdaNd,
        },
        pseudo_source: match c.pseudo_source {
            AdandPseudoSource::ZsClip => PseudoSource::ZsClip,
            AdandPseudoSource::Detector => PseudoSource::Detector,
            AdandPseudoSource::Oracle => PseudoSource::Oracle,
        },
        threshold,
        injection,
        seed: c.seed,
    };
    config.validate()?;
    Ok(config)
}

fn to_decision(d: &SampleDecision) -> AdandDecision {
    AdandDecision {
        index: d.index,
        truth: d.truth.to_label(),
        prediction: match d.prediction {
            Prediction::IdClass(k) => k as i32,
            Prediction::Noisy => -1,
        },
        stage: d.stage,
        injected: d.origin.is_injected() as u8,
        pseudo_label_noise: (d.pseudo_label == PseudoLabel::Noise) as u8,
        mcm_score: d.mcm_score,
        detector_score: d.detector_score.unwrap_or(f64::NAN),
        lambda: d.lambda_used,
    }
}

/// Writes the default configuration to `out`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adand_config_default(out: *mut AdandConfig) -> AdandStatus {
    non_null!(out);
    let d = PipelineConfig::default();
    *out = AdandConfig {
        tau: d.tau,
        inject_every: d.inject_every as u64,
        queue_len: d.queue_len as u64,
        score_window: d.score_window as u64,
        warmup_steps: d.warmup_steps,
        lr: d.lr,
        method: AdandMethod::Adand,
        pseudo_source: AdandPseudoSource::ZsClip,
        fixed_threshold: -1.0,
        seed: d.seed,
    };
    AdandStatus::Ok
}

/// Creates a pipeline over `num_classes` unit-norm prototypes of length
/// `dim`, stored row-major. `noise` may be null (injection off); otherwise it
/// holds `noise_count` rows of length `dim`.
///
/// # Safety
/// Array pointers must be valid for the stated lengths; `out` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn adand_pipeline_new(
    config: *const AdandConfig,
    prototypes: *const f64,
    num_classes: usize,
    dim: usize,
    noise: *const f64,
    noise_count: usize,
    out: *mut *mut AdandPipeline,
) -> AdandStatus {
    non_null!(config, prototypes, out);
    guard(|| {
        if num_classes == 0 || dim == 0 {
            return fail(Error::InvalidConfig("num_classes and dim must be positive".into()));
        }
        let protos = slice::from_raw_parts(prototypes, num_classes * dim);
        let injection = if noise.is_null() {
            Injection::Off
        } else {
            let rows = slice::from_raw_parts(noise, noise_count * dim);
            match vectors(rows, dim).and_then(|f| NoiseBank::new(NoiseType::Gaussian, f)) {
                Ok(bank) => Injection::On(Arc::new(bank)),
                Err(e) => return fail(e),
            }
        };
        let built = to_config(&*config, injection).and_then(|cfg| {
            let bank = ClassifierBank::unnamed(vectors(protos, dim)?)?;
            Pipeline::new(bank, cfg)
        });
        match built {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(AdandPipeline { inner, dim }));
                AdandStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a pipeline. Null is ignored.
///
/// # Safety
/// `p` must come from [`adand_pipeline_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn adand_pipeline_free(p: *mut AdandPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Judges one original sample. `truth` is its class index, or `-1` for
/// noisy; it only matters for the oracle pseudo-label source and is echoed
/// back in the decision.
///
/// # Safety
/// `feature` must hold `dim` values; `p` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn adand_pipeline_process(
    p: *mut AdandPipeline,
    feature: *const f64,
    dim: usize,
    truth: i32,
    out: *mut AdandDecision,
) -> AdandStatus {
    non_null!(p, feature, out);
    guard(|| {
        let p = &mut *p;
        if dim != p.dim {
            return fail(Error::DimMismatch {
                expected: p.dim,
                actual: dim,
            });
        }
        let truth = match truth {
            -1 => GroundTruth::Noisy,
            k if k >= 0 => GroundTruth::IdClass(k as usize),
            k => {
                return fail(Error::LabelOutOfRange {
                    label: k,
                    classes: p.inner.bank().num_classes(),
                })
            }
        };
        let values = slice::from_raw_parts(feature, dim).to_vec();
        let record = match FeatureVector::new(values) {
            Ok(f) => StreamRecord::original(f, truth),
            Err(e) => return fail(e),
        };
        match p.inner.process_sample(&record) {
            Ok(d) => {
                *out = to_decision(&d);
                AdandStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Injects one noise sample when one is due. `*injected` is set to 1 and
/// `out` filled when that happened, 0 otherwise.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn adand_pipeline_inject_if_due(
    p: *mut AdandPipeline,
    out: *mut AdandDecision,
    injected: *mut u8,
) -> AdandStatus {
    non_null!(p, out, injected);
    guard(|| match (*p).inner.inject_noise_if_due() {
        Ok(Some(d)) => {
            *out = to_decision(&d);
            *injected = 1;
            AdandStatus::Ok
        }
        Ok(None) => {
            *injected = 0;
            AdandStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// Completed optimizer steps so far.
///
/// # Safety
/// `p` must be a live pipeline or null.
#[no_mangle]
pub unsafe extern "C" fn adand_pipeline_steps(p: *const AdandPipeline) -> u64 {
    if p.is_null() {
        return 0;
    }
    (*p).inner.completed_steps()
}

/// Current stage, 1 or 2; 0 for a null handle.
///
/// # Safety
/// `p` must be a live pipeline or null.
#[no_mangle]
pub unsafe extern "C" fn adand_pipeline_stage(p: *const AdandPipeline) -> u8 {
    if p.is_null() {
        return 0;
    }
    (*p).inner.stage()
}

unsafe fn score_pairs(scores: *const f64, is_clean: *const u8, n: usize) -> Vec<(f64, bool)> {
    let s = slice::from_raw_parts(scores, n);
    let c = slice::from_raw_parts(is_clean, n);
    s.iter().zip(c).map(|(&s, &c)| (s, c != 0)).collect()
}

/// AUROC of `scores` with clean as the positive class.
///
/// # Safety
/// `scores` and `is_clean` must hold `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn adand_auroc(
    scores: *const f64,
    is_clean: *const u8,
    n: usize,
    out: *mut f64,
) -> AdandStatus {
    non_null!(scores, is_clean, out);
    guard(|| match auroc(&score_pairs(scores, is_clean, n)) {
        Ok(v) => {
            *out = v;
            AdandStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// False-positive rate at 95% true-positive rate.
///
/// # Safety
/// As for [`adand_auroc`].
#[no_mangle]
pub unsafe extern "C" fn adand_fpr95(
    scores: *const f64,
    is_clean: *const u8,
    n: usize,
    out: *mut f64,
) -> AdandStatus {
    non_null!(scores, is_clean, out);
    guard(|| match fpr_at_95_tpr(&score_pairs(scores, is_clean, n)) {
        Ok(v) => {
            *out = v;
            AdandStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// Parses a feature file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn adand_feature_file_open(
    path: *const c_char,
    out: *mut *mut AdandFeatureFile,
) -> AdandStatus {
    non_null!(path, out);
    guard(|| {
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            set_error("path is not valid UTF-8");
            return AdandStatus::InvalidArgument;
        };
        match read_feature_file(Path::new(path)) {
            Ok((bank, records)) => {
                let file = AdandFeatureFile {
                    prototypes: bank
                        .prototypes()
                        .iter()
                        .flat_map(|p| p.as_slice().iter().copied())
                        .collect(),
                    features: records
                        .iter()
                        .flat_map(|r| r.feature.as_slice().iter().copied())
                        .collect(),
                    labels: records.iter().map(|r| r.truth.to_label()).collect(),
                    dim: bank.dim(),
                    classes: bank.num_classes(),
                };
                *out = Box::into_raw(Box::new(file));
                AdandStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `f` must come from [`adand_feature_file_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn adand_feature_file_free(f: *mut AdandFeatureFile) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// # Safety
/// `f` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adand_feature_file_dim(f: *const AdandFeatureFile) -> usize {
    f.as_ref().map_or(0, |f| f.dim)
}

/// # Safety
/// `f` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adand_feature_file_classes(f: *const AdandFeatureFile) -> usize {
    f.as_ref().map_or(0, |f| f.classes)
}

/// # Safety
/// `f` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adand_feature_file_records(f: *const AdandFeatureFile) -> usize {
    f.as_ref().map_or(0, |f| f.labels.len())
}

/// Row-major `classes x dim` prototypes, valid while the handle lives.
///
/// # Safety
/// `f` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adand_feature_file_prototypes(f: *const AdandFeatureFile) -> *const f64 {
    f.as_ref().map_or(ptr::null(), |f| f.prototypes.as_ptr())
}

/// Row-major `records x dim` features, valid while the handle lives.
///
/// # Safety
/// `f` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adand_feature_file_features(f: *const AdandFeatureFile) -> *const f64 {
    f.as_ref().map_or(ptr::null(), |f| f.features.as_ptr())
}

/// Per-record labels (`-1` for noisy), valid while the handle lives.
///
/// # Safety
/// `f` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adand_feature_file_labels(f: *const AdandFeatureFile) -> *const i32 {
    f.as_ref().map_or(ptr::null(), |f| f.labels.as_ptr())
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated). Returns the full message length in bytes, excluding the
/// terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn adand_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn adand_status_name(status: AdandStatus) -> *const c_char {
    let s: &'static CStr = match status {
        AdandStatus::Ok => c"ok",
        AdandStatus::NullPointer => c"null pointer",
        AdandStatus::InvalidArgument => c"invalid argument",
        AdandStatus::DimMismatch => c"dimension mismatch",
        AdandStatus::Io => c"i/o failure",
        AdandStatus::Format => c"malformed feature file",
        AdandStatus::EmptyInput => c"empty input",
        AdandStatus::OneClassOnly => c"only one class present",
        AdandStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}
