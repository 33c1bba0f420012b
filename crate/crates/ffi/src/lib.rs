//! C ABI over the `conceptcf` engine.
//!
//! Objects cross the boundary as opaque handles created by `ccf_*_load` /
//! `ccf_*_new` functions and released with the matching `ccf_*_free`.
//! Every fallible call returns a [`CcfStatus`]; on failure the message is
//! available from [`ccf_last_error_message`] on the same thread. Strings
//! returned through `char **` out-parameters are owned by the caller and
//! must be released with [`ccf_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use conceptcf::classifier::{train, ClassifierWeights, TrainConfig, WeightsFile};
use conceptcf::metrics::{compute_report, DiversityVariant, EvaluationCohort};
use conceptcf::providers::{EmbeddingProvider, ProviderConfig};
use conceptcf::scenarios::ScenarioConfig;
use conceptcf::selection::{explain_image, ExplainConfig, SelectionConfig};
use conceptcf::{DatasetManifest, EmbeddingVector, Error, ExplanationSet, PrivacyLabel};
use libc::{c_char, c_int, size_t};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad input: malformed files, dimension mismatches, unknown ids.
    Validation = 3,
    /// I/O, transport or numerical failure.
    Runtime = 4,
    Panic = 5,
}

/// Loaded dataset manifest.
pub struct CcfManifest(Arc<DatasetManifest>);

/// Trained linear privacy classifier.
pub struct CcfClassifier(ClassifierWeights);

/// Embedding provider bound to a manifest.
pub struct CcfProvider(Box<dyn EmbeddingProvider>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Status(CcfStatus, String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcfStatus::Ok,
        Ok(Err(Failure::Status(status, msg))) => {
            set_error(msg);
            status
        }
        Ok(Err(Failure::Engine(e))) => {
            let status = if e.is_validation() {
                CcfStatus::Validation
            } else {
                CcfStatus::Runtime
            };
            set_error(e.to_string());
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CcfStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure::Status(CcfStatus::NullPointer, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(CcfStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s)
        .map_err(|_| Failure::Status(CcfStatus::Runtime, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next `ccf_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ccf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from a `ccf_*` string out-parameter and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ccf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccf_manifest_load(
    path: *const c_char,
    out: *mut *mut CcfManifest,
) -> CcfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = DatasetManifest::load(str_arg(path, "path")?)?;
        put(out, CcfManifest(Arc::new(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from [`ccf_manifest_load`].
#[no_mangle]
pub unsafe extern "C" fn ccf_manifest_free(m: *mut CcfManifest) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live manifest handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccf_manifest_info(
    m: *const CcfManifest,
    records: *mut size_t,
    dimension: *mut size_t,
) -> CcfStatus {
    guard(|| {
        let m = handle(m, "manifest")?;
        if records.is_null() || dimension.is_null() {
            return Err(null("out"));
        }
        *records = m.0.records.len();
        *dimension = m.0.dimension;
        Ok(())
    })
}

/// Trains a classifier with the default recipe, overriding epochs, learning
/// rate, batch size and shuffle seed.
///
/// # Safety
/// `m` must be a live manifest handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccf_classifier_train(
    m: *const CcfManifest,
    epochs: size_t,
    learning_rate: f64,
    batch_size: size_t,
    seed: u64,
    out: *mut *mut CcfClassifier,
) -> CcfStatus {
    guard(|| {
        let m = handle(m, "manifest")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..TrainConfig::default()
        };
        let (weights, _) = train(&m.0, &config)?;
        put(out, CcfClassifier(weights));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccf_classifier_load(
    path: *const c_char,
    out: *mut *mut CcfClassifier,
) -> CcfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w = WeightsFile::load(str_arg(path, "path")?)?.classifier()?;
        put(out, CcfClassifier(w));
        Ok(())
    })
}

/// # Safety
/// `c` must be NULL or a classifier handle.
#[no_mangle]
pub unsafe extern "C" fn ccf_classifier_free(c: *mut CcfClassifier) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Predicts one embedding. `is_private` receives 1 or 0, `confidence` the
/// probability of the predicted class.
///
/// # Safety
/// `x` must point to `len` readable doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccf_classifier_predict(
    c: *const CcfClassifier,
    x: *const f64,
    len: size_t,
    is_private: *mut c_int,
    confidence: *mut f64,
) -> CcfStatus {
    guard(|| {
        let c = handle(c, "classifier")?;
        if x.is_null() || is_private.is_null() || confidence.is_null() {
            return Err(null("argument"));
        }
        let v = EmbeddingVector::new(std::slice::from_raw_parts(x, len).to_vec())?;
        let p = c.0.predict(&v)?;
        *is_private = c_int::from(p.label == PrivacyLabel::Private);
        *confidence = p.confidence;
        Ok(())
    })
}

/// Synthetic oracle provider serving image embeddings and tags from `m`.
///
/// # Safety
/// `m` must be a live manifest handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccf_provider_synthetic(
    m: *const CcfManifest,
    seed: u64,
    out: *mut *mut CcfProvider,
) -> CcfStatus {
    guard(|| {
        let m = handle(m, "manifest")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = ProviderConfig::synthetic(seed).build(Some(m.0.clone()), None, None)?;
        put(out, CcfProvider(p));
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a provider handle.
#[no_mangle]
pub unsafe extern "C" fn ccf_provider_free(p: *mut CcfProvider) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Explains one image and writes its explanation set as JSON.
///
/// # Safety
/// Handles must be live; `image_id` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ccf_explain_image_json(
    m: *const CcfManifest,
    c: *const CcfClassifier,
    p: *const CcfProvider,
    image_id: *const c_char,
    max_length: size_t,
    q: size_t,
    out_json: *mut *mut c_char,
) -> CcfStatus {
    guard(|| {
        let (m, c, p) = (
            handle(m, "manifest")?,
            handle(c, "classifier")?,
            handle(p, "provider")?,
        );
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let id = str_arg(image_id, "image_id")?;
        let record =
            m.0.record(id)
                .ok_or_else(|| Error::MissingRecord(id.to_owned()))?;
        let config = ExplainConfig {
            scenarios: ScenarioConfig {
                max_length,
                ..ScenarioConfig::default()
            },
            selection: SelectionConfig {
                q,
                ..SelectionConfig::default()
            },
            ..ExplainConfig::default()
        };
        let set = explain_image(record, &c.0, p.0.as_ref(), p.0.as_ref(), &config)?;
        put_string(out_json, serde_json::to_string(&set).map_err(Error::from)?)
    })
}

/// Scores explanation sets given as JSON lines and writes the metric report
/// as JSON. `unordered_diversity` non-zero selects the unordered-mean
/// diversity variant.
///
/// # Safety
/// Handles must be live; `explanations_jsonl` NUL-terminated; `out_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ccf_evaluate_json(
    m: *const CcfManifest,
    p: *const CcfProvider,
    explanations_jsonl: *const c_char,
    unordered_diversity: c_int,
    out_json: *mut *mut c_char,
) -> CcfStatus {
    guard(|| {
        let (m, p) = (handle(m, "manifest")?, handle(p, "provider")?);
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let sets = str_arg(explanations_jsonl, "explanations_jsonl")?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<ExplanationSet>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(Error::from)?;
        let cohort = EvaluationCohort::from_explanations(&m.0, &sets)?;
        let variant = if unordered_diversity != 0 {
            DiversityVariant::UnorderedMean
        } else {
            DiversityVariant::Literal
        };
        let report = compute_report(&cohort, p.0.as_ref(), p.0.as_ref(), variant)?;
        put_string(
            out_json,
            serde_json::to_string(&report).map_err(Error::from)?,
        )
    })
}
