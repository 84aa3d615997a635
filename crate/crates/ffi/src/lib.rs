//! C ABI over `cloudgate`.
//!
//! Objects are opaque handles created by `cg_*_open`/`cg_*_load`/`cg_*_new`
//! and released with the matching `cg_*_free`. Every fallible call returns a
//! [`CgStatus`]; on failure `cg_last_error_message` describes the most recent
//! error on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use cloudgate::coop::{coop_prompt_pair, ContextVectors};
use cloudgate::encoder::{encode_image, encode_text, EncoderConfig, Embedding};
use cloudgate::ingest::{preprocess_image, BandComposite, Modality, Normalization};
use cloudgate::probe::{predict_probe, ProbeModel};
use cloudgate::tensorstore::{load_archive, TensorArchive};
use cloudgate::tokenizer::{load_vocabulary, tokenize_to_length, Vocabulary};
use cloudgate::verdict::{Label, Verdict};
use cloudgate::zeroshot::{classify_zero_shot, PromptPair, DEFAULT_NEGATIVE_PROMPT, DEFAULT_POSITIVE_PROMPT};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A buffer length or dimension did not match.
    InvalidArgument = 3,
    /// A file could not be read or parsed.
    Io = 4,
    /// Weights, vocabulary, probe or context content was rejected.
    InvalidModel = 5,
    /// Encoding or classification failed.
    Compute = 6,
    /// Internal panic; the handle involved should be freed.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgLabel {
    Cloudy = 0,
    Clear = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgVerdict {
    pub label: CgLabel,
    /// Probability mass on `label`, in [0.5, 1].
    pub confidence: f32,
    /// Cloudy-side score: cosine similarity for prompts, logit for probes.
    pub score_positive: f32,
    pub score_negative: f32,
}

impl From<Verdict> for CgVerdict {
    fn from(v: Verdict) -> Self {
        Self {
            label: match v.label {
                Label::Cloudy => CgLabel::Cloudy,
                Label::Clear => CgLabel::Clear,
            },
            confidence: v.confidence,
            score_positive: v.score_positive,
            score_negative: v.score_negative,
        }
    }
}

/// Weights plus tokenizer vocabulary.
pub struct CgModel {
    archive: TensorArchive,
    vocab: Vocabulary,
    config: EncoderConfig,
    normalization: Normalization,
}

/// Two encoded text prompts, from free text or a CoOp context file.
pub struct CgPrompts {
    pair: PromptPair,
}

pub struct CgProbe {
    model: ProbeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CgStatus, String);

type Outcome<T> = Result<T, Failure>;

fn fail<E: std::fmt::Display>(status: CgStatus) -> impl FnOnce(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome<()>) -> CgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            CgStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &str) -> Outcome<&'a T> {
    // SAFETY: callers pass either null or a pointer obtained from this library.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(CgStatus::NullArgument, format!("`{name}` is null")))
}

fn string_arg<'a>(p: *const c_char, name: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(Failure(CgStatus::NullArgument, format!("`{name}` is null")));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(CgStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn path_arg(p: *const c_char, name: &str) -> Outcome<PathBuf> {
    string_arg(p, name).map(PathBuf::from)
}

fn slice_arg<'a>(p: *const f32, len: usize, name: &str) -> Outcome<&'a [f32]> {
    if p.is_null() {
        return Err(Failure(CgStatus::NullArgument, format!("`{name}` is null")));
    }
    // SAFETY: the caller guarantees `len` readable floats at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn write_out<T>(out: *mut T, value: T) -> Outcome<()> {
    if out.is_null() {
        return Err(Failure(CgStatus::NullArgument, "output pointer is null".into()));
    }
    // SAFETY: non-null, caller-owned storage for one `T`.
    unsafe { out.write(value) };
    Ok(())
}

fn write_floats(out: *mut f32, out_len: usize, values: &[f32]) -> Outcome<()> {
    if out.is_null() {
        return Err(Failure(CgStatus::NullArgument, "`out` is null".into()));
    }
    if out_len != values.len() {
        return Err(Failure(
            CgStatus::InvalidArgument,
            format!("output buffer holds {out_len} floats, need {}", values.len()),
        ));
    }
    // SAFETY: `out` has room for `out_len` floats per the API contract.
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, out_len) };
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `boxed` and is freed once.
        drop(unsafe { Box::from_raw(p) });
    }
}

fn embedding_arg(p: *const f32, len: usize) -> Outcome<Embedding> {
    let e = Embedding::new(slice_arg(p, len, "embedding")?.to_vec());
    if !e.is_normalized() {
        return Err(Failure(CgStatus::InvalidArgument, "embedding is not unit-norm".into()));
    }
    Ok(e)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

fn open_model(weights: &Path, vocab: Option<PathBuf>) -> Outcome<CgModel> {
    let archive = load_archive(weights).map_err(|e| Failure(CgStatus::Io, format!("{}: {e}", weights.display())))?;
    let vocab_path = vocab.unwrap_or_else(|| weights.with_file_name("vocab.bundle"));
    let vocab = load_vocabulary(&vocab_path).map_err(|e| Failure(CgStatus::Io, format!("{}: {e}", vocab_path.display())))?;
    let config = EncoderConfig::from_archive(&archive).map_err(fail(CgStatus::InvalidModel))?;
    let normalization = Normalization::from_archive(&archive).map_err(fail(CgStatus::InvalidModel))?;
    if vocab.size() != config.vocab_size {
        return Err(Failure(
            CgStatus::InvalidModel,
            format!("vocabulary has {} tokens, weights expect {}", vocab.size(), config.vocab_size),
        ));
    }
    Ok(CgModel {
        archive,
        vocab,
        config,
        normalization,
    })
}

/// Loads weights and a vocabulary bundle. `vocab_path` may be null, in which
/// case `vocab.bundle` next to the weights is used.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_model_open(
    weights_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut CgModel,
) -> CgStatus {
    guard(|| {
        let weights = path_arg(weights_path, "weights_path")?;
        let vocab = if vocab_path.is_null() {
            None
        } else {
            Some(path_arg(vocab_path, "vocab_path")?)
        };
        let model = open_model(&weights, vocab)?;
        write_out(out, boxed(model))
    })
}

/// # Safety
/// `model` must be null or a handle from `cg_model_open` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cg_model_free(model: *mut CgModel) {
    free(model)
}

/// Length of every embedding produced by `model`, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_model_embed_dim(model: *const CgModel) -> usize {
    model.as_ref().map_or(0, |m| m.config.embed_dim)
}

/// Side length of the square input image, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_model_image_resolution(model: *const CgModel) -> usize {
    model.as_ref().map_or(0, |m| m.config.image_resolution)
}

/// Resizes a channel-major 3 x `height` x `width` composite with values in
/// [0, 1] to the model resolution and standardizes it. `out` must hold
/// 3 * resolution^2 floats.
///
/// # Safety
/// `composite` must hold 3 * width * height floats, `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn cg_model_preprocess(
    model: *const CgModel,
    composite: *const f32,
    width: usize,
    height: usize,
    out: *mut f32,
    out_len: usize,
) -> CgStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        if width == 0 || height == 0 {
            return Err(Failure(CgStatus::InvalidArgument, "empty composite".into()));
        }
        let len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Failure(CgStatus::InvalidArgument, "composite too large".into()))?;
        let c = BandComposite {
            modality: Modality::S2Rgb,
            width,
            height,
            channels: slice_arg(composite, len, "composite")?.to_vec(),
        };
        let px = preprocess_image(&c, m.config.image_resolution, &m.normalization);
        write_floats(out, out_len, &px)
    })
}

/// Encodes preprocessed pixels (3 x resolution x resolution, channel-major)
/// into a unit-norm embedding of `cg_model_embed_dim` floats.
///
/// # Safety
/// `pixels` must hold `pixels_len` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn cg_model_encode_image(
    model: *const CgModel,
    pixels: *const f32,
    pixels_len: usize,
    out: *mut f32,
    out_len: usize,
) -> CgStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let r = m.config.image_resolution;
        if pixels_len != 3 * r * r {
            return Err(Failure(
                CgStatus::InvalidArgument,
                format!("expected {} pixel values, got {pixels_len}", 3 * r * r),
            ));
        }
        let px = slice_arg(pixels, pixels_len, "pixels")?;
        let e = encode_image(px, &m.archive).map_err(fail(CgStatus::Compute))?;
        write_floats(out, out_len, e.values())
    })
}

/// Tokenizes and encodes `text` into a unit-norm embedding.
///
/// # Safety
/// `text` must be NUL-terminated and `out` hold `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn cg_model_encode_text(
    model: *const CgModel,
    text: *const c_char,
    out: *mut f32,
    out_len: usize,
) -> CgStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let t = string_arg(text, "text")?;
        let tokens = tokenize_to_length(t, &m.vocab, m.config.context_length);
        let e = encode_text(&tokens, &m.archive).map_err(fail(CgStatus::Compute))?;
        write_floats(out, out_len, e.values())
    })
}

/// Encodes a prompt pair. Null `positive`/`negative` select the default
/// prompts.
///
/// # Safety
/// `model` must be live, strings null or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_prompts_new(
    model: *const CgModel,
    positive: *const c_char,
    negative: *const c_char,
    out: *mut *mut CgPrompts,
) -> CgStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let pos = if positive.is_null() {
            DEFAULT_POSITIVE_PROMPT
        } else {
            string_arg(positive, "positive")?
        };
        let neg = if negative.is_null() {
            DEFAULT_NEGATIVE_PROMPT
        } else {
            string_arg(negative, "negative")?
        };
        let pair = PromptPair::encode(pos, neg, &m.vocab, &m.archive).map_err(fail(CgStatus::Compute))?;
        write_out(out, boxed(CgPrompts { pair }))
    })
}

/// Builds the class prompts from a trained CoOp context file.
///
/// # Safety
/// `model` must be live, `context_path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_prompts_from_context(
    model: *const CgModel,
    context_path: *const c_char,
    out: *mut *mut CgPrompts,
) -> CgStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let ctx = ContextVectors::load(path_arg(context_path, "context_path")?).map_err(fail(CgStatus::Io))?;
        let pair = coop_prompt_pair(&ctx, &m.archive).map_err(fail(CgStatus::InvalidModel))?;
        write_out(out, boxed(CgPrompts { pair }))
    })
}

/// # Safety
/// `prompts` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_prompts_free(prompts: *mut CgPrompts) {
    free(prompts)
}

/// Classifies a unit-norm image embedding against a prompt pair.
///
/// # Safety
/// `embedding` must hold `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_classify(
    prompts: *const CgPrompts,
    embedding: *const f32,
    len: usize,
    out: *mut CgVerdict,
) -> CgStatus {
    guard(|| {
        let p = non_null(prompts, "prompts")?;
        let e = embedding_arg(embedding, len)?;
        let v = classify_zero_shot(&e, &p.pair).map_err(fail(CgStatus::InvalidArgument))?;
        write_out(out, v.into())
    })
}

/// Loads a linear probe written by `cloudgate train-probe`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_probe_load(path: *const c_char, out: *mut *mut CgProbe) -> CgStatus {
    guard(|| {
        let model = ProbeModel::load(path_arg(path, "path")?).map_err(fail(CgStatus::Io))?;
        write_out(out, boxed(CgProbe { model }))
    })
}

/// # Safety
/// `probe` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_probe_free(probe: *mut CgProbe) {
    free(probe)
}

/// Feature length the probe expects: the embedding size, or twice that for
/// radar-fused probes. 0 for a null handle.
///
/// # Safety
/// `probe` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_probe_input_dim(probe: *const CgProbe) -> usize {
    probe.as_ref().map_or(0, |p| p.model.input_dim)
}

/// Applies the probe to a feature vector of `cg_probe_input_dim` floats.
///
/// # Safety
/// `features` must hold `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_probe_predict(
    probe: *const CgProbe,
    features: *const f32,
    len: usize,
    out: *mut CgVerdict,
) -> CgStatus {
    guard(|| {
        let p = non_null(probe, "probe")?;
        let x = slice_arg(features, len, "features")?;
        let v = predict_probe(&p.model, x).map_err(fail(CgStatus::InvalidArgument))?;
        write_out(out, v.into())
    })
}
