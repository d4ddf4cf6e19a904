//! C interface to `embalign`.
//!
//! Objects are opaque handles created by `*_load` or `embalign_align` and
//! released with the matching `*_free`. Every fallible call returns an
//! [`EmbalignStatus`]; on failure `embalign_last_error` describes the most
//! recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use embalign::eval::{evaluate, translate};
use embalign::finetune::{finetune, FinetuneConfig};
use embalign::io::{load_lexicon, load_transform, load_vec, save_transform, EmbeddingSet};
use embalign::orchestrator::align;
use embalign::{Error, PipelineConfig, Retrieval, TransformPair};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbalignStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    AllRunsFailed = 4,
    Numerical = 5,
    Format = 6,
    DimensionMismatch = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbalignMetric {
    Csls = 0,
    Nn = 1,
}

impl From<EmbalignMetric> for Retrieval {
    fn from(m: EmbalignMetric) -> Self {
        match m {
            EmbalignMetric::Csls => Retrieval::Csls,
            EmbalignMetric::Nn => Retrieval::Nn,
        }
    }
}

/// Alignment settings. Start from `embalign_align_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbalignAlignOptions {
    /// Nonzero selects the small desk preset.
    pub desk: u8,
    /// Zero keeps the preset value.
    pub vocab: usize,
    /// Zero keeps the preset value; nonzero disables the preset's cap.
    pub pca_dim: usize,
    /// Zero keeps the preset value.
    pub runs: usize,
    pub seed: u64,
    pub epochs_pca: usize,
    pub epochs_raw: usize,
    pub randomize_pca: u8,
    pub randomize_order: u8,
    /// Worker threads; zero uses every core.
    pub threads: usize,
}

/// Loaded embeddings.
pub struct EmbalignEmbeddings {
    set: EmbeddingSet,
    words: Vec<CString>,
}

/// A pair of learned transforms.
pub struct EmbalignTransform {
    pair: TransformPair,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> EmbalignStatus {
    match e {
        Error::Io { .. } => EmbalignStatus::Io,
        Error::AllRunsFailed(_) => EmbalignStatus::AllRunsFailed,
        Error::NonFiniteLoss { .. } => EmbalignStatus::Numerical,
        Error::DimensionMismatch { .. } => EmbalignStatus::DimensionMismatch,
        Error::MissingHeader(_)
        | Error::EmptyVocabulary
        | Error::CorruptTransformFile(_)
        | Error::CorruptMapFile(_)
        | Error::NoEvaluableWords => EmbalignStatus::Format,
        _ => EmbalignStatus::InvalidArgument,
    }
}

struct Fail(EmbalignStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EmbalignStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EmbalignStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EmbalignStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EmbalignStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(EmbalignStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn c_words(set: &EmbeddingSet) -> Vec<CString> {
    set.words()
        .iter()
        .map(|w| CString::new(w.as_bytes()).unwrap_or_else(|_| CString::new(w.replace('\0', "")).unwrap()))
        .collect()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn embalign_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a text embedding file. `max_words` of zero loads every word.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn embalign_embeddings_load(
    path: *const c_char,
    max_words: usize,
    out: *mut *mut EmbalignEmbeddings,
) -> EmbalignStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let set = load_vec(&path, (max_words > 0).then_some(max_words))?;
        let words = c_words(&set);
        *out = Box::into_raw(Box::new(EmbalignEmbeddings { set, words }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from `embalign_embeddings_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn embalign_embeddings_free(h: *mut EmbalignEmbeddings) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of words, or zero for a null handle.
///
/// # Safety
/// `h` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn embalign_embeddings_len(h: *const EmbalignEmbeddings) -> usize {
    h.as_ref().map_or(0, |h| h.set.len())
}

/// Vector dimension, or zero for a null handle.
///
/// # Safety
/// `h` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn embalign_embeddings_dim(h: *const EmbalignEmbeddings) -> usize {
    h.as_ref().map_or(0, |h| h.set.dim())
}

/// Word at `index`, owned by the handle; null when out of range.
///
/// # Safety
/// `h` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn embalign_embeddings_word(h: *const EmbalignEmbeddings, index: usize) -> *const c_char {
    match h.as_ref().and_then(|h| h.words.get(index)) {
        Some(w) => w.as_ptr(),
        None => ptr::null(),
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn embalign_transform_load(path: *const c_char, out: *mut *mut EmbalignTransform) -> EmbalignStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let pair = load_transform(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(EmbalignTransform { pair }));
        Ok(())
    })
}

/// # Safety
/// `h` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn embalign_transform_save(h: *const EmbalignTransform, path: *const c_char) -> EmbalignStatus {
    guard(|| {
        let h = handle(h, "transform")?;
        save_transform(&h.pair, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `h` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn embalign_transform_free(h: *mut EmbalignTransform) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn embalign_transform_dim(h: *const EmbalignTransform) -> usize {
    h.as_ref().map_or(0, |h| h.pair.dim())
}

/// Copies `T_xy` (`forward` nonzero) or `T_yx` into `out` in row-major
/// order. `len` must be at least `dim * dim`.
///
/// # Safety
/// `h` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn embalign_transform_copy(
    h: *const EmbalignTransform,
    forward: u8,
    out: *mut f64,
    len: usize,
) -> EmbalignStatus {
    guard(|| {
        let h = handle(h, "transform")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = if forward != 0 { &h.pair.t_xy } else { &h.pair.t_yx };
        let d = m.nrows();
        if len < d * d {
            return Err(Fail(EmbalignStatus::InvalidArgument, format!("buffer holds {len} values, need {}", d * d)));
        }
        let out = std::slice::from_raw_parts_mut(out, d * d);
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = m[(r, c)];
            }
        }
        Ok(())
    })
}

/// Defaults for the full-scale (`desk` zero) or desk preset.
#[no_mangle]
pub extern "C" fn embalign_align_options_default(desk: u8) -> EmbalignAlignOptions {
    let c = if desk != 0 { PipelineConfig::desk() } else { PipelineConfig::default() };
    EmbalignAlignOptions {
        desk,
        vocab: 0,
        pca_dim: 0,
        runs: 0,
        seed: c.master_seed,
        epochs_pca: c.pca_stage.epochs,
        epochs_raw: c.raw_stage.epochs,
        randomize_pca: c.policy.randomize_pca as u8,
        randomize_order: c.policy.randomize_order as u8,
        threads: 0,
    }
}

fn resolve(o: &EmbalignAlignOptions) -> PipelineConfig {
    let mut c = if o.desk != 0 { PipelineConfig::desk() } else { PipelineConfig::default() };
    if o.vocab > 0 {
        c.vocab = o.vocab;
    }
    if o.pca_dim > 0 {
        c.pca_dim = o.pca_dim;
        c.pca_dim_cap = None;
    }
    if o.runs > 0 {
        c.runs = o.runs;
    }
    c.master_seed = o.seed;
    c.pca_stage.epochs = o.epochs_pca;
    c.raw_stage.epochs = o.epochs_raw;
    c.policy.randomize_pca = o.randomize_pca != 0;
    c.policy.randomize_order = o.randomize_order != 0;
    c
}

/// Runs the full unsupervised pipeline and returns the learned transforms.
///
/// # Safety
/// Handles must be live, `options` may be null for desk defaults, and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn embalign_align(
    source: *const EmbalignEmbeddings,
    target: *const EmbalignEmbeddings,
    options: *const EmbalignAlignOptions,
    out: *mut *mut EmbalignTransform,
) -> EmbalignStatus {
    guard(|| {
        let (src, tgt) = (handle(source, "source")?, handle(target, "target")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let options = options.as_ref().copied().unwrap_or_else(|| embalign_align_options_default(1));
        let config = resolve(&options);
        let threads = (options.threads > 0).then_some(options.threads);
        let result = align(&src.set, &tgt.set, &config, threads)?;
        *out = Box::into_raw(Box::new(EmbalignTransform {
            pair: result.transforms().clone(),
        }));
        Ok(())
    })
}

/// Refines `init` with `iterations` rounds of iterative Procrustes.
///
/// # Safety
/// Handles must be live and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn embalign_finetune(
    source: *const EmbalignEmbeddings,
    target: *const EmbalignEmbeddings,
    init: *const EmbalignTransform,
    iterations: usize,
    metric: EmbalignMetric,
    out: *mut *mut EmbalignTransform,
) -> EmbalignStatus {
    guard(|| {
        let (src, tgt) = (handle(source, "source")?, handle(target, "target")?);
        let init = handle(init, "init")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = FinetuneConfig {
            iterations,
            match_metric: metric.into(),
            ..FinetuneConfig::default()
        };
        let refined = finetune(src.set.vectors(), tgt.set.vectors(), &init.pair, &config)?;
        *out = Box::into_raw(Box::new(EmbalignTransform {
            pair: refined.transforms,
        }));
        Ok(())
    })
}

/// Top-`k` target rows for one source word. Writes up to `k` target
/// indices and scores, best first, and their number to `count`.
///
/// # Safety
/// Handles must be live, `word` NUL-terminated, `indices` and `scores`
/// must hold `k` values, and `count` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn embalign_translate(
    source: *const EmbalignEmbeddings,
    target: *const EmbalignEmbeddings,
    transform: *const EmbalignTransform,
    word: *const c_char,
    metric: EmbalignMetric,
    k: usize,
    indices: *mut usize,
    scores: *mut f64,
    count: *mut usize,
) -> EmbalignStatus {
    guard(|| {
        let (src, tgt) = (handle(source, "source")?, handle(target, "target")?);
        let t = handle(transform, "transform")?;
        let word = str_arg(word, "word")?.to_string();
        if indices.is_null() || scores.is_null() || count.is_null() {
            return Err(null("output buffer"));
        }
        if k == 0 {
            return Err(Fail(EmbalignStatus::InvalidArgument, "k must be positive".into()));
        }
        let words = [word];
        let k_eff = k.min(tgt.set.len());
        let (found, unknown) = translate(&src.set, &tgt.set, &t.pair, Some(&words), metric.into(), k_eff, 10.min(tgt.set.len()))?;
        if !unknown.is_empty() {
            return Err(Fail(EmbalignStatus::InvalidArgument, format!("unknown word: {}", unknown[0])));
        }
        let cands = &found[0].candidates;
        let out_i = std::slice::from_raw_parts_mut(indices, k);
        let out_s = std::slice::from_raw_parts_mut(scores, k);
        for (slot, (w, s)) in cands.iter().enumerate() {
            out_i[slot] = tgt.set.index_of(w).expect("candidate from target vocabulary");
            out_s[slot] = *s;
        }
        *count = cands.len();
        Ok(())
    })
}

/// Precision@`k` against the two-column lexicon at `lexicon_path`.
///
/// # Safety
/// Handles must be live, `lexicon_path` NUL-terminated, and the output
/// pointers valid; `n_evaluated` may be null.
#[no_mangle]
pub unsafe extern "C" fn embalign_evaluate(
    source: *const EmbalignEmbeddings,
    target: *const EmbalignEmbeddings,
    transform: *const EmbalignTransform,
    lexicon_path: *const c_char,
    metric: EmbalignMetric,
    k: usize,
    precision: *mut f64,
    n_evaluated: *mut usize,
) -> EmbalignStatus {
    guard(|| {
        let (src, tgt) = (handle(source, "source")?, handle(target, "target")?);
        let t = handle(transform, "transform")?;
        if precision.is_null() {
            return Err(null("precision"));
        }
        let lex = load_lexicon(&path_arg(lexicon_path, "lexicon_path")?)?;
        let report = evaluate(&src.set, &tgt.set, &t.pair, &lex, metric.into(), &[k], 10.min(tgt.set.len()))?;
        *precision = report.precision[0];
        if !n_evaluated.is_null() {
            *n_evaluated = report.n_evaluated;
        }
        Ok(())
    })
}
