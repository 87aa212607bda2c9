//! C interface to `recursive_lda`.
//!
//! Objects are opaque handles created by `rlda_*` constructors and released
//! with the matching `*_free`. Every fallible call returns an `RldaStatus`;
//! on failure `rlda_last_error` describes the most recent error on the
//! calling thread. Strings returned through out-parameters are owned by the
//! caller and released with `rlda_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use recursive_lda::corpus::{ingest, preprocess, Corpus, IngestOptions, InputFormat, PreprocessConfig};
use recursive_lda::evalmetrics;
use recursive_lda::experiments;
use recursive_lda::hdp::{self, EscalationMode, HdpConfig};
use recursive_lda::lda::{self, LdaConfig, LdaModel};
use recursive_lda::recursor::{self, GuardParams, InitialK, Outcome, RecursionConfig, RecursionTrace};
use recursive_lda::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RldaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Config = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RldaOutcome {
    Success = 0,
    FailureGammaDrop = 1,
    FailureSteadyDecrease = 2,
    FailureStepCap = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RldaInitialK {
    Explicit = 0,
    Hdp1 = 1,
    Hdp2 = 2,
}

/// Opaque corpus handle.
pub struct RldaCorpus(Corpus);
/// Opaque fitted LDA model handle.
pub struct RldaModel(LdaModel);
/// Opaque recursion trace handle.
pub struct RldaTrace(RecursionTrace);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RldaLdaConfig {
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RldaHdpConfig {
    pub gamma: f64,
    pub beta_prior: f64,
    pub eta_doc: f64,
    /// 0 means the corpus size.
    pub truncation: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub refit_escalation: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RldaRecursionConfig {
    pub gamma_guard: f64,
    pub eta_guard: usize,
    pub max_steps: usize,
    pub initial_k_source: RldaInitialK,
    /// Used when `initial_k_source` is `Explicit`.
    pub initial_k: usize,
    /// `k` and `seed` are ignored.
    pub lda: RldaLdaConfig,
    pub hdp: RldaHdpConfig,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RldaEscalation {
    pub hdp1: usize,
    pub hdp2: usize,
    pub hdp3: usize,
    pub degenerate: [bool; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RldaStep {
    pub step_index: usize,
    pub k_specified: usize,
    pub k_effective: usize,
    pub efficiency_ratio: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: RldaStatus, msg: impl Into<String>) -> RldaStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> RldaStatus {
    match e {
        Error::Io { .. } => RldaStatus::Io,
        Error::InvalidConfig(_) => RldaStatus::Config,
        Error::PrefixOutOfRange { .. } | Error::TopicOutOfRange { .. } | Error::TooManyTopics { .. } => {
            RldaStatus::OutOfRange
        }
        _ => RldaStatus::Data,
    }
}

/// Run `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), RldaStatus>>(f: F) -> RldaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RldaStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(RldaStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, RldaStatus>;
}

impl<T> OrStatus<T> for recursive_lda::Result<T> {
    fn or_status(self) -> Result<T, RldaStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, RldaStatus> {
    p.as_ref().ok_or_else(|| fail(RldaStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, RldaStatus> {
    p.as_mut().ok_or_else(|| fail(RldaStatus::NullPointer, format!("{name} is null")))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, RldaStatus> {
    if p.is_null() {
        return Err(fail(RldaStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RldaStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn string_out(s: String) -> Result<*mut c_char, RldaStatus> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(RldaStatus::Data, "string contains a nul byte"))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

impl From<RldaLdaConfig> for LdaConfig {
    fn from(c: RldaLdaConfig) -> Self {
        LdaConfig {
            k: c.k,
            alpha: c.alpha,
            eta: c.eta,
            sweeps: c.sweeps,
            burn_in: c.burn_in,
            seed: c.seed,
        }
    }
}

impl From<RldaHdpConfig> for HdpConfig {
    fn from(c: RldaHdpConfig) -> Self {
        HdpConfig {
            gamma: c.gamma,
            beta_prior: c.beta_prior,
            eta_doc: c.eta_doc,
            truncation: (c.truncation > 0).then_some(c.truncation),
            sweeps: c.sweeps,
            burn_in: c.burn_in,
            seed: c.seed,
            escalation: if c.refit_escalation {
                EscalationMode::Refit
            } else {
                EscalationMode::Rethreshold
            },
        }
    }
}

fn escalation_out(e: &hdp::Escalation) -> RldaEscalation {
    RldaEscalation {
        hdp1: e.hdp1,
        hdp2: e.hdp2,
        hdp3: e.hdp3,
        degenerate: e.degenerate_flags,
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next `rlda_*` call on the same thread.
#[no_mangle]
pub extern "C" fn rlda_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn rlda_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default LDA settings for `k` topics.
#[no_mangle]
pub extern "C" fn rlda_lda_config_default(k: usize) -> RldaLdaConfig {
    let c = LdaConfig::new(k);
    RldaLdaConfig {
        k: c.k,
        alpha: c.alpha,
        eta: c.eta,
        sweeps: c.sweeps,
        burn_in: c.burn_in,
        seed: c.seed,
    }
}

#[no_mangle]
pub extern "C" fn rlda_hdp_config_default() -> RldaHdpConfig {
    let c = HdpConfig::default();
    RldaHdpConfig {
        gamma: c.gamma,
        beta_prior: c.beta_prior,
        eta_doc: c.eta_doc,
        truncation: c.truncation.unwrap_or(0),
        sweeps: c.sweeps,
        burn_in: c.burn_in,
        seed: c.seed,
        refit_escalation: c.escalation == EscalationMode::Refit,
    }
}

#[no_mangle]
pub extern "C" fn rlda_recursion_config_default() -> RldaRecursionConfig {
    let g = GuardParams::default();
    RldaRecursionConfig {
        gamma_guard: g.gamma_guard,
        eta_guard: g.eta_guard,
        max_steps: g.max_steps,
        initial_k_source: RldaInitialK::Hdp2,
        initial_k: 0,
        lda: rlda_lda_config_default(1),
        hdp: rlda_hdp_config_default(),
        seed: 0,
    }
}

/// Load a corpus JSON file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlda_corpus_load(path: *const c_char, out_corpus: *mut *mut RldaCorpus) -> RldaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_corpus, "out_corpus")?;
        let corpus = Corpus::load(&PathBuf::from(path)).or_status()?;
        *slot = boxed(RldaCorpus(corpus));
        Ok(())
    })
}

/// Parse a corpus from its JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlda_corpus_from_json(json: *const c_char, out_corpus: *mut *mut RldaCorpus) -> RldaStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let slot = out(out_corpus, "out_corpus")?;
        *slot = boxed(RldaCorpus(Corpus::from_json(json).or_status()?));
        Ok(())
    })
}

/// Ingest a question CSV and clean it with the default settings.
/// Null column names select `id` and `question`.
///
/// # Safety
/// String arguments must be null (columns only) or nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn rlda_corpus_from_csv(
    path: *const c_char,
    id_col: *const c_char,
    text_col: *const c_char,
    out_corpus: *mut *mut RldaCorpus,
) -> RldaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_corpus, "out_corpus")?;
        let mut opts = IngestOptions::default();
        if !id_col.is_null() {
            opts.id_col = str_arg(id_col, "id_col")?.to_string();
        }
        if !text_col.is_null() {
            opts.text_col = str_arg(text_col, "text_col")?.to_string();
        }
        let records = ingest(&PathBuf::from(path), InputFormat::Csv, &opts).or_status()?;
        let corpus = preprocess(&records, &PreprocessConfig::default(), path).or_status()?;
        *slot = boxed(RldaCorpus(corpus));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_corpus_free(corpus: *mut RldaCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of documents.
///
/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_corpus_len(corpus: *const RldaCorpus, out_len: *mut usize) -> RldaStatus {
    guard(|| {
        let c = borrow(corpus, "corpus")?;
        *out(out_len, "out_len")? = c.0.len();
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_corpus_vocab_size(corpus: *const RldaCorpus, out_size: *mut usize) -> RldaStatus {
    guard(|| {
        let c = borrow(corpus, "corpus")?;
        *out(out_size, "out_size")? = c.0.vocab_size();
        Ok(())
    })
}

/// New corpus with documents shuffled by `seed`.
///
/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_corpus_permute(
    corpus: *const RldaCorpus,
    seed: u64,
    out_corpus: *mut *mut RldaCorpus,
) -> RldaStatus {
    guard(|| {
        let c = borrow(corpus, "corpus")?;
        *out(out_corpus, "out_corpus")? = boxed(RldaCorpus(c.0.permute(seed)));
        Ok(())
    })
}

/// New corpus of the first `k` documents.
///
/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_corpus_prefix(
    corpus: *const RldaCorpus,
    k: usize,
    out_corpus: *mut *mut RldaCorpus,
) -> RldaStatus {
    guard(|| {
        let c = borrow(corpus, "corpus")?;
        let slot = out(out_corpus, "out_corpus")?;
        *slot = boxed(RldaCorpus(c.0.prefix(k).or_status()?));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_corpus_to_json(corpus: *const RldaCorpus, out_json: *mut *mut c_char) -> RldaStatus {
    guard(|| {
        let c = borrow(corpus, "corpus")?;
        let slot = out(out_json, "out_json")?;
        *slot = string_out(c.0.to_json().or_status()?)?;
        Ok(())
    })
}

/// Fit LDA.
///
/// # Safety
/// `corpus` and `config` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rlda_lda_fit(
    corpus: *const RldaCorpus,
    config: *const RldaLdaConfig,
    out_model: *mut *mut RldaModel,
) -> RldaStatus {
    guard(|| {
        let c = borrow(corpus, "corpus")?;
        let cfg: LdaConfig = (*borrow(config, "config")?).into();
        let slot = out(out_model, "out_model")?;
        *slot = boxed(RldaModel(lda::fit(&c.0, &cfg).or_status()?));
        Ok(())
    })
}

/// # Safety
/// `json` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn rlda_model_from_json(json: *const c_char, out_model: *mut *mut RldaModel) -> RldaStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let slot = out(out_model, "out_model")?;
        *slot = boxed(RldaModel(LdaModel::from_json(json).or_status()?));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_model_to_json(model: *const RldaModel, out_json: *mut *mut c_char) -> RldaStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let slot = out(out_json, "out_json")?;
        *slot = string_out(m.0.to_json().or_status()?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_model_free(model: *mut RldaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_model_k(model: *const RldaModel, out_k: *mut usize) -> RldaStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        *out(out_k, "out_k")? = m.0.k();
        Ok(())
    })
}

/// Number of topics that dominate at least one document.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_model_effective_topic_count(model: *const RldaModel, out_count: *mut usize) -> RldaStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        *out(out_count, "out_count")? = m.0.effective_topic_count();
        Ok(())
    })
}

/// Dominant topic of document `doc` and its share.
///
/// # Safety
/// `model` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rlda_model_dominant_topic(
    model: *const RldaModel,
    doc: usize,
    out_topic: *mut usize,
    out_contribution: *mut f64,
) -> RldaStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let topic = out(out_topic, "out_topic")?;
        let contribution = out(out_contribution, "out_contribution")?;
        let row = m.0.theta().get(doc).ok_or_else(|| {
            fail(
                RldaStatus::OutOfRange,
                format!("document {doc} out of range for {} documents", m.0.num_documents()),
            )
        })?;
        let t = lda::argmax(row);
        *topic = t;
        *contribution = row[t];
        Ok(())
    })
}

/// Fit the truncated HDP and escalate its weights.
///
/// # Safety
/// `corpus` and `config` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rlda_hdp_fit(
    corpus: *const RldaCorpus,
    config: *const RldaHdpConfig,
    out_escalation: *mut RldaEscalation,
) -> RldaStatus {
    guard(|| {
        let c = borrow(corpus, "corpus")?;
        let cfg: HdpConfig = (*borrow(config, "config")?).into();
        let slot = out(out_escalation, "out_escalation")?;
        let est = hdp::fit_hdp(&c.0, &cfg).or_status()?;
        *slot = escalation_out(&est.escalation());
        Ok(())
    })
}

/// Escalating significance counts for a weight vector over a corpus of `n`
/// documents.
///
/// # Safety
/// `weights` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rlda_escalate(
    weights: *const f64,
    len: usize,
    n: usize,
    out_escalation: *mut RldaEscalation,
) -> RldaStatus {
    guard(|| {
        if weights.is_null() {
            return Err(fail(RldaStatus::NullPointer, "weights is null"));
        }
        if n == 0 {
            return Err(fail(RldaStatus::InvalidArgument, "corpus size must be at least 1"));
        }
        let slot = out(out_escalation, "out_escalation")?;
        let w = std::slice::from_raw_parts(weights, len);
        *slot = escalation_out(&hdp::escalate(w, n));
        Ok(())
    })
}

/// Run the recursive refinement.
///
/// # Safety
/// `corpus` and `config` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rlda_recurse(
    corpus: *const RldaCorpus,
    config: *const RldaRecursionConfig,
    out_trace: *mut *mut RldaTrace,
) -> RldaStatus {
    guard(|| {
        let c = borrow(corpus, "corpus")?;
        let cfg = *borrow(config, "config")?;
        let slot = out(out_trace, "out_trace")?;
        let config = RecursionConfig {
            guards: GuardParams {
                gamma_guard: cfg.gamma_guard,
                eta_guard: cfg.eta_guard,
                max_steps: cfg.max_steps,
            },
            lda_template: cfg.lda.into(),
            initial_k: match cfg.initial_k_source {
                RldaInitialK::Explicit => InitialK::Explicit(cfg.initial_k),
                RldaInitialK::Hdp1 => InitialK::Hdp1,
                RldaInitialK::Hdp2 => InitialK::Hdp2,
            },
            hdp: cfg.hdp.into(),
            seed: cfg.seed,
        };
        *slot = boxed(RldaTrace(recursor::run_recursion(&c.0, &config).or_status()?));
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_trace_free(trace: *mut RldaTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_trace_len(trace: *const RldaTrace, out_len: *mut usize) -> RldaStatus {
    guard(|| {
        let t = borrow(trace, "trace")?;
        *out(out_len, "out_len")? = t.0.len();
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_trace_step(trace: *const RldaTrace, index: usize, out_step: *mut RldaStep) -> RldaStatus {
    guard(|| {
        let t = borrow(trace, "trace")?;
        let slot = out(out_step, "out_step")?;
        let s = t.0.steps.get(index).ok_or_else(|| {
            fail(
                RldaStatus::OutOfRange,
                format!("step {index} out of range for {} steps", t.0.len()),
            )
        })?;
        *slot = RldaStep {
            step_index: s.step_index,
            k_specified: s.k_specified,
            k_effective: s.k_effective,
            efficiency_ratio: s.efficiency_ratio,
        };
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_trace_outcome(trace: *const RldaTrace, out_outcome: *mut RldaOutcome) -> RldaStatus {
    guard(|| {
        let t = borrow(trace, "trace")?;
        *out(out_outcome, "out_outcome")? = match t.0.outcome {
            Outcome::Success => RldaOutcome::Success,
            Outcome::FailureGammaDrop => RldaOutcome::FailureGammaDrop,
            Outcome::FailureSteadyDecrease => RldaOutcome::FailureSteadyDecrease,
            Outcome::FailureStepCap => RldaOutcome::FailureStepCap,
        };
        Ok(())
    })
}

/// Trace as JSON lines: one per step, then the outcome record.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_trace_to_jsonl(trace: *const RldaTrace, out_jsonl: *mut *mut c_char) -> RldaStatus {
    guard(|| {
        let t = borrow(trace, "trace")?;
        let slot = out(out_jsonl, "out_jsonl")?;
        *slot = string_out(recursor::trace_to_jsonl(&t.0).or_status()?)?;
        Ok(())
    })
}

/// Copy of the final model of a successful recursion.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rlda_trace_final_model(trace: *const RldaTrace, out_model: *mut *mut RldaModel) -> RldaStatus {
    guard(|| {
        let t = borrow(trace, "trace")?;
        let slot = out(out_model, "out_model")?;
        let m = t
            .0
            .final_model
            .as_ref()
            .ok_or_else(|| fail(RldaStatus::Data, "trace has no final model"))?;
        *slot = boxed(RldaModel(m.clone()));
        Ok(())
    })
}

/// Held-out perplexity with the default fold-in settings.
///
/// # Safety
/// `model` and `held_out` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn rlda_perplexity(
    model: *const RldaModel,
    held_out: *const RldaCorpus,
    out_value: *mut f64,
) -> RldaStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let c = borrow(held_out, "held_out")?;
        let slot = out(out_value, "out_value")?;
        *slot = evalmetrics::perplexity(&m.0, &c.0).or_status()?.value;
        Ok(())
    })
}

/// Mode of `values`, ties resolved toward the mean and then downward.
///
/// # Safety
/// `values` must point to `len` integers.
#[no_mangle]
pub unsafe extern "C" fn rlda_mean_mode(values: *const usize, len: usize, out_value: *mut usize) -> RldaStatus {
    guard(|| {
        if values.is_null() {
            return Err(fail(RldaStatus::NullPointer, "values is null"));
        }
        let slot = out(out_value, "out_value")?;
        let v = std::slice::from_raw_parts(values, len);
        *slot = experiments::mean_mode(v).or_status()?;
        Ok(())
    })
}
