//! C ABI over the `screenlab` library.
//!
//! Every fallible function returns a [`ScreenlabStatus`]. On failure the
//! message is kept per thread and can be copied out with
//! [`screenlab_last_error_message`]. Panics never cross the boundary; they
//! surface as [`ScreenlabStatus::Panic`].
//!
//! Handles ([`ScreenlabCorpus`], [`ScreenlabHead`]) are opaque and owned by
//! the caller once returned. Release them with the matching `_free` call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use screenlab::corpus::{parse_corpus, trim_credits, Corpus, CorpusError, Emotion, EmotionalityMode, N_LABELS};
use screenlab::diachronic::{fixed_effects_ols, DiachronicError, PanelObservation};
use screenlab::emotion_stats::{dirichlet_entropy, dirichlet_mle, BootstrapConfig, MleConfig};
use screenlab::evalkit::{ser_head_forward_slice, SerHeadParams};
use screenlab::narrative::{trajectory, Measure};
use screenlab::phrase_graph::{leiden_partition, SimilarityGraph};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScreenlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    InvalidData = 4,
    Degenerate = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Fixed-effects regression summary.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScreenlabRegression {
    pub beta: f64,
    pub se: f64,
    pub r2: f64,
    pub f_stat: f64,
    pub p_value: f64,
    pub df1: u64,
    pub df2: u64,
    pub n_obs: u64,
    pub n_groups: u64,
}

/// A validated corpus.
pub struct ScreenlabCorpus {
    corpus: Corpus,
}

/// A loaded emotion head.
pub struct ScreenlabHead {
    params: SerHeadParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type FfiResult<T = ()> = Result<T, (ScreenlabStatus, String)>;

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard<F: FnOnce() -> FfiResult>(f: F) -> ScreenlabStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScreenlabStatus::Ok,
        Ok(Err((status, msg))) => {
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
            ScreenlabStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> (ScreenlabStatus, String) {
    (ScreenlabStatus::InvalidArgument, msg.into())
}

fn null(name: &str) -> (ScreenlabStatus, String) {
    (ScreenlabStatus::NullPointer, format!("`{name}` is NULL"))
}

fn corpus_error(e: CorpusError) -> (ScreenlabStatus, String) {
    let status = match e {
        CorpusError::Io(..) | CorpusError::Write(_) => ScreenlabStatus::Io,
        CorpusError::Invalid(_) | CorpusError::Shape(_) => ScreenlabStatus::InvalidData,
    };
    (status, e.to_string())
}

fn data_error(e: impl std::fmt::Display) -> (ScreenlabStatus, String) {
    (ScreenlabStatus::InvalidData, e.to_string())
}

/// # Safety
/// `p` is NULL or valid for `n` reads.
unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> FfiResult<&'a [T]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` is NULL or valid for `n` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, name: &str) -> FfiResult<&'a mut [T]> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

/// # Safety
/// `p` is NULL or valid for one write.
unsafe fn write_out<T>(p: *mut T, v: T, name: &str) -> FfiResult {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(v);
    Ok(())
}

/// # Safety
/// `p` is NULL or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char, name: &str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn mode_arg(mode: u32) -> FfiResult<EmotionalityMode> {
    match mode {
        0 => Ok(EmotionalityMode::Prob),
        1 => Ok(EmotionalityMode::Argmax),
        _ => Err(invalid(format!("mode must be 0 (prob) or 1 (argmax), got {mode}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn screenlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of emotion labels.
#[no_mangle]
pub extern "C" fn screenlab_n_labels() -> usize {
    N_LABELS
}

/// Static name of label `index`, or NULL when out of range.
#[no_mangle]
pub extern "C" fn screenlab_label_name(index: usize) -> *const c_char {
    const NAMES: [&str; N_LABELS] = [
        "anger\0",
        "disgust\0",
        "fear\0",
        "joy\0",
        "neutral\0",
        "sadness\0",
        "surprise\0",
    ];
    NAMES.get(index).map_or(ptr::null(), |s| s.as_ptr().cast())
}

/// Copies the calling thread's last error message into `buf`, truncating
/// to `len - 1` bytes plus NUL. Returns the full message length excluding
/// the NUL, or 0 when the last call succeeded.
///
/// # Safety
/// `buf` is NULL or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn screenlab_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Differential entropy (nats) of Dirichlet(`alpha[0..k]`).
///
/// # Safety
/// `alpha` is valid for `k` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_dirichlet_entropy(alpha: *const f64, k: usize, out: *mut f64) -> ScreenlabStatus {
    guard(|| {
        let a = slice(alpha, k, "alpha")?;
        let h = dirichlet_entropy(a).map_err(data_error)?;
        write_out(out, h, "out")
    })
}

/// Maximum-likelihood Dirichlet fit to `n` row-major samples of dimension
/// `k`. Entries are floored at `epsilon` and rows renormalized first.
/// `converged` may be NULL.
///
/// # Safety
/// `samples` is valid for `n * k` reads, `alpha_out` for `k` writes and
/// `converged` is NULL or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_dirichlet_mle(
    samples: *const f64,
    n: usize,
    k: usize,
    epsilon: f64,
    alpha_out: *mut f64,
    converged: *mut bool,
) -> ScreenlabStatus {
    guard(|| {
        if k < 2 {
            return Err(invalid(format!("k must be at least 2, got {k}")));
        }
        let total = n.checked_mul(k).ok_or_else(|| invalid("n * k overflows"))?;
        let data = slice(samples, total, "samples")?;
        let out = slice_mut(alpha_out, k, "alpha_out")?;
        let rows: Vec<&[f64]> = data.chunks_exact(k).collect();
        let cfg = MleConfig {
            epsilon,
            ..MleConfig::default()
        };
        let fit = dirichlet_mle(&rows, &cfg).map_err(data_error)?;
        out.copy_from_slice(&fit.alpha);
        if !converged.is_null() {
            converged.write(fit.converged);
        }
        Ok(())
    })
}

/// Leiden modularity partition of an undirected weighted graph given as
/// `n_edges` parallel arrays. Writes a dense community id per node into
/// `membership[0..n_nodes]`. `quality` and `n_communities` may be NULL.
///
/// # Safety
/// `src`, `dst` and `weight` are valid for `n_edges` reads; `membership`
/// for `n_nodes` writes; optional outputs are NULL or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_leiden(
    n_nodes: usize,
    src: *const u32,
    dst: *const u32,
    weight: *const f64,
    n_edges: usize,
    resolution: f64,
    seed: u64,
    membership: *mut u32,
    quality: *mut f64,
    n_communities: *mut usize,
) -> ScreenlabStatus {
    guard(|| {
        if n_nodes == 0 {
            return Err(invalid("graph has no nodes"));
        }
        if u32::try_from(n_nodes).is_err() {
            return Err(invalid("too many nodes for 32-bit ids"));
        }
        let s = slice(src, n_edges, "src")?;
        let d = slice(dst, n_edges, "dst")?;
        let w = slice(weight, n_edges, "weight")?;
        let out = slice_mut(membership, n_nodes, "membership")?;
        let edges: Vec<(usize, usize, f64)> = (0..n_edges).map(|i| (s[i] as usize, d[i] as usize, w[i])).collect();
        let names = (0..n_nodes).map(|i| i.to_string()).collect();
        let g = SimilarityGraph::from_edges(names, &edges).map_err(|e| invalid(e.to_string()))?;
        let p = leiden_partition(&g, resolution, seed).map_err(|e| invalid(e.to_string()))?;
        for (o, &c) in out.iter_mut().zip(&p.community_of) {
            *o = c as u32;
        }
        if !quality.is_null() {
            quality.write(p.quality);
        }
        if !n_communities.is_null() {
            n_communities.write(p.n_communities);
        }
        Ok(())
    })
}

/// Within (fixed-effects) regression of `y` on `x` with one intercept per
/// value of `group`.
///
/// # Safety
/// `group`, `x` and `y` are valid for `n` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_fixed_effects(
    group: *const u32,
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut ScreenlabRegression,
) -> ScreenlabStatus {
    guard(|| {
        let g = slice(group, n, "group")?;
        let xs = slice(x, n, "x")?;
        let ys = slice(y, n, "y")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let obs: Vec<PanelObservation> = (0..n)
            .map(|i| PanelObservation {
                group_id: g[i] as usize,
                x: xs[i],
                y: ys[i],
                utt_id: i.to_string(),
            })
            .collect();
        let r = fixed_effects_ols(&obs).map_err(|e| match e {
            DiachronicError::DegenerateDesign | DiachronicError::InsufficientData { .. } => {
                (ScreenlabStatus::Degenerate, e.to_string())
            }
            other => data_error(other),
        })?;
        out.write(ScreenlabRegression {
            beta: r.beta,
            se: r.se,
            r2: r.r2,
            f_stat: r.f_stat,
            p_value: r.p_value,
            df1: r.df1 as u64,
            df2: r.df2 as u64,
            n_obs: r.n_obs as u64,
            n_groups: r.n_groups as u64,
        });
        Ok(())
    })
}

/// Parses and validates a corpus from its two JSONL files.
///
/// # Safety
/// Paths are NUL-terminated strings; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_corpus_open(
    utterances_path: *const c_char,
    films_path: *const c_char,
    out: *mut *mut ScreenlabCorpus,
) -> ScreenlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let u = path_arg(utterances_path, "utterances_path")?;
        let f = path_arg(films_path, "films_path")?;
        let corpus = parse_corpus(&u, &f).map_err(corpus_error)?;
        out.write(Box::into_raw(Box::new(ScreenlabCorpus { corpus })));
        Ok(())
    })
}

/// Releases a corpus. NULL is ignored.
///
/// # Safety
/// `corpus` is NULL or a live handle from [`screenlab_corpus_open`].
#[no_mangle]
pub unsafe extern "C" fn screenlab_corpus_free(corpus: *mut ScreenlabCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of utterances, 0 for NULL.
///
/// # Safety
/// `corpus` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn screenlab_corpus_n_utterances(corpus: *const ScreenlabCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.utterances.len())
}

/// Number of films, 0 for NULL.
///
/// # Safety
/// `corpus` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn screenlab_corpus_n_films(corpus: *const ScreenlabCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.films.len())
}

/// Drops utterances at or after each film's credits start, in place.
///
/// # Safety
/// `corpus` is NULL or a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn screenlab_corpus_trim_credits(corpus: *mut ScreenlabCorpus) -> ScreenlabStatus {
    guard(|| {
        let c = corpus.as_mut().ok_or_else(|| null("corpus"))?;
        c.corpus = trim_credits(&c.corpus);
        Ok(())
    })
}

/// Binned narrative trajectory with film-level bootstrap intervals.
///
/// `label` selects the measure: a negative value means emotionality,
/// otherwise the share of that label among emotional utterances (neutral
/// is rejected). `mode` is 0 (prob) or 1 (argmax). Each output array holds
/// `n_bins` entries; bins without utterances get NaN. `n_utts` may be NULL.
///
/// # Safety
/// `corpus` is a live handle; `point`, `lo`, `hi` are valid for `n_bins`
/// writes and `n_utts` is NULL or valid for `n_bins` writes.
#[no_mangle]
pub unsafe extern "C" fn screenlab_trajectory(
    corpus: *const ScreenlabCorpus,
    label: i32,
    mode: u32,
    n_bins: usize,
    n_boot: usize,
    seed: u64,
    point: *mut f64,
    lo: *mut f64,
    hi: *mut f64,
    n_utts: *mut usize,
) -> ScreenlabStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        let measure = if label < 0 {
            Measure::Emotionality
        } else {
            let e = Emotion::from_index(label as usize).ok_or_else(|| invalid(format!("no label with index {label}")))?;
            if e == Emotion::Neutral {
                return Err(invalid("neutral is not a trajectory measure"));
            }
            Measure::Proportion(e)
        };
        let mode = mode_arg(mode)?;
        let p = slice_mut(point, n_bins, "point")?;
        let l = slice_mut(lo, n_bins, "lo")?;
        let h = slice_mut(hi, n_bins, "hi")?;
        let counts = if n_utts.is_null() {
            None
        } else {
            Some(slice_mut(n_utts, n_bins, "n_utts")?)
        };
        let boot = BootstrapConfig {
            n_boot,
            seed,
            ..BootstrapConfig::default()
        };
        let rep = trajectory(&c.corpus, measure, mode, n_bins, &boot).map_err(|e| invalid(e.to_string()))?;
        for (i, b) in rep.series.iter().enumerate() {
            p[i] = b.point.unwrap_or(f64::NAN);
            l[i] = b.ci.as_ref().map_or(f64::NAN, |ci| ci.lo);
            h[i] = b.ci.as_ref().map_or(f64::NAN, |ci| ci.hi);
        }
        if let Some(counts) = counts {
            for (o, b) in counts.iter_mut().zip(&rep.series) {
                *o = b.n_utts;
            }
        }
        Ok(())
    })
}

/// Loads an emotion-head weight file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_head_load(path: *const c_char, out: *mut *mut ScreenlabHead) -> ScreenlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let p = path_arg(path, "path")?;
        let params = SerHeadParams::load(&p).map_err(|e| match e {
            screenlab::evalkit::EvalError::Io(_) => (ScreenlabStatus::Io, e.to_string()),
            other => data_error(other),
        })?;
        out.write(Box::into_raw(Box::new(ScreenlabHead { params })));
        Ok(())
    })
}

/// Releases a head. NULL is ignored.
///
/// # Safety
/// `head` is NULL or a live handle from [`screenlab_head_load`].
#[no_mangle]
pub unsafe extern "C" fn screenlab_head_free(head: *mut ScreenlabHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Input shape of a head: layers and per-layer dimension.
///
/// # Safety
/// `head` is a live handle; outputs are valid for one write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_head_dims(
    head: *const ScreenlabHead,
    n_layers: *mut usize,
    input_dim: *mut usize,
) -> ScreenlabStatus {
    guard(|| {
        let h = head.as_ref().ok_or_else(|| null("head"))?;
        write_out(n_layers, h.params.header.n_layers, "n_layers")?;
        write_out(input_dim, h.params.header.input_dim, "input_dim")
    })
}

/// Label distribution for one utterance. `layers` is row-major
/// `n_layers * input_dim`; `probs_out` receives [`screenlab_n_labels`]
/// values. Fails with `BufferTooSmall` when `probs_len` is short.
///
/// # Safety
/// `head` is a live handle; `layers` is valid for `len` reads and
/// `probs_out` for `probs_len` writes.
#[no_mangle]
pub unsafe extern "C" fn screenlab_head_forward(
    head: *const ScreenlabHead,
    layers: *const f32,
    len: usize,
    probs_out: *mut f64,
    probs_len: usize,
) -> ScreenlabStatus {
    guard(|| {
        let h = head.as_ref().ok_or_else(|| null("head"))?;
        if probs_len < N_LABELS {
            return Err((
                ScreenlabStatus::BufferTooSmall,
                format!("probs_out holds {probs_len} values, need {N_LABELS}"),
            ));
        }
        let x = slice(layers, len, "layers")?;
        let out = slice_mut(probs_out, N_LABELS, "probs_out")?;
        let dist = ser_head_forward_slice(x, &h.params).map_err(|e| invalid(e.to_string()))?;
        out.copy_from_slice(dist.probs());
        Ok(())
    })
}
