use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use screenlab_ffi::*;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { screenlab_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(n.min(511), s.len());
    s
}

fn open(name: &str) -> *mut ScreenlabCorpus {
    let u = cpath(&fixture(&format!("{name}/utterances.jsonl")));
    let f = cpath(&fixture(&format!("{name}/films.jsonl")));
    let mut c = ptr::null_mut();
    let st = unsafe { screenlab_corpus_open(u.as_ptr(), f.as_ptr(), &mut c) };
    assert_eq!(st, ScreenlabStatus::Ok, "{}", last_error());
    assert!(!c.is_null());
    c
}

#[test]
fn labels_and_version() {
    assert_eq!(screenlab_n_labels(), 7);
    let names: Vec<String> = (0..7)
        .map(|i| unsafe { CStr::from_ptr(screenlab_label_name(i)) }.to_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"]);
    assert!(screenlab_label_name(7).is_null());
    let v = unsafe { CStr::from_ptr(screenlab_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn entropy_of_flat_dirichlet() {
    let alpha = [1.0; 7];
    let mut h = 0.0;
    let st = unsafe { screenlab_dirichlet_entropy(alpha.as_ptr(), 7, &mut h) };
    assert_eq!(st, ScreenlabStatus::Ok);
    assert!((h + 720f64.ln()).abs() < 1e-9);
}

#[test]
fn entropy_rejects_bad_input_and_sets_message() {
    let alpha = [1.0, -1.0, 1.0];
    let mut h = 0.0;
    let st = unsafe { screenlab_dirichlet_entropy(alpha.as_ptr(), 3, &mut h) };
    assert_eq!(st, ScreenlabStatus::InvalidData);
    assert!(!last_error().is_empty());

    let st = unsafe { screenlab_dirichlet_entropy(ptr::null(), 3, &mut h) };
    assert_eq!(st, ScreenlabStatus::NullPointer);
    assert!(last_error().contains("alpha"));

    let st = unsafe { screenlab_dirichlet_entropy([1.0, 1.0].as_ptr(), 2, ptr::null_mut()) };
    assert_eq!(st, ScreenlabStatus::NullPointer);
}

#[test]
fn success_clears_last_error() {
    let mut h = 0.0;
    unsafe { screenlab_dirichlet_entropy(ptr::null(), 3, &mut h) };
    assert!(!last_error().is_empty());
    let st = unsafe { screenlab_dirichlet_entropy([2.0, 3.0].as_ptr(), 2, &mut h) };
    assert_eq!(st, ScreenlabStatus::Ok);
    let mut buf = [1 as std::ffi::c_char; 4];
    assert_eq!(unsafe { screenlab_last_error_message(buf.as_mut_ptr(), 4) }, 0);
    assert_eq!(buf[0], 0);
}

#[test]
fn error_message_truncates_to_buffer() {
    let mut h = 0.0;
    unsafe { screenlab_dirichlet_entropy(ptr::null(), 3, &mut h) };
    let full = unsafe { screenlab_last_error_message(ptr::null_mut(), 0) };
    assert!(full > 5);
    let mut buf = [0 as std::ffi::c_char; 5];
    let n = unsafe { screenlab_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, full);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes().len(), 4);
}

#[test]
fn mle_recovers_symmetric_parameters() {
    // deterministic near-symmetric samples around the uniform mean
    let k = 3;
    let mut samples = Vec::new();
    for i in 0..300 {
        let t = (i as f64 * 0.618_033_988_75).fract();
        let a = 0.2 + 0.4 * t;
        let b = 0.2 + 0.4 * (1.0 - t);
        samples.extend([a / 1.8 * 1.2, b / 1.8 * 1.2, 1.0 - (a + b) / 1.8 * 1.2]);
    }
    let mut alpha = [0.0; 3];
    let mut converged = false;
    let st = unsafe { screenlab_dirichlet_mle(samples.as_ptr(), 300, k, 1e-6, alpha.as_mut_ptr(), &mut converged) };
    assert_eq!(st, ScreenlabStatus::Ok, "{}", last_error());
    assert!(converged);
    assert!(alpha.iter().all(|a| a.is_finite() && *a > 0.0));
    let a0: f64 = alpha.iter().sum();
    let mean: Vec<f64> = alpha.iter().map(|a| a / a0).collect();
    let emp: Vec<f64> = (0..k).map(|j| samples.iter().skip(j).step_by(k).sum::<f64>() / 300.0).collect();
    for (m, e) in mean.iter().zip(&emp) {
        assert!((m - e).abs() < 0.02, "{mean:?} vs {emp:?}");
    }

    let st = unsafe { screenlab_dirichlet_mle(samples.as_ptr(), 300, 1, 1e-6, alpha.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, ScreenlabStatus::InvalidArgument);
}

#[test]
fn leiden_splits_two_cliques() {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for base in [0u32, 4] {
        for i in 0..4 {
            for j in i + 1..4 {
                src.push(base + i);
                dst.push(base + j);
            }
        }
    }
    src.push(3);
    dst.push(4);
    let w = vec![1.0; src.len()];
    let mut membership = [u32::MAX; 8];
    let mut q = 0.0;
    let mut k = 0usize;
    let st = unsafe {
        screenlab_leiden(
            8,
            src.as_ptr(),
            dst.as_ptr(),
            w.as_ptr(),
            src.len(),
            1.0,
            13,
            membership.as_mut_ptr(),
            &mut q,
            &mut k,
        )
    };
    assert_eq!(st, ScreenlabStatus::Ok, "{}", last_error());
    assert_eq!(k, 2);
    assert!(membership[..4].iter().all(|&c| c == membership[0]));
    assert!(membership[4..].iter().all(|&c| c == membership[4]));
    assert_ne!(membership[0], membership[4]);
    // two 4-cliques plus a bridge: Q = 2 * (6/13 - (13/26)^2)
    assert!((q - 2.0 * (6.0 / 13.0 - 0.25)).abs() < 1e-12);
}

#[test]
fn leiden_rejects_out_of_range_node() {
    let (s, d, w) = ([0u32], [5u32], [1.0]);
    let mut m = [0u32; 2];
    let st = unsafe {
        screenlab_leiden(2, s.as_ptr(), d.as_ptr(), w.as_ptr(), 1, 1.0, 1, m.as_mut_ptr(), ptr::null_mut(), ptr::null_mut())
    };
    assert_eq!(st, ScreenlabStatus::InvalidArgument);
    let st = unsafe {
        screenlab_leiden(0, s.as_ptr(), d.as_ptr(), w.as_ptr(), 0, 1.0, 1, m.as_mut_ptr(), ptr::null_mut(), ptr::null_mut())
    };
    assert_eq!(st, ScreenlabStatus::InvalidArgument);
}

#[test]
fn fixed_effects_noise_free() {
    let mut group = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for g in 0..5u32 {
        for t in 0..6 {
            group.push(g);
            let xv = t as f64 - 2.5 + g as f64 * 0.1;
            x.push(xv);
            y.push(10.0 * g as f64 - 0.75 * xv);
        }
    }
    let mut r = ScreenlabRegression::default();
    let st = unsafe { screenlab_fixed_effects(group.as_ptr(), x.as_ptr(), y.as_ptr(), group.len(), &mut r) };
    assert_eq!(st, ScreenlabStatus::Ok, "{}", last_error());
    assert!((r.beta + 0.75).abs() < 1e-12);
    assert_eq!((r.n_obs, r.n_groups, r.df1, r.df2), (30, 5, 1, 24));
    assert!((r.r2 - 1.0).abs() < 1e-12);
}

#[test]
fn fixed_effects_degenerate_design() {
    let group = [0u32, 0, 1, 1, 2];
    let x = [1.0, 1.0, 2.0, 2.0, 3.0];
    let y = [0.0, 1.0, 0.0, 1.0, 0.5];
    let mut r = ScreenlabRegression::default();
    let st = unsafe { screenlab_fixed_effects(group.as_ptr(), x.as_ptr(), y.as_ptr(), 5, &mut r) };
    assert_eq!(st, ScreenlabStatus::Degenerate);
}

#[test]
fn corpus_handle_counts_and_trim() {
    let c = open("hand");
    unsafe {
        assert_eq!(screenlab_corpus_n_utterances(c), 10);
        assert_eq!(screenlab_corpus_n_films(c), 2);
        assert_eq!(screenlab_corpus_trim_credits(c), ScreenlabStatus::Ok);
        assert_eq!(screenlab_corpus_n_utterances(c), 9);
        screenlab_corpus_free(c);
        screenlab_corpus_free(ptr::null_mut());
        assert_eq!(screenlab_corpus_n_utterances(ptr::null()), 0);
    }
}

#[test]
fn corpus_open_reports_validation_errors() {
    let u = cpath(&fixture("invalid/utterances.jsonl"));
    let f = cpath(&fixture("invalid/films.jsonl"));
    let mut c = 1usize as *mut ScreenlabCorpus;
    let st = unsafe { screenlab_corpus_open(u.as_ptr(), f.as_ptr(), &mut c) };
    assert_eq!(st, ScreenlabStatus::InvalidData);
    assert!(c.is_null());
    let msg = last_error();
    assert!(msg.contains("utterances.jsonl:2:"), "{msg}");

    let missing = cpath(Path::new("/nonexistent/utterances.jsonl"));
    let st = unsafe { screenlab_corpus_open(missing.as_ptr(), f.as_ptr(), &mut c) };
    assert_eq!(st, ScreenlabStatus::Io);
}

#[test]
fn trajectory_matches_library() {
    let c = open("corpus");
    let n_bins = 20;
    let (mut p, mut lo, mut hi, mut n) = (vec![0.0; n_bins], vec![0.0; n_bins], vec![0.0; n_bins], vec![0usize; n_bins]);
    let st = unsafe {
        screenlab_trajectory(c, -1, 0, n_bins, 100, 13, p.as_mut_ptr(), lo.as_mut_ptr(), hi.as_mut_ptr(), n.as_mut_ptr())
    };
    assert_eq!(st, ScreenlabStatus::Ok, "{}", last_error());

    let corpus = screenlab::corpus::parse_corpus(
        &fixture("corpus/utterances.jsonl"),
        &fixture("corpus/films.jsonl"),
    )
    .unwrap();
    let boot = screenlab::emotion_stats::BootstrapConfig {
        n_boot: 100,
        level: 0.95,
        seed: 13,
    };
    let rep = screenlab::narrative::trajectory(
        &corpus,
        screenlab::narrative::Measure::Emotionality,
        screenlab::corpus::EmotionalityMode::Prob,
        n_bins,
        &boot,
    )
    .unwrap();
    for (i, b) in rep.series.iter().enumerate() {
        assert_eq!(p[i].to_bits(), b.point.unwrap().to_bits());
        assert_eq!(lo[i].to_bits(), b.ci.as_ref().unwrap().lo.to_bits());
        assert_eq!(hi[i].to_bits(), b.ci.as_ref().unwrap().hi.to_bits());
        assert_eq!(n[i], b.n_utts);
    }

    let st = unsafe {
        screenlab_trajectory(c, 4, 0, n_bins, 10, 13, p.as_mut_ptr(), lo.as_mut_ptr(), hi.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(st, ScreenlabStatus::InvalidArgument);
    let st = unsafe {
        screenlab_trajectory(c, 0, 2, n_bins, 10, 13, p.as_mut_ptr(), lo.as_mut_ptr(), hi.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(st, ScreenlabStatus::InvalidArgument);
    let st = unsafe {
        screenlab_trajectory(c, 0, 0, n_bins, 10, 13, p.as_mut_ptr(), lo.as_mut_ptr(), hi.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(st, ScreenlabStatus::Ok);
    unsafe { screenlab_corpus_free(c) };
}

#[test]
fn head_forward_matches_reference() {
    let path = cpath(&fixture("head/head.bin"));
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { screenlab_head_load(path.as_ptr(), &mut h) }, ScreenlabStatus::Ok);
    let (mut layers, mut dim) = (0usize, 0usize);
    assert_eq!(unsafe { screenlab_head_dims(h, &mut layers, &mut dim) }, ScreenlabStatus::Ok);
    assert_eq!((layers, dim), (25, 768));

    let expected: Vec<Vec<f64>> = {
        let text = std::fs::read_to_string(fixture("head/expected.json")).unwrap();
        let mut out = Vec::new();
        // each entry lists seven probabilities after "emotion_probs"
        for chunk in text.split("\"emotion_probs\"").skip(1) {
            let body = &chunk[chunk.find('[').unwrap() + 1..chunk.find(']').unwrap()];
            out.push(body.split(',').map(|s| s.trim().parse::<f64>().unwrap()).collect());
        }
        out
    };
    assert_eq!(expected.len(), 3);
    for (i, want) in expected.iter().enumerate() {
        let bytes = std::fs::read(fixture(&format!("head/utt{i}.f32"))).unwrap();
        let x: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let mut probs = [0.0; 7];
        let st = unsafe { screenlab_head_forward(h, x.as_ptr(), x.len(), probs.as_mut_ptr(), 7) };
        assert_eq!(st, ScreenlabStatus::Ok, "{}", last_error());
        for (g, w) in probs.iter().zip(want) {
            assert!((g - w).abs() < 1e-4);
        }
        let st = unsafe { screenlab_head_forward(h, x.as_ptr(), x.len(), probs.as_mut_ptr(), 6) };
        assert_eq!(st, ScreenlabStatus::BufferTooSmall);
        let st = unsafe { screenlab_head_forward(h, x.as_ptr(), x.len() - 1, probs.as_mut_ptr(), 7) };
        assert_eq!(st, ScreenlabStatus::InvalidArgument);
    }
    unsafe { screenlab_head_free(h) };

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"not a head").unwrap();
    let bad_c = cpath(&bad);
    let mut h2 = ptr::null_mut();
    assert_eq!(unsafe { screenlab_head_load(bad_c.as_ptr(), &mut h2) }, ScreenlabStatus::InvalidData);
    assert!(h2.is_null());
}
