use std::path::{Path, PathBuf};
use std::process::Command;

use screenlab::corpus::parse_corpus;
use screenlab::evalkit::{ser_head_forward, SerHeadParams};
use serde_json::Value;

const TOL: f64 = 1e-4;

fn head_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/head")
}

fn expected() -> Vec<(String, Vec<f64>)> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(head_dir().join("expected.json")).unwrap()).unwrap();
    v.as_array()
        .unwrap()
        .iter()
        .map(|e| {
            let probs = e["emotion_probs"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
            (e["utt_id"].as_str().unwrap().to_string(), probs)
        })
        .collect()
}

fn assert_close(got: &[f64], want: &[f64], what: &str) {
    assert_eq!(got.len(), want.len());
    for (k, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= TOL, "{what}[{k}]: {g} vs {w}");
    }
}

#[test]
fn weight_file_header() {
    let p = SerHeadParams::load(&head_dir().join("head.bin")).unwrap();
    assert_eq!(p.header.n_layers, 25);
    assert_eq!(p.header.input_dim, 768);
    assert_eq!(p.header.hidden, 8);
    assert_eq!(p.header.labels.len(), 7);
}

#[test]
fn library_forward_matches_reference() {
    let dir = head_dir();
    let params = SerHeadParams::load(&dir.join("head.bin")).unwrap();
    let corpus = parse_corpus(&dir.join("utterances.jsonl"), &dir.join("films.jsonl")).unwrap();
    let want = expected();
    assert_eq!(corpus.utterances.len(), want.len());
    for (u, (id, probs)) in corpus.utterances.iter().zip(&want) {
        assert_eq!(&u.utt_id, id);
        let layers = u.load_layer_embeddings().unwrap().expect("sidecar present");
        let dist = ser_head_forward(&layers, &params).unwrap();
        assert_close(dist.probs(), probs, id);
    }
}

#[test]
fn head_predict_command_matches_reference() {
    let dir = head_dir();
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_screenlab"))
        .arg("head-predict")
        .arg("--utterances")
        .arg(dir.join("utterances.jsonl"))
        .arg("--films")
        .arg(dir.join("films.jsonl"))
        .arg("--weights")
        .arg(dir.join("head.bin"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.path().join("predictions.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let want = expected();
    assert_eq!(rows.len(), want.len());
    for (row, (id, probs)) in rows.iter().zip(&want) {
        assert_eq!(row["utt_id"].as_str().unwrap(), id);
        let got: Vec<f64> = row["emotion_probs"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_close(&got, probs, id);
    }
}

#[test]
fn truncated_weight_file_is_rejected() {
    let bytes = std::fs::read(head_dir().join("head.bin")).unwrap();
    let short = &bytes[..bytes.len() - 4];
    assert!(SerHeadParams::read(short).is_err());
    let mut long = bytes.clone();
    long.extend_from_slice(&[0, 0, 0, 0]);
    assert!(SerHeadParams::read(long.as_slice()).is_err());
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(SerHeadParams::read(bad_magic.as_slice()).is_err());
}
