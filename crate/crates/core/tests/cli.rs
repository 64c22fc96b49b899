use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn screenlab(args: &[&str]) -> Output {
    screenlab_env(args, &[])
}

fn screenlab_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_screenlab"));
    cmd.args(args).env_remove("SCREENLAB_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn corpus_args(name: &str) -> Vec<String> {
    vec![
        "--utterances".into(),
        fixture(&format!("{name}/utterances.jsonl")).display().to_string(),
        "--films".into(),
        fixture(&format!("{name}/films.jsonl")).display().to_string(),
    ]
}

fn run(cmd: &str, corpus: Option<&str>, out: &Path, extra: &[&str]) -> Output {
    run_env(cmd, corpus, out, extra, &[])
}

fn run_env(cmd: &str, corpus: Option<&str>, out: &Path, extra: &[&str], env: &[(&str, &str)]) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    if let Some(c) = corpus {
        args.extend(corpus_args(c));
    }
    args.push("--out".into());
    args.push(out.display().to_string());
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    screenlab_env(&refs, env)
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = screenlab(&["ingest", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = screenlab(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_corpus_reports_every_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("ingest", Some("invalid"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for (line, kind) in [(2, "validation"), (3, "referential"), (4, "validation"), (5, "parse")] {
        let needle = format!("utterances.jsonl:{line}: {kind} error");
        assert!(err.contains(&needle), "missing `{needle}` in:\n{err}");
    }
    assert!(!err.contains("utterances.jsonl:1:"));
}

#[test]
fn ingest_dedups_and_trims_credits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trimmed");
    assert_ok(&run("ingest", Some("hand"), &out, &[]));
    let summary = read_json(&out.join("ingest_summary.json"));
    assert_eq!(summary["n_utterances"], 9);
    assert_eq!(summary["n_films"], 2);
    assert_eq!(summary["genres"]["drama"], 2);

    let kept = dir.path().join("kept");
    assert_ok(&run("ingest", Some("hand"), &kept, &["--keep-credits"]));
    assert_eq!(read_json(&kept.join("ingest_summary.json"))["n_utterances"], 10);

    // re-ingesting the normalized output is a fixed point
    let text = std::fs::read_to_string(kept.join("utterances.jsonl")).unwrap();
    let again = dir.path().join("again");
    let o = screenlab(&[
        "ingest",
        "--utterances",
        kept.join("utterances.jsonl").to_str().unwrap(),
        "--films",
        kept.join("films.jsonl").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
        "--keep-credits",
    ]);
    assert_ok(&o);
    assert_eq!(std::fs::read_to_string(again.join("utterances.jsonl")).unwrap(), text);

    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let sum: f64 = v["emotion_probs"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ingest_groups_conversations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_ok(&run("ingest", Some("hand"), &out, &["--conversation-gap", "3"]));
    assert_eq!(read_json(&out.join("ingest_summary.json"))["n_conversations"], 8);
    let o = run("ingest", Some("hand"), &dir.path().join("bad"), &["--conversation-gap", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_ok(&run("ingest", Some("hand"), &out, &[]));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["seeds"]["seed"], 13);
    assert_eq!(m["config"]["trim_credits"], "true");
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    for i in inputs {
        assert_eq!(i["sha256"].as_str().unwrap().len(), 64);
    }
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in &outputs {
        assert!(out.join(f).exists(), "{f} listed but missing");
    }
    assert!(outputs.contains(&"utterances.jsonl"));
}

#[test]
fn trajectory_has_one_row_per_bin() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    assert_ok(&run("trajectory", Some("corpus"), &out, &["--n-boot", "50"]));
    let (header, rows) = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(header[0], "bin_index");
    assert_eq!(rows.len(), 20);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        let point: f64 = r[3].parse().unwrap();
        let lo: f64 = r[4].parse().unwrap();
        let hi: f64 = r[5].parse().unwrap();
        assert!(lo <= hi && (0.0..=1.0).contains(&point));
    }
    let dat = std::fs::read_to_string(out.join("trajectory.dat")).unwrap();
    assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), 20);
}

#[test]
fn trajectory_rejects_neutral_as_a_measure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("trajectory", Some("corpus"), &dir.path().join("t"), &["--measure", "emotion:neutral"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(
        "trajectory",
        Some("corpus"),
        &dir.path().join("a"),
        &["--measure", "emotion:anger", "--n-boot", "20"],
    );
    assert_ok(&o);
}

#[test]
fn flag_overrides_config_file_overrides_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("screenlab.conf");
    std::fs::write(&cfg, "# trajectory settings\nbins = 10\nn_boot = 20\n").unwrap();
    let cfg_s = cfg.to_str().unwrap();

    let from_file = dir.path().join("file");
    assert_ok(&run("trajectory", Some("corpus"), &from_file, &["--config", cfg_s]));
    assert_eq!(csv_rows(&from_file.join("trajectory.csv")).1.len(), 10);
    let m = read_json(&from_file.join("manifest.json"));
    assert_eq!(m["config"]["bins"], "10");

    let from_flag = dir.path().join("flag");
    assert_ok(&run("trajectory", Some("corpus"), &from_flag, &["--config", cfg_s, "--bins", "5"]));
    assert_eq!(csv_rows(&from_flag.join("trajectory.csv")).1.len(), 5);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "binz = 10\n").unwrap();
    let o = run(
        "trajectory",
        Some("corpus"),
        &dir.path().join("t"),
        &["--config", cfg.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_resolution_order() {
    let dir = tempfile::tempdir().unwrap();
    let seed_of = |out: &Path| read_json(&out.join("manifest.json"))["seeds"]["seed"].as_u64().unwrap();
    let env = [("SCREENLAB_SEED", "99")];

    let a = dir.path().join("env");
    assert_ok(&run_env("ingest", Some("hand"), &a, &[], &env));
    assert_eq!(seed_of(&a), 99);

    let cfg = dir.path().join("seed.conf");
    std::fs::write(&cfg, "seed = 7\n").unwrap();
    let b = dir.path().join("cfg");
    assert_ok(&run_env("ingest", Some("hand"), &b, &["--config", cfg.to_str().unwrap()], &env));
    assert_eq!(seed_of(&b), 7);

    let c = dir.path().join("flag");
    assert_ok(&run_env(
        "ingest",
        Some("hand"),
        &c,
        &["--config", cfg.to_str().unwrap(), "--seed", "5"],
        &env,
    ));
    assert_eq!(seed_of(&c), 5);

    let d = dir.path().join("bad");
    let o = run_env("ingest", Some("hand"), &d, &[], &[("SCREENLAB_SEED", "abc")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn phrase_range_is_sorted_by_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert_ok(&run(
        "range",
        Some("corpus"),
        &out,
        &["--by", "phrase", "--min-count", "5", "--n-boot", "30"],
    ));
    let (header, rows) = csv_rows(&out.join("range_report.csv"));
    assert_eq!(header[2], "entropy");
    assert!(!rows.is_empty());
    let h: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(h.windows(2).all(|w| w[0] <= w[1]));
    for r in &rows {
        let (lo, hi): (f64, f64) = (r[11].parse().unwrap(), r[12].parse().unwrap());
        assert!(lo <= hi);
    }
}

#[test]
fn genre_range_skips_small_genres() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    assert_ok(&run("range", Some("corpus"), &out, &["--by", "genre", "--n-boot", "20"]));
    assert!(csv_rows(&out.join("range_report.csv")).1.is_empty());
    let (_, skipped) = csv_rows(&out.join("range_skipped.csv"));
    let names: Vec<&str> = skipped.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["comedy", "drama", "thriller"]);

    let out = dir.path().join("g5");
    assert_ok(&run(
        "range",
        Some("corpus"),
        &out,
        &["--by", "genre", "--n-boot", "20", "--min-films", "5"],
    ));
    assert_eq!(csv_rows(&out.join("range_report.csv")).1.len(), 3);
}

#[test]
fn cluster_then_regress_on_saved_groups() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    assert_ok(&run("cluster", Some("corpus"), &c, &["--min-count", "5"]));
    let summary = read_json(&c.join("cluster_summary.json"));
    assert!(summary["n_groups"].as_u64().unwrap() > 0);

    let groups = c.join("phrase_groups.jsonl");
    let r = dir.path().join("r");
    assert_ok(&run(
        "regress",
        Some("corpus"),
        &r,
        &["--groups", groups.to_str().unwrap(), "--min-count", "5"],
    ));
    let rep = read_json(&r.join("fe_regression.json"));
    let n = rep["n_obs"].as_u64().unwrap();
    let g = rep["n_groups"].as_u64().unwrap();
    assert_eq!(rep["df2"].as_u64().unwrap(), n - g - 1);
    assert_eq!(rep["df1"], 1);
}

#[test]
fn diachronic_reports_each_year() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_ok(&run("diachronic", Some("corpus"), &out, &["--n-boot", "30"]));
    let (_, rows) = csv_rows(&out.join("diachronic.csv"));
    let years: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(years, ["2000", "2001", "2002", "2003"]);
}

#[test]
fn eval_from_label_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.csv");
    let gold = ["joy", "joy", "joy", "joy", "anger", "anger", "anger", "sadness", "sadness", "neutral"];
    let pred = ["joy", "joy", "joy", "anger", "anger", "anger", "joy", "sadness", "fear", "neutral"];
    let mut text = String::from("gold,pred\n");
    for (g, p) in gold.iter().zip(pred) {
        text.push_str(&format!("{g},{p}\n"));
    }
    std::fs::write(&labels, text).unwrap();
    let out = dir.path().join("e");
    assert_ok(&screenlab(&[
        "eval",
        "--labels",
        labels.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--n-boot",
        "50",
    ]));
    let rep = read_json(&out.join("eval_report.json"));
    assert_eq!(rep["n"], 10);
    assert!((rep["accuracy"].as_f64().unwrap() - 0.7).abs() < 1e-12);
    assert!((rep["weighted_f1"].as_f64().unwrap() - 11.0 / 15.0).abs() < 1e-12);
    let (header, rows) = csv_rows(&out.join("confusion.csv"));
    assert_eq!(header.len(), 8);
    let total: usize = rows.iter().flat_map(|r| r[1..].iter()).map(|c| c.parse::<usize>().unwrap()).sum();
    assert_eq!(total, 10);
}

#[test]
fn eval_agreement_from_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.csv");
    let mut text = String::from("unit,coder,label\n");
    for u in 0..6 {
        let label = ["joy", "anger", "fear"][u % 3];
        for c in ["a", "b", "c"] {
            text.push_str(&format!("u{u},{c},{label}\n"));
        }
    }
    std::fs::write(&ann, text).unwrap();
    let out = dir.path().join("e");
    assert_ok(&screenlab(&[
        "eval",
        "--annotations",
        ann.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    let a = read_json(&out.join("agreement.json"));
    assert_eq!(a["n_units"], 6);
    assert!((a["krippendorff_alpha"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((a["fleiss_kappa"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn eval_without_inputs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = screenlab(&["eval", "--out", dir.path().join("e").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synthgen_output_passes_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s");
    assert_ok(&screenlab(&[
        "synthgen",
        "--preset",
        "anger-peak",
        "--n-films",
        "4",
        "--utterances-per-film",
        "30",
        "--out",
        s.to_str().unwrap(),
        "--seed",
        "3",
    ]));
    let i = dir.path().join("i");
    assert_ok(&screenlab(&[
        "ingest",
        "--utterances",
        s.join("utterances.jsonl").to_str().unwrap(),
        "--films",
        s.join("films.jsonl").to_str().unwrap(),
        "--out",
        i.to_str().unwrap(),
        "--keep-credits",
    ]));
    assert_eq!(read_json(&i.join("ingest_summary.json"))["n_utterances"], 120);

    let again = dir.path().join("s2");
    assert_ok(&screenlab(&[
        "synthgen",
        "--preset",
        "anger-peak",
        "--n-films",
        "4",
        "--utterances-per-film",
        "30",
        "--out",
        again.to_str().unwrap(),
        "--seed",
        "3",
    ]));
    for f in ["utterances.jsonl", "films.jsonl"] {
        assert_eq!(std::fs::read(s.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }

    let o = screenlab(&["synthgen", "--preset", "nope", "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
