use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speechrep")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("task.json"), r#"{"n_train": 12, "n_test": 4}"#).unwrap();
    ok(&["synth-dataset", "--out", &p(d, "data"), "--task", &p(d, "task.json")]);

    let train_feats = p(d, "data/train.L16.jsonl");
    ok(&["train-kmeans", "--manifest", &train_feats, "--k", "6", "--out", &p(d, "cb.kmb")]);
    let ids = ok(&["quantize", "--codebook", &p(d, "cb.kmb"), "--features", &p(d, "data/train/train-00000.L16.sfm"), "--dedup"]);
    let ids: Vec<u32> = ids.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert!(!ids.is_empty() && ids.iter().all(|&i| i < 6));
    assert!(ids.windows(2).all(|w| w[0] != w[1]));

    let refs: Vec<String> = std::fs::read_to_string(&train_feats)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["ref"].as_str().unwrap().to_string())
        .collect();
    std::fs::write(d.join("text.txt"), refs.join("\n")).unwrap();
    ok(&["train-ngram", "--text", &p(d, "text.txt"), "--order", "2", "--out", &p(d, "lm.arpa")]);
    assert!(std::fs::read_to_string(d.join("lm.arpa")).unwrap().starts_with("\\data\\"));

    let lat = p(d, "data/train/train-00000.ctc.clg");
    let greedy = ok(&["ctc-decode", "--lattice", &lat]);
    assert!(!greedy.trim().is_empty());
    let prompt = ok(&[
        "ctc-decode", "--lattice", &lat, "--beam", "8", "--lm", &p(d, "lm.arpa"), "--lm-weight", "0.5",
        "--word-bonus", "4", "--method", "@5",
    ]);
    assert!(!prompt.trim().is_empty());

    ok(&[
        "train-lm", "--manifest", &train_feats, "--mode", "continuous", "--alpha", "100", "--lr", "1e-2",
        "--seed", "3", "--steps", "5", "--out", &p(d, "lm.tlm"),
    ]);
    let decoded = ok(&["decode", "--checkpoint", &p(d, "lm.tlm"), "--manifest", &p(d, "data/test-clean.L16.jsonl")]);
    assert_eq!(decoded.lines().count(), 4);

    std::fs::write(d.join("ref.txt"), "a b c\nd e\n").unwrap();
    std::fs::write(d.join("hyp.txt"), "a x c\nd e f\n").unwrap();
    let w = ok(&["wer", "--reference", &p(d, "ref.txt"), "--hyp", &p(d, "hyp.txt")]);
    assert!(w.starts_with("WER 0.4000"), "{w}");
}

#[test]
fn run_matrix_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("task.json"), r#"{"n_train": 12, "n_test": 4}"#).unwrap();
    std::fs::write(d.join("empty.json"), "[]").unwrap();
    ok(&["run-matrix", "--specs", &p(d, "empty.json"), "--task", &p(d, "task.json"), "--out", &p(d, "e.tsv")]);
    assert_eq!(std::fs::read_to_string(d.join("e.tsv")).unwrap().lines().count(), 1);

    std::fs::write(
        d.join("specs.json"),
        r#"[{"id": "bad", "rep_type": "disc-unsup", "layer_tag": 16, "k_clusters": 4,
             "artifacts": {"codebook": "/nonexistent.kmb"}},
            {"id": "good", "rep_type": "cont-unsup", "layer_tag": 16, "training": {"steps": 3}}]"#,
    )
    .unwrap();
    let out = run(&["run-matrix", "--specs", &p(d, "specs.json"), "--task", &p(d, "task.json"), "--out", &p(d, "r.tsv")]);
    assert_eq!(out.status.code(), Some(1));
    let tsv = std::fs::read_to_string(d.join("r.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("bad\t") && rows[1].contains("missing artifact"));
    assert!(rows[2].starts_with("good\t") && rows[2].ends_with("\tok"));
}
