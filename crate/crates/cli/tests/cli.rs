use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gmvpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmvpg"))
        .args(args)
        .env("GMVPG_THREADS", "1")
        .output()
        .expect("spawn gmvpg")
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {text}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(gmvpg(&["--help"]).status.code(), Some(0));
    assert_eq!(gmvpg(&["cluster", "--help"]).status.code(), Some(0));
    assert_eq!(gmvpg(&["bogus"]).status.code(), Some(2));
    assert_eq!(gmvpg(&["eval", "--scores", "x"]).status.code(), Some(2));
}

#[test]
fn data_error_is_one_json_line() {
    let out = gmvpg(&[
        "score",
        "--trials",
        "/nonexistent/t.txt",
        "--enroll",
        "e.emb",
        "--out",
        "s.txt",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v = error_line(&out);
    assert_eq!(v["command"], "score");
    assert!(v["error"].as_str().unwrap().contains("/nonexistent/t.txt"));
}

#[test]
fn out_of_range_k_final_is_rejected() {
    let out = gmvpg(&[
        "cluster",
        "--views",
        "a.emb",
        "--k-final",
        "5",
        "--out",
        "l.tsv",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["error"]
        .as_str()
        .unwrap()
        .contains("k_final"));
}

fn write_manifest(dir: &Path, stages: serde_json::Value) -> String {
    let p = dir.join("m.json");
    let m = serde_json::json!({"version": "1", "seed": 3, "stages": stages});
    fs::write(&p, serde_json::to_vec_pretty(&m).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn manifest_check_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(
        dir.path(),
        serde_json::json!([
            {"name": "c", "command": "cluster",
             "params": {"views": ["missing.emb"], "k_final": 5, "out": "l.tsv"}}
        ]),
    );
    let out = gmvpg(&["pipeline", "--manifest", &m, "--check"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_line(&out)["error"].as_str().unwrap().to_string();
    assert!(err.contains("missing.emb"), "{err}");
    assert!(err.contains("k_final"), "{err}");
}

#[test]
fn small_pipeline_writes_reports_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(
        dir.path(),
        serde_json::json!([
            {"name": "synth", "command": "synth",
             "params": {"speakers": 30, "utts": 20, "dim": 32, "views": 2, "out_dir": "corpus"}},
            {"name": "cluster", "command": "cluster",
             "params": {"views": ["corpus/view0.emb", "corpus/view1.emb"], "out": "labels.tsv"}},
            {"name": "trials", "command": "gen-trials",
             "params": {"labels": "labels.tsv", "truth": "corpus/truth.tsv", "total": 2000,
                        "speakers": 20, "segments": 10, "out": "trials.txt"}},
            {"name": "score", "command": "score",
             "params": {"trials": "trials.txt", "enroll": "corpus/view0.emb", "out": "scores.txt"}},
            {"name": "eval", "command": "eval",
             "params": {"scores": "scores.txt", "trials": "trials.txt", "out": "eval.json"}}
        ]),
    );
    let check = gmvpg(&["pipeline", "--manifest", &m, "--check"]);
    assert_eq!(
        check.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&check.stderr)
    );
    assert!(!dir.path().join("labels.tsv").exists());

    let out = gmvpg(&["pipeline", "--manifest", &m]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let d = dir.path();
    for report in [
        "corpus/synth.report.json",
        "labels.tsv.report.json",
        "trials.txt.report.json",
        "scores.txt.report.json",
        "eval.json.report.json",
        "pipeline.report.json",
    ] {
        assert!(d.join(report).exists(), "{report} missing");
    }
    let eval: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("eval.json")).unwrap()).unwrap();
    let eer = eval["eer"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&eer));
    assert!(eval["min_dcf"].as_f64().is_some());
    assert_eq!(eval["targets"], 1000);

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("scores.txt.report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "score");
    assert_eq!(report["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("c");
    let c = corpus.to_str().unwrap();
    let status = gmvpg(&[
        "synth",
        "--speakers",
        "30",
        "--utts",
        "15",
        "--dim",
        "32",
        "--out-dir",
        c,
    ])
    .status;
    assert!(status.success());
    let run = |threads: &str, out: &str| {
        let v0 = corpus.join("view0.emb");
        let v1 = corpus.join("view1.emb");
        let o = d.join(out);
        let st = Command::new(env!("CARGO_BIN_EXE_gmvpg"))
            .args([
                "cluster",
                "--views",
                v0.to_str().unwrap(),
                v1.to_str().unwrap(),
            ])
            .args(["--out", o.to_str().unwrap()])
            .env("GMVPG_THREADS", threads)
            .status()
            .unwrap();
        assert!(st.success());
        fs::read(o).unwrap()
    };
    assert_eq!(run("1", "a.tsv"), run("4", "b.tsv"));
}
