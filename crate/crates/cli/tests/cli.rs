use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ppmxai"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["run"]).status.code(), Some(1));
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--matrix",
        p(&dir.path().join("absent.csv")),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"datasets": [], "combos": [], "explainers": []}"#).unwrap();
    let out = run(&["run", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn staged_pipeline_produces_scores() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = configs().join("gen_spec.json");
    ok(run(&[
        "synth",
        "--config",
        p(&gen),
        "--seed",
        "3",
        "--out",
        p(&d.join("log")),
    ]));
    for f in ["log.csv", "log.schema.json", "metadata.json"] {
        assert!(d.join("log").join(f).exists(), "{f}");
    }
    ok(run(&[
        "encode",
        "--log",
        p(&d.join("log/log.csv")),
        "--bucketing",
        "prefix_length",
        "--encoding",
        "index_based",
        "--prefix-max",
        "3",
        "--out",
        p(&d.join("enc")),
    ]));
    let matrix = d.join("enc/prefix_2.csv");
    assert!(
        matrix.exists(),
        "bucket files: {:?}",
        std::fs::read_dir(d.join("enc")).unwrap().count()
    );
    ok(run(&[
        "train",
        "--matrix",
        p(&matrix),
        "--seed",
        "1",
        "--out",
        p(&d.join("model.json")),
    ]));
    ok(run(&[
        "explain",
        "--model",
        p(&d.join("model.json")),
        "--matrix",
        p(&matrix),
        "--limit",
        "3",
        "--m",
        "3",
        "--workers",
        "2",
        "--out",
        p(&d.join("expl")),
    ]));
    assert_eq!(std::fs::read_dir(d.join("expl")).unwrap().count(), 3);

    ok(run(&[
        "eval-stability",
        "--explanations",
        p(&d.join("expl")),
        "--k",
        "4",
        "--format",
        "json",
        "--out",
        p(&d.join("stab")),
    ]));
    let scores: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("stab/scores.json")).unwrap())
            .unwrap();
    let rows = scores.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let w = r["by_weight"].as_f64().unwrap();
        assert!(w <= 1.0);
    }

    ok(run(&[
        "eval-fidelity",
        "--explanations",
        p(&d.join("expl")),
        "--model",
        p(&d.join("model.json")),
        "--matrix",
        p(&matrix),
        "--k",
        "4",
        "--out",
        p(&d.join("fid")),
    ]));
    let csv = std::fs::read_to_string(d.join("fid/scores.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
}

#[test]
fn run_then_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("synthetic.json");
    let out = dir.path().join("run");
    ok(run(&[
        "run",
        "--config",
        p(&cfg),
        "--workers",
        "3",
        "--out",
        p(&out),
    ]));
    for f in [
        "manifest.json",
        "bundle.json",
        "report.md",
        "instances.csv",
        "timing.csv",
        "fidelity.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let md = ok(run(&[
        "report",
        "--bundle",
        p(&out),
        "--format",
        "markdown",
    ]))
    .stdout;
    assert_eq!(
        String::from_utf8(md).unwrap(),
        std::fs::read_to_string(out.join("report.md")).unwrap()
    );
}

#[test]
fn run_output_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("synthetic.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(run(&[
        "run",
        "--config",
        p(&cfg),
        "--workers",
        "1",
        "--format",
        "json",
        "--out",
        p(&a),
    ]));
    ok(run(&[
        "run",
        "--config",
        p(&cfg),
        "--workers",
        "6",
        "--format",
        "json",
        "--out",
        p(&b),
    ]));
    assert_eq!(
        std::fs::read(a.join("bundle.json")).unwrap(),
        std::fs::read(b.join("bundle.json")).unwrap()
    );
}
