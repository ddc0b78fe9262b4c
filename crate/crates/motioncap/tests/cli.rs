use std::path::Path;
use std::process::{Command, Output};

fn motioncap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motioncap"))
        .args(args)
        .env("THREADS", "1")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json_line(bytes: &[u8]) -> serde_json::Value {
    let s = String::from_utf8_lossy(bytes);
    let line = s.lines().last().expect("no output");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line:?}: {e}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = motioncap(&["synth", "--out", "x", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(motioncap(&[]).status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let o = motioncap(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gradcheck"));
}

#[test]
fn runtime_failure_prints_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = motioncap(&["train", "--data", p(&dir.path().join("missing")), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    let v = json_line(&o.stderr);
    assert_eq!(v["status"], "error");
    assert_eq!(v["command"], "train");
}

#[test]
fn bad_override_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = motioncap(&["synth", "--out", p(dir.path()), "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json_line(&o.stderr)["status"], "error");
}

#[test]
fn gradcheck_passes_and_fails_on_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = motioncap(&["gradcheck", "--hidden", "4", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json_line(&o.stdout)["status"], "ok");
    assert!(dir.path().join("gradcheck.json").exists());
    assert!(dir.path().join("run.json").exists());

    let o = motioncap(&["gradcheck", "--hidden", "4", "--tol", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json_line(&o.stderr)["command"], "gradcheck");
}

#[test]
fn synth_train_decode_eval_analyze() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let run = root.path().join("run");
    let o = motioncap(&["synth", "--n", "20", "--seed", "3", "--out", p(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["index.json", "annotations.json", "actions.json", "synth_config.json", "run.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let tiny = [
        "--set",
        "epochs=2",
        "--set",
        "batch_size=4",
        "--set",
        "model.h1=4",
        "--set",
        "model.h2=4",
        "--set",
        "model.d_emb=4",
        "--set",
        "model.h_dec=6",
        "--set",
        "model.attn_dim=4",
        "--set",
        "model.ctx_dim=4",
    ];
    let mut args = vec!["train", "--data", p(&data), "--out", p(&run), "--seed", "1"];
    args.extend(tiny);
    let o = motioncap(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run.join("checkpoint").join("params.bin").exists());
    assert!(run.join("train_log.csv").exists());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config"]["epochs"], 2);
    assert!(manifest["inputs"].as_object().unwrap().len() > 20);

    let ckpt = run.join("checkpoint");
    let decoded = root.path().join("decoded");
    let o = motioncap(&[
        "decode",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--beam",
        "2",
        "--out",
        p(&decoded),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(decoded.join("decodes.jsonl").exists());

    let eval = root.path().join("eval");
    let o = motioncap(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--split",
        "val",
        "--out",
        p(&eval),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(eval.join("eval.json").exists() && eval.join("eval.csv").exists());

    let analysis = root.path().join("analysis");
    let o = motioncap(&[
        "analyze",
        "--dump",
        p(&decoded),
        "--out",
        p(&analysis),
        "--annotations",
        p(&data.join("annotations.json")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "beta_density.csv",
        "beta_summary.csv",
        "part_histogram.csv",
        "localization.csv",
        "fine_grained.json",
        "gold_scores.json",
        "run.json",
    ] {
        assert!(analysis.join(f).exists(), "{f}");
    }

    let o = motioncap(&[
        "decode",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--beam",
        "0",
        "--out",
        p(&decoded),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    assert_eq!(motioncap(&["synth", "--n", "12", "--out", p(&data)]).status.code(), Some(0));
    let out = root.path().join("sweep");
    let o = motioncap(&[
        "sweep",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--grid",
        "0,0;2,3",
        "--seeds",
        "0",
        "--set",
        "epochs=1",
        "--set",
        "model.h1=4",
        "--set",
        "model.h2=4",
        "--set",
        "model.d_emb=4",
        "--set",
        "model.h_dec=4",
        "--set",
        "model.attn_dim=4",
        "--set",
        "model.ctx_dim=4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("spat0_adapt0_seed0").join("checkpoint").exists());
    assert!(out.join("spat2_adapt3_seed0").join("decodes").join("decodes.jsonl").exists());
}
