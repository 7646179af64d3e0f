use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
[dataset.world]
seed = 3

[dataset.split]
train = 30
val = 6
test = 12

[train]
stage1_epochs = 3
stage2_epochs = 2
"#;

fn sgcrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgcrf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = sgcrf(dir, args);
    assert!(
        out.status.success(),
        "sgcrf {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = sgcrf(dir, args);
    assert!(!out.status.success(), "sgcrf {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Generates data, trains the full pipeline and evaluates, all with
/// relative paths inside `dir`.
fn pipeline(dir: &Path) {
    fs::write(dir.join("config.toml"), SMALL).unwrap();
    ok(dir, &["gen", "--config", "config.toml", "--out", "data"]);
    ok(
        dir,
        &[
            "train", "--config", "config.toml", "--data", "data", "--out", "ckpt.json", "--log", "log.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "eval", "--config", "config.toml", "--checkpoint", "ckpt.json", "--data", "data", "--out", "report.json",
        ],
    );
}

fn read(path: PathBuf) -> Vec<u8> {
    fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json(path: PathBuf) -> Value {
    serde_json::from_slice(&read(path)).unwrap()
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "data/train.json",
        "data/val.json",
        "data/test.json",
        "ckpt.json",
        "log.jsonl",
        "report.json",
    ] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f} differs");
    }

    // the report echoes its provenance
    let report = json(a.path().join("report.json"));
    assert_eq!(report["config"]["checkpoint"], "ckpt.json");
    assert_eq!(report["config"]["stage"], 2);
    assert_eq!(report["config"]["experiment"]["dataset"]["world"]["seed"], 3);

    // eval again on the same inputs
    let dir = a.path();
    ok(
        dir,
        &["eval", "--config", "config.toml", "--checkpoint", "ckpt.json", "--data", "data", "--out", "again.json"],
    );
    assert_eq!(read(dir.join("again.json")), read(dir.join("report.json")));

    // K override yields one entry per K and setup
    ok(
        dir,
        &[
            "eval", "--checkpoint", "ckpt.json", "--data", "data", "--k", "1,50,100", "--out", "k.json",
        ],
    );
    let k = json(dir.join("k.json"));
    for setup in ["SGGen", "SGCls", "RelCls"] {
        let entries = k["recall"][setup].as_object().unwrap();
        assert_eq!(entries.keys().collect::<Vec<_>>(), ["1", "100", "50"]);
    }

    // the first three stage-1 epochs each lower the training loss
    let log = String::from_utf8(read(dir.join("log.jsonl"))).unwrap();
    let losses: Vec<f64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["stage"] == 1)
        .map(|v| v["loss"].as_f64().unwrap())
        .collect();
    assert_eq!(losses.len(), 3);
    assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
}

#[test]
fn different_seeds_give_different_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("config.toml"), SMALL).unwrap();
    ok(d, &["gen", "--config", "config.toml", "--out", "a"]);
    ok(d, &["gen", "--config", "config.toml", "--seed", "4", "--out", "b"]);
    assert_ne!(read(d.join("a/test.json")), read(d.join("b/test.json")));
}

#[test]
fn staged_training() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("config.toml"), SMALL).unwrap();
    ok(d, &["gen", "--config", "config.toml", "--out", "data"]);

    let err = fails(d, &["train", "--config", "config.toml", "--data", "data", "--out", "s2.json", "--stage", "2"]);
    assert!(err.contains("first-stage --checkpoint"), "{err}");
    assert!(!d.join("s2.json").exists());

    let quiet = ["--log", "log.jsonl"];
    let mut args = vec!["train", "--config", "config.toml", "--data", "data", "--out", "s1.json", "--stage", "1"];
    args.extend(quiet);
    ok(d, &args);
    assert_eq!(json(d.join("s1.json"))["meta"]["stage"], 1);

    let mut args = vec![
        "train", "--config", "config.toml", "--data", "data", "--out", "s2.json", "--stage", "2", "--checkpoint", "s1.json",
    ];
    args.extend(quiet);
    ok(d, &args);
    assert_eq!(json(d.join("s2.json"))["meta"]["stage"], 2);

    // a second-stage checkpoint cannot seed another second stage
    let mut args = vec![
        "train", "--config", "config.toml", "--data", "data", "--out", "s3.json", "--stage", "2", "--checkpoint", "s2.json",
    ];
    args.extend(quiet);
    fails(d, &args);
    assert!(!d.join("s3.json").exists());
}

#[test]
fn bad_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[train]\nlr = -1.0\n").unwrap();
    let err = fails(d, &["gen", "--config", "bad.toml", "--out", "data"]);
    assert!(err.contains("lr"), "{err}");
    fs::write(d.join("typo.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    fails(d, &["gen", "--config", "typo.toml", "--out", "data"]);
    assert!(!d.join("data").exists());

    // a checkpoint trained on one world does not fit a world with fewer colors
    fs::write(d.join("config.toml"), SMALL).unwrap();
    fs::write(
        d.join("small_world.toml"),
        "[dataset.world]\nn_colors = 4\n[dataset.split]\ntrain = 5\nval = 1\ntest = 3\n",
    )
    .unwrap();
    ok(d, &["gen", "--config", "config.toml", "--out", "data"]);
    ok(d, &["gen", "--config", "small_world.toml", "--out", "other"]);
    ok(
        d,
        &["train", "--config", "config.toml", "--data", "data", "--out", "s1.json", "--stage", "1", "--log", "l.jsonl"],
    );
    let err = fails(d, &["eval", "--checkpoint", "s1.json", "--data", "other"]);
    assert!(err.contains("checkpoint mismatch"), "{err}");

    let err = fails(d, &["trace", "--checkpoint", "s1.json", "--data", "data", "--scene", "9999", "--out", "t"]);
    assert!(err.contains("9999"), "{err}");
}

fn reference() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../reference")
}

fn assert_close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-9, "{path}: {x} vs {y}");
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}");
            for (k, v) in x {
                assert_close(v, &y[k], &format!("{path}.{k}"));
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                assert_close(u, v, &format!("{path}[{i}]"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn reference_checkpoint_matches_golden_report() {
    let dir = reference();
    let out = tempfile::tempdir().unwrap();
    let report = out.path().join("report.json");
    ok(
        &dir,
        &[
            "eval",
            "--config",
            "config.toml",
            "--checkpoint",
            "checkpoint.json",
            "--data",
            "data",
            "--out",
            report.to_str().unwrap(),
        ],
    );
    assert_close(&json(report), &json(dir.join("report.json")), "report");
}

#[test]
fn reference_trace_shows_a_correction() {
    let dir = reference();
    let out = tempfile::tempdir().unwrap();
    let t = out.path().join("trace");
    ok(&dir, &["trace", "--checkpoint", "checkpoint.json", "--data", "data", "--out", t.to_str().unwrap()]);
    let trace = json(t.join("trace.json"));
    assert_eq!(trace["scene"], 2);
    assert!(!trace["corrected_objects"].as_array().unwrap().is_empty());
    let stability = trace["stability"].as_u64().unwrap() as usize;
    assert_eq!(trace["steps"].as_array().unwrap().len(), stability + 1);
    for i in 0..=stability {
        assert!(t.join(format!("q{i}.dot")).exists());
    }
    assert!(!t.join(format!("q{}.dot", stability + 1)).exists());
    // the shipped trace is what the command produces
    assert_eq!(read(t.join("trace.json")), read(dir.join("trace/trace.json")));
}

#[test]
fn silent_messages_stabilize_after_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut ckpt = json(reference().join("checkpoint.json"));
    for name in ["scn.w_o", "scn.b_o", "scn.w_r", "scn.b_r"] {
        let values = ckpt["params"][name]["values"].as_array_mut().unwrap();
        values.iter_mut().for_each(|v| *v = Value::from(0.0));
    }
    fs::write(d.join("zero.json"), serde_json::to_vec(&ckpt).unwrap()).unwrap();
    let data = reference().join("data");
    ok(
        d,
        &["trace", "--checkpoint", "zero.json", "--data", data.to_str().unwrap(), "--scene", "2", "--out", "t"],
    );
    let mut dots: Vec<String> = fs::read_dir(d.join("t"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".dot"))
        .collect();
    dots.sort();
    assert_eq!(dots, ["q0.dot", "q1.dot"]);
    let trace = json(d.join("t/trace.json"));
    assert_eq!(trace["stability"], 1);
    assert_eq!(trace["steps"].as_array().unwrap().len(), 2);
    assert_eq!(trace["steps"][0]["objects"], trace["steps"][1]["objects"]);
}

#[test]
fn divergence_aborts_without_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("config.toml"),
        "[dataset.split]\ntrain = 10\nval = 2\ntest = 3\n[train]\nlr = 1e200\nstage1_epochs = 3\nstage2_epochs = 1\n",
    )
    .unwrap();
    ok(d, &["gen", "--config", "config.toml", "--out", "data"]);
    let err = fails(d, &["train", "--config", "config.toml", "--data", "data", "--out", "ck.json", "--log", "log.jsonl"]);
    assert!(err.contains("diverged"), "{err}");
    assert!(!d.join("ck.json").exists());
    let log = fs::read_to_string(d.join("log.jsonl")).unwrap();
    let last: Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["event"], "diverged");
    assert!(last["step"].as_u64().is_some());
}
