use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "steps": 6, "eval_every": 3, "log_every": 2, "eval_examples": 4, "eval_importance": 2,
    "dataset": {"train_size": 12, "test_size": 4},
    "model": {"hidden_size": 8, "steps": 2},
    "baseline": {"steps": 2, "batch_size": 2, "channels": [2, 2, 2, 2, 2, 1]}
}"#;

fn voxgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxgen"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = voxgen(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    voxgen(args).status.code().unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_command_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let mesh = tmp.path().join("mesh.json");
    std::fs::write(
        &mesh,
        r#"{"width": 12, "height": 12, "steps": 2, "hidden_size": 8, "read_size": 8}"#,
    )
    .unwrap();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        let out = |name: &str| root.join(name);
        ok(&[
            "gen-data",
            "--config",
            s(&cfg),
            "--seed",
            "3",
            "--out",
            s(&out("data")),
        ]);
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--seed",
            "3",
            "--out",
            s(&out("train")),
        ]);
        let ck = out("train").join("checkpoint");
        ok(&[
            "eval",
            "--checkpoint",
            s(&ck),
            "--importance",
            "3",
            "--out",
            s(&out("eval")),
        ]);
        ok(&[
            "sample",
            "--checkpoint",
            s(&ck),
            "--n",
            "2",
            "--seed",
            "5",
            "--out",
            s(&out("sample")),
        ]);
        ok(&[
            "complete",
            "--checkpoint",
            s(&ck),
            "--n",
            "1",
            "--iters",
            "3",
            "--out",
            s(&out("complete")),
        ]);
        ok(&[
            "render-mesh",
            "--config",
            s(&mesh),
            "--out",
            s(&out("mesh")),
        ]);
        ok(&[
            "train-baseline",
            "--config",
            s(&cfg),
            "--out",
            s(&out("baseline")),
        ]);
    }
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert!(a.len() > 20);
    assert_eq!(a, b);
}

#[test]
fn metrics_are_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = tmp.path().join("run");
    let report: serde_json::Value =
        serde_json::from_str(ok(&["train", "--config", s(&cfg), "--out", s(&out)]).trim()).unwrap();
    assert_eq!(report["step"], 6);
    let text = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let kinds: Vec<String> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(kinds, ["eval", "train", "eval", "train", "train", "eval"]);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full.json");
    std::fs::write(&full, SMALL).unwrap();
    let short = tmp.path().join("short.json");
    std::fs::write(&short, SMALL.replace(r#""steps": 6,"#, r#""steps": 3,"#)).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", s(&full), "--out", s(&a)]);
    ok(&["train", "--config", s(&short), "--out", s(&b)]);
    ok(&["train", "--config", s(&full), "--out", s(&b)]);
    assert_eq!(tree(&a.join("checkpoint")), tree(&b.join("checkpoint")));
    assert_eq!(
        code(&["train", "--config", s(&full), "--seed", "9", "--out", s(&b)]),
        2
    );
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad_json = tmp.path().join("bad.json");
    std::fs::write(&bad_json, "{\"steps\": ").unwrap();
    let bad_value = tmp.path().join("zero.json");
    std::fs::write(&bad_value, r#"{"batch_size": 0}"#).unwrap();
    let missing_digits = tmp.path().join("digits.json");
    std::fs::write(&missing_digits, r#"{"dataset": {"source": {"kind": "digits", "images": "/nonexistent/img", "labels": "/nonexistent/lbl"}}}"#).unwrap();
    assert_eq!(code(&["train", "--profile", "huge", "--out", s(&out)]), 2);
    assert_eq!(
        code(&["train", "--config", s(&bad_json), "--out", s(&out)]),
        2
    );
    assert_eq!(
        code(&["gen-data", "--config", s(&bad_value), "--out", s(&out)]),
        2
    );
    assert_eq!(
        code(&["train", "--config", "/nonexistent.json", "--out", s(&out)]),
        2
    );
    assert_eq!(
        code(&["gen-data", "--config", s(&missing_digits), "--out", s(&out)]),
        3
    );
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            s(&tmp.path().join("none")),
            "--out",
            s(&out)
        ]),
        3
    );
    assert_eq!(
        code(&["sample", "--checkpoint", s(tmp.path()), "--out", s(&out)]),
        3
    );
    assert_eq!(code(&["train"]), 2);
}
