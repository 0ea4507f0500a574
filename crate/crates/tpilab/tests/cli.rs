// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(name)
}

fn tpilab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpilab")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = tpilab(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn error_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn exit_codes_and_error_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(tpilab(d, &["no-such-command"]).status.code(), Some(1));
    std::fs::write(d.join("bad.bench"), "INPUT(a)\ny = AND(a, q)\nOUTPUT(y)\n").unwrap();
    let out = tpilab(d, &["coverage", "bad.bench"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "input");
    assert_eq!(e["error"]["detail"]["line"], 2);
    assert_eq!(e["error"]["detail"]["token"], "q");
    let out = tpilab(d, &["evaluate", "--random", "2"]);
    assert_eq!(out.status.code(), Some(1), "graph-dqn without a model");
    std::fs::write(d.join("junk.ck"), b"not a checkpoint").unwrap();
    let c17 = corpus("c17.bench");
    let out = tpilab(d, &["infer", c17.to_str().unwrap(), "--model", "junk.ck"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn convert_reports_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let c17 = corpus("c17.bench");
    let v: Value = serde_json::from_slice(&ok(dir.path(), &["convert", c17.to_str().unwrap()])).unwrap();
    assert_eq!(v["tool"], "tpilab");
    assert_eq!(v["command"], "convert");
    assert_eq!(v["config"]["seed"], 0);
    assert_eq!(v["result"]["equivalence"]["equivalent"], true);
    assert_eq!(v["result"]["aig"]["node_count"], 17);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let c17 = corpus("c17.bench");
    let c17 = c17.to_str().unwrap();
    let mux = corpus("mux4.bench");
    let mux = mux.to_str().unwrap();
    let cfg = r#"{"seed": 3, "patterns": 512, "pretrain": {"epochs": 2}, "train": {"episodes": 12, "batch_size": 4}}"#;
    std::fs::write(d.join("run.json"), cfg).unwrap();
    let run = |tag: &str| -> Vec<(String, Vec<u8>)> {
        let f = |s: &str| format!("{s}.{tag}");
        let mut out = Vec::new();
        let c = ["--config", "run.json"];
        let with = |args: &[&str]| -> Vec<String> { c.iter().chain(args).map(|s| s.to_string()).collect() };
        let call = |args: Vec<String>| ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>());
        out.push(("convert".into(), call(with(&["convert", c17]))));
        out.push(("coverage".into(), call(with(&["coverage", mux, "--csv", &f("cov.csv")]))));
        out.push(("cop".into(), call(with(&["cop", c17]))));
        out.push(("pretrain".into(), call(with(&["pretrain", "--random", "3", "-o", &f("pre.ck"), "--log", &f("pre.csv")]))));
        out.push((
            "train".into(),
            call(with(&["train", mux, "--random", "3", "--pretrain", &f("pre.ck"), "-o", &f("q.ck"), "--log", &f("train.csv")])),
        ));
        out.push((
            "infer".into(),
            call(with(&["infer", mux, "--model", &f("q.ck"), "--pretrain", &f("pre.ck"), "--bench-out", &f("tp.bench")])),
        ));
        std::fs::write(d.join(f("actions.json")), &out.last().unwrap().1).unwrap();
        out.push(("insert".into(), call(with(&["insert", mux, "--actions", &f("actions.json")]))));
        out.push((
            "evaluate".into(),
            call(with(&["evaluate", c17, mux, "--model", &f("q.ck"), "--pretrain", &f("pre.ck"), "--csv", &f("eval.csv")])),
        ));
        out.push(("selfcheck".into(), call(with(&["selfcheck", "--circuits", "3"]))));
        for file in ["cov.csv", "pre.ck", "pre.csv", "q.ck", "train.csv", "tp.bench", "eval.csv"] {
            out.push((file.into(), std::fs::read(d.join(f(file))).unwrap()));
        }
        out
    };
    let a = run("a");
    let b = run("b");
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        assert!(!x.is_empty(), "{name} is empty");
        assert!(x == y, "{name} differs between runs");
    }
    // the inserted netlist written by `infer` and by `insert` agree
    let tp = String::from_utf8(std::fs::read(d.join("tp.bench.a")).unwrap()).unwrap();
    let ins = String::from_utf8(a.iter().find(|(n, _)| n == "insert").unwrap().1.clone()).unwrap();
    assert_eq!(tp.lines().filter(|l| !l.starts_with("# {")).collect::<Vec<_>>(), ins.lines().filter(|l| !l.starts_with("# {")).collect::<Vec<_>>());
}

#[test]
fn empty_action_log_reproduces_canonical_netlist() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let adder = corpus("full_adder.bench");
    let adder = adder.to_str().unwrap();
    std::fs::write(d.join("none.json"), "[]").unwrap();
    ok(d, &["convert", adder, "--canonical", "canon.bench"]);
    let out = String::from_utf8(ok(d, &["insert", adder, "--actions", "none.json"])).unwrap();
    let canon = std::fs::read_to_string(d.join("canon.bench")).unwrap();
    assert!(out.starts_with("# {"));
    assert_eq!(out.split_once('\n').unwrap().1, canon);
}
