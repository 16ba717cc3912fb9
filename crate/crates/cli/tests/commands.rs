use std::path::Path;
use std::process::{Command, Output};

fn infpriv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infpriv")).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn data_train_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = (dir.path().join("d.csv"), dir.path().join("m.json"));
    let out = infpriv(&["gen-data", "--classes", "3", "--dim", "4", "--n", "50", "--seed", "2", "--out", p(&data)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().next().unwrap(), "f0,f1,f2,f3,label,split");
    assert_eq!(text.lines().count(), 151);

    let report = json(&infpriv(&["train", "--data", p(&data), "--hidden", "8", "--epochs", "3", "--out", p(&model)]));
    assert_eq!(report["epoch_losses"].as_array().unwrap().len(), 3);

    let lip = json(&infpriv(&["lipschitz", "--model", p(&model), "--p", "1"]));
    let per: f64 = lip["per_layer"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).product();
    assert!((lip["value"].as_f64().unwrap() - per).abs() <= 1e-12 * per);

    let a = json(&infpriv(&[
        "infer", "--model", p(&model), "--mechanism", "gauss-input", "--epsilon", "1", "--alpha", "0.1",
        "--input", "0.1,-0.2,0.3,0", "--seed", "5",
    ]));
    let b = json(&infpriv(&[
        "infer", "--model", p(&model), "--mechanism", "gauss-input", "--epsilon", "1", "--alpha", "0.1",
        "--input", "0.1,-0.2,0.3,0", "--seed", "5",
    ]));
    assert_eq!(a, b);
    assert_eq!(a["released"].as_array().unwrap().len(), 3);
}

#[test]
fn calibrate_reports_the_scale() {
    let spec = json(&infpriv(&["calibrate", "--mechanism", "gauss-output", "--epsilon", "1", "--alpha", "0.1", "--mu", "1"]));
    assert_eq!(spec["scale"].as_f64().unwrap(), 0.48448052626053895);
    let lap = json(&infpriv(&["calibrate", "--mechanism", "lap-output", "--epsilon", "0.5", "--alpha", "0.2", "--mu", "2", "--dim", "3"]));
    assert!((lap["scale"].as_f64().unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn audit_subcommand_passes_and_catches_sabotage() {
    let ok = json(&infpriv(&["audit", "--epsilon", "1", "--alpha", "0.1", "--mu", "1", "--method", "analytic"]));
    assert_eq!(ok["verdict"], "pass");
    let bad = json(&infpriv(&[
        "audit", "--epsilon", "1", "--alpha", "0.1", "--mu", "1", "--method", "analytic", "--scale-factor", "0.5",
    ]));
    assert_eq!(bad["verdict"], "fail");
}

#[test]
fn invalid_input_exits_with_one_and_usage_with_two() {
    let out = infpriv(&["calibrate", "--mechanism", "gauss-output", "--epsilon", "-1", "--alpha", "0.1", "--mu", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));
    assert_eq!(infpriv(&["lipschitz", "--model", "/nonexistent.json"]).status.code(), Some(1));
    assert_eq!(infpriv(&["no-such-command"]).status.code(), Some(2));
}
