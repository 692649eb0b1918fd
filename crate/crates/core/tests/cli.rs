//! Command-line behaviour: help, error prefixes, exit codes and output files.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_resa");

const SMALL: &[&str] = &[
    "--epochs", "4", "--eval_every", "2", "--batch_size", "32",
    "--data.samples_per_class", "16", "--data.ambient_dim", "12",
];

fn resa(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RESA_THREADS", "1").output().expect("binary runs")
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    resa(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let o = resa(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["train", "metrics", "sinkhorn", "gradcheck", "compare"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = resa(&["train", "--out", dir.path().to_str().unwrap(), "--config", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR:Config:"), "{}", stderr(&o));
}

#[test]
fn unknown_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &["--no_such.key", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown key 'no_such.key'"), "{}", stderr(&o));
}

#[test]
fn non_finite_loss_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &["--optimizer.base_lr", "1e300"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("ERROR:NonFiniteLoss:"));
}

#[test]
fn train_writes_config_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &["--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.json", "runlog.csv", "runlog.json", "checkpoint/manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 3);
    assert_eq!(cfg["epochs"], 4);
    assert_eq!(cfg["data"]["samples_per_class"], 16);
    let csv = std::fs::read_to_string(dir.path().join("runlog.csv")).unwrap();
    let epochs: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["0", "2", "4"]);
}

#[test]
fn config_file_and_overrides_merge() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cfg.json");
    std::fs::write(&file, r#"{"epochs": 9, "loss": {"tau": 0.3}, "data.n_classes": 4}"#).unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--out", out.to_str().unwrap(), "--config", file.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--loss.variant", "InfoNCE"]);
    let o = resa(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["epochs"], 4);
    assert_eq!(cfg["loss"]["tau"], 0.3);
    assert_eq!(cfg["loss"]["variant"], "InfoNCE");
    assert_eq!(cfg["data"]["n_classes"], 4);
}

#[test]
fn identical_invocations_give_identical_logs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(train(a.path(), &[]).status.success());
    assert!(train(b.path(), &[]).status.success());
    let read = |d: &Path| std::fs::read(d.join("runlog.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn metrics_and_sinkhorn_on_files() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    let y = dir.path().join("y.txt");
    std::fs::write(&x, "5,0\n5,1\n6,0\n6,1\n5,2\n0,10\n1,10\n0,11\n1,11\n0,12\n").unwrap();
    std::fs::write(&y, "0\n0\n0\n0\n0\n1\n1\n1\n1\n1\n").unwrap();
    let o = resa(&["metrics", x.to_str().unwrap(), y.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rec["ari"], 1.0);
    assert!(rec["sc_mean"].as_f64().unwrap() > 0.5);

    let s = dir.path().join("s.csv");
    let a = dir.path().join("a.csv");
    std::fs::write(&s, "1,0.2\n0.2,1\n").unwrap();
    let o = resa(&["sinkhorn", s.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["size"], 2);
    assert!(report["row_marginal_error"].as_f64().unwrap() < 1e-12);
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 2);

    let o = resa(&["sinkhorn", x.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(stderr(&o).starts_with("ERROR:NonSquareInput:"), "{}", stderr(&o));
}

#[test]
fn gradcheck_sign_flip_exits_nonzero() {
    let o = resa(&["gradcheck", "--inject-sign-flip"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn compare_tabulates_three_methods() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["compare", "--out", dir.path().to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let o = resa(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let methods: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["ReSA", "InfoNCE", "SwAV"]);
}
