mod common;

use std::path::Path;
use std::process::{Command, Output};

fn regprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regprobe")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let conf = root.join("exp.conf");
    std::fs::write(&conf, common::small_config(3).to_config_text()).unwrap();
    let data = root.join("data");

    let out = regprobe(&["gen", "--config", s(&conf), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let caches = data.join("cls_reg");
    for split in ["id_train", "id_test", "decorrelated", "far"] {
        assert!(caches.join(format!("{split}.rpf")).exists(), "missing {split}");
    }

    let probe = root.join("probe.prb");
    let out = regprobe(&[
        "train",
        "--cache",
        s(&caches.join("id_train.rpf")),
        "--out",
        s(&probe),
        "--iterations",
        "200",
        "--batch",
        "32",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report = root.join("report.json");
    let ood = format!("decorrelated={}", s(&caches.join("decorrelated.rpf")));
    let anomaly = format!("far={}", s(&caches.join("far.rpf")));
    let out = regprobe(&[
        "eval",
        "--probe",
        s(&probe),
        "--id-test",
        s(&caches.join("id_test.rpf")),
        "--ood",
        &ood,
        "--anomaly",
        &anomaly,
        "--scores",
        "msp,energy",
        "--out",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = regprobe(&["report", "--input", s(&report), "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,id_acc,decorrelated,score,far,mean");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("cls_reg,") && lines[1].contains(",msp,"));

    let out = regprobe(&["report", "--input", s(&report), "--format", "markdown"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("CLS;μ_R"));
}

#[test]
fn extract_writes_weights_and_reuses_them() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut cfg = common::small_config(4);
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.dataset.train_per_class = 4;
    cfg.dataset.test_per_class = 4;
    cfg.dataset.ood[0].per_class = 4;
    cfg.dataset.anomaly[0].count = 4;
    let conf = root.join("exp.conf");
    std::fs::write(&conf, cfg.to_config_text()).unwrap();

    let a = root.join("a");
    let out = regprobe(&["extract", "--config", s(&conf), "--out", s(&a)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let weights = a.join("backbone.wgt");
    assert!(weights.exists());

    let b = root.join("b");
    let out = regprobe(&["extract", "--config", s(&conf), "--out", s(&b), "--weights", s(&weights)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cache = |d: &Path| std::fs::read(d.join("cls_patch").join("id_test.rpf")).unwrap();
    assert_eq!(cache(&a), cache(&b));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let conf = root.join("bad.conf");
    std::fs::write(&conf, "seed = 1\nclasses = one\n").unwrap();
    let out = regprobe(&["run", "--config", s(&conf)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    std::fs::write(&conf, "seed = 1\nnot_a_key = 3\n").unwrap();
    assert_eq!(regprobe(&["run", "--config", s(&conf)]).status.code(), Some(2));

    assert_eq!(regprobe(&["frobnicate"]).status.code(), Some(2));

    let junk = root.join("junk.rpf");
    std::fs::write(&junk, b"NOPE\x01\0\0\0").unwrap();
    let out = regprobe(&["train", "--cache", s(&junk), "--out", s(&root.join("p.prb"))]);
    assert_eq!(out.status.code(), Some(3));

    let out = regprobe(&["run", "--config", s(&root.join("missing.conf"))]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(regprobe(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_writes_report_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.conf");
    let mut cfg = common::small_config(8);
    cfg.strategies = vec![regprobe::FusionStrategy::ClsOnly];
    std::fs::write(&conf, cfg.to_config_text()).unwrap();
    let out = regprobe(&["run", "--config", s(&conf)]);
    assert!(out.status.success());
    let report = regprobe::harness::EvalReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(report.meta.config_hash, Some(cfg.hash()));
    assert_eq!(report.strategies.len(), 1);
}
