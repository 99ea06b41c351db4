use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn harness(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kron-harness"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_FIGURE1: &str = r#"{
  "model": { "kind": "mlp2", "input_dim": 8, "hidden_dim": 6, "num_classes": 3, "probe_layer": 0, "activation": "relu" },
  "train": { "optimizer": "gd", "lr": 0.5, "steps": 6 },
  "dataset": { "synth": { "dim": 8, "num_classes": 3, "per_class": 10, "separation": 1.5 } },
  "estimators": ["shampoo", "shampoo_sq", "opt_kron(3)", "kfac"],
  "curvature_targets": ["gn", "adagrad"],
  "seed": 3
}
"#;

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL_FIGURE1).unwrap();
    let first = harness(&["figure1", "--config", "small.json", "--out", "a"], dir.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let replay = harness(&["figure1", "--config", "a/manifest.json", "--out", "b"], dir.path());
    assert!(replay.status.success(), "{}", stderr(&replay));
    for f in ["figure1.csv", "figure1.svg"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("a/figure1.csv")).unwrap();
    assert!(csv.starts_with("step,target,estimator,cosine,method,batch_size,label_mode,seed\n"));
    assert!(!csv.contains('\r'));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",3")));
}

#[test]
fn seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL_FIGURE1).unwrap();
    assert!(harness(&["figure1", "--config", "small.json", "--out", "a"], dir.path()).status.success());
    let o = harness(&["figure1", "--config", "small.json", "--out", "b", "--seed", "4"], dir.path());
    assert!(o.status.success());
    let a = fs::read_to_string(dir.path().join("a/figure1.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/figure1.csv")).unwrap();
    assert_ne!(a, b);
    assert!(b.lines().skip(1).all(|l| l.ends_with(",4")));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL_FIGURE1.replace("\"seed\": 3", "\"seed\": 3,\n  \"learning_rate\": 0.1");
    fs::write(dir.path().join("bad.json"), bad).unwrap();
    let o = harness(&["figure1", "--config", "bad.json", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("learning_rate") && msg.contains("line"), "{msg}");
    assert!(!dir.path().join("x/figure1.csv").exists());
}

#[test]
fn invalid_values_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL_FIGURE1.replace("\"lr\": 0.5", "\"lr\": -0.5");
    fs::write(dir.path().join("bad.json"), bad).unwrap();
    assert_eq!(harness(&["figure1", "--config", "bad.json"], dir.path()).status.code(), Some(1));
    assert_eq!(harness(&["figure1", "--config", "missing.json"], dir.path()).status.code(), Some(1));
    assert_eq!(harness(&["figure3"], dir.path()).status.code(), Some(1));
    assert_eq!(harness(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn selftest_filter_runs_one_suite() {
    let dir = tempfile::tempdir().unwrap();
    let o = harness(&["selftest", "--filter", "idx_format"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("PASS idx_format") && out.contains("1 passed, 0 failed"), "{out}");
}

#[test]
fn gen_data_round_trips_through_idx_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gen.json"),
        r#"{ "dim": 16, "num_classes": 2, "per_class": 12, "separation": 1.0, "seed": 5 }"#,
    )
    .unwrap();
    let o = harness(&["gen-data", "--config", "gen.json", "--out", "data"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let images = fs::read(dir.path().join("data/images.idx")).unwrap();
    assert_eq!(&images[..4], &[0, 0, 8, 3]);
    assert_eq!(images.len(), 16 + 24 * 16);
    fs::write(
        dir.path().join("data/run.json"),
        r#"{
  "model": { "kind": "binary_logistic", "input_dim": 16, "num_classes": 2 },
  "train": { "optimizer": "gd", "lr": 0.01, "steps": 3 },
  "dataset": { "idx": { "images": "images.idx", "labels": "labels.idx", "normalization": "scale255" } },
  "estimators": ["shampoo_sq"],
  "curvature_targets": ["gn"]
}"#,
    )
    .unwrap();
    let o = harness(&["figure1", "--config", "data/run.json", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/figure1.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for r in rows {
        let cos: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
        assert!((cos - 1.0).abs() < 1e-10, "{r}");
    }
}

#[test]
fn plot_single_row_is_deterministic_svg() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("one.csv"),
        "step,target,estimator,cosine,method,batch_size,label_mode,seed\n\
         0,gn,shampoo_sq,9.0000000000000000e-1,exact,,enumerated,0\n",
    )
    .unwrap();
    for out in ["a.svg", "b.svg"] {
        let o = harness(&["plot", "one.csv", "--out", out, "--title", "t"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read_to_string(dir.path().join("a.svg")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b.svg")).unwrap());
    assert!(a.starts_with("<?xml") || a.starts_with("<svg"));
    assert!(a.trim_end().ends_with("</svg>"));
    assert_eq!(a.matches("<circle").count(), 1);

    fs::write(dir.path().join("crlf.csv"), "step,target\r\n").unwrap();
    let o = harness(&["plot", "crlf.csv", "--out", "c.svg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
