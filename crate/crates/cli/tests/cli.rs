use std::path::Path;
use std::process::{Command, Output};

use inceptnet::data::save_image;
use inceptnet::{Shape4, Tensor4};
use inceptnet_cli::{EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_IO, EXIT_OK};

fn inceptnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inceptnet")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tiny synthetic training run, cheap enough for every test that needs a checkpoint.
fn tiny_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--synthetic", "large", "--count", "6", "--size", "16", "--filters", "4,8,16,32", "--max-epochs", "3",
        "--out", p(out),
    ];
    args.extend_from_slice(extra);
    inceptnet(&args)
}

fn row_values(csv: &str, average: &str) -> Vec<String> {
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let row = csv.lines().find(|l| l.split(',').nth(1) == Some(average)).unwrap();
    assert_eq!(row.split(',').count(), header.len());
    row.split(',').map(str::to_string).collect()
}

fn column(csv: &str, average: &str, name: &str) -> f64 {
    let idx = csv.lines().next().unwrap().split(',').position(|h| h == name).unwrap();
    row_values(csv, average)[idx].parse().unwrap()
}

fn strip(bits: &[f64]) -> Tensor4 {
    Tensor4::from_vec(Shape4::new(1, 1, bits.len(), 1), bits.to_vec()).unwrap()
}

#[test]
fn audit_verdicts() {
    let ok = inceptnet(&["audit", "--variant", "bcdu", "--d", "1"]);
    assert_eq!(code(&ok), EXIT_OK, "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));
    let off = inceptnet(&["audit", "--variant", "bcdu", "--d", "1", "--expect", "1000"]);
    assert_eq!(code(&off), EXIT_CHECK_FAILED);
}

#[test]
fn bad_invocations_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let zero = inceptnet(&["train", "--synthetic", "small", "--max-epochs", "0", "--out", p(dir.path())]);
    assert_eq!(code(&zero), EXIT_CONFIG);
    assert!(String::from_utf8_lossy(&zero.stderr).contains("max_epochs"));
    assert_eq!(code(&inceptnet(&["train", "--synthetic", "small", "--dropout", "1.5"])), EXIT_CONFIG);
    assert_eq!(code(&inceptnet(&["no-such-command"])), EXIT_CONFIG);
    assert_eq!(code(&inceptnet(&["audit", "--d", "2"])), EXIT_CONFIG);
    assert_eq!(code(&inceptnet(&["--version"])), EXIT_OK);
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = inceptnet(&["predict", "--checkpoint", p(&dir.path().join("none.insg")), "--input", p(dir.path())]);
    assert_eq!(code(&out), EXIT_IO);
}

#[test]
fn eval_rejects_unpaired_files() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, truth) = (dir.path().join("pred"), dir.path().join("truth"));
    for d in [&pred, &truth] {
        std::fs::create_dir(d).unwrap();
    }
    let m = strip(&[0.0, 1.0]);
    save_image(&pred.join("a.pgm"), &m).unwrap();
    save_image(&truth.join("a.pgm"), &m).unwrap();
    save_image(&truth.join("b.pgm"), &m).unwrap();
    let out = inceptnet(&["eval", "--pred", p(&pred), "--truth", p(&truth), "--out", p(dir.path())]);
    assert_eq!(code(&out), EXIT_CONFIG);
    assert!(String::from_utf8_lossy(&out.stderr).contains('b'));
}

#[test]
fn eval_matches_hand_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, truth) = (dir.path().join("pred"), dir.path().join("truth"));
    for d in [&pred, &truth] {
        std::fs::create_dir(d).unwrap();
    }
    save_image(&pred.join("x.pgm"), &strip(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
    save_image(&truth.join("x.pgm"), &strip(&[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
    let out = inceptnet(&["eval", "--pred", p(&pred), "--truth", p(&truth), "--out", p(dir.path())]);
    assert_eq!(code(&out), EXIT_OK);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(column(&csv, "micro", "accuracy"), 0.7);
    assert_eq!(column(&csv, "micro", "sensitivity"), 0.5);
    assert!((column(&csv, "micro", "specificity") - 5.0 / 6.0).abs() < 1e-15);
    assert!((column(&csv, "micro", "f1") - 4.0 / 7.0).abs() < 1e-15);
    assert_eq!(column(&csv, "x", "tp"), 2.0);
    assert!(dir.path().join("roc.csv").exists());
}

#[test]
fn identical_masks_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    assert_eq!(code(&inceptnet(&["synth", "--count", "3", "--size", "16", "--out", p(&synth)])), EXIT_OK);
    let masks = synth.join("masks");
    let out = inceptnet(&["eval", "--pred", p(&masks), "--truth", p(&masks), "--out", p(dir.path())]);
    assert_eq!(code(&out), EXIT_OK);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    for avg in ["micro", "macro"] {
        for m in ["accuracy", "sensitivity", "specificity", "precision", "f1", "jaccard", "auc"] {
            assert_eq!(column(&csv, avg, m), 1.0, "{avg} {m}");
        }
    }
}

#[test]
fn op_gradients_check_out() {
    let out = inceptnet(&["gradcheck", "--scope", "op"]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failed"));
}

#[test]
fn synth_train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    assert_eq!(code(&inceptnet(&["synth", "--scale", "large", "--count", "5", "--size", "16", "--out", p(&synth)])), EXIT_OK);
    let run = dir.path().join("run");
    let trained = inceptnet(&[
        "train", "--data", p(&synth), "--size", "16", "--filters", "4,8,16,32", "--max-epochs", "2", "--out", p(&run),
    ]);
    assert_eq!(code(&trained), EXIT_OK, "{}", String::from_utf8_lossy(&trained.stderr));
    for f in ["config.toml", "best.insg", "epochs.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let pred = dir.path().join("pred");
    let predicted = inceptnet(&[
        "predict", "--checkpoint", p(&run.join("best.insg")), "--input", p(&synth.join("images")), "--out", p(&pred),
    ]);
    assert_eq!(code(&predicted), EXIT_OK, "{}", String::from_utf8_lossy(&predicted.stderr));
    assert_eq!(std::fs::read_dir(pred.join("prob")).unwrap().count(), 5);
    assert_eq!(std::fs::read_dir(pred.join("mask")).unwrap().count(), 5);

    let scored = inceptnet(&[
        "eval", "--pred", p(&pred.join("prob")), "--truth", p(&synth.join("masks")), "--out", p(dir.path()),
    ]);
    assert_eq!(code(&scored), EXIT_OK, "{}", String::from_utf8_lossy(&scored.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 + 5);
    assert!((0.0..=1.0).contains(&column(&metrics, "micro", "accuracy")));
}

#[test]
fn config_snapshot_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&tiny_train(&a, &["--seed", "11"])), EXIT_OK);
    let replay = inceptnet(&["train", "--config", p(&a.join("config.toml")), "--out", p(&b)]);
    assert_eq!(code(&replay), EXIT_OK, "{}", String::from_utf8_lossy(&replay.stderr));
    for f in ["epochs.csv", "best.insg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seeds_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&tiny_train(&a, &["--seed", "1"])), EXIT_OK);
    assert_eq!(code(&tiny_train(&b, &["--seed", "2"])), EXIT_OK);
    assert_ne!(std::fs::read(a.join("best.insg")).unwrap(), std::fs::read(b.join("best.insg")).unwrap());
}
