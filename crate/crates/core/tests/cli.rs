use milearn::data::{read_dataset, read_model, ModelSpec};
use milearn::nn::init_params;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "generate": {"meta_train_tasks": 6, "demos_per_task": 2, "meta_test_tasks": 3, "meta_test_demos": 2},
  "arch": {"fc_hidden": 12, "bias_transform_dim": 4},
  "train": {"epochs": 2, "meta_batch": 3, "inner_lr": 0.01},
  "eval": {"tasks": 3, "trials": 2},
  "lstm_width": 8
}"#;

fn mil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mil")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// A scratch directory holding the small config and a generated dataset.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.json"), SMALL).unwrap();
    ok(&mil(dir.path(), &["generate", "--config", "small.json", "--out", "d.mil"]));
    let p = dir.path().to_path_buf();
    (dir, p)
}

#[test]
fn generate_writes_a_valid_dataset() {
    let (_t, dir) = workspace();
    let ds = read_dataset(&dir.join("d.mil"), None, false).unwrap();
    assert_eq!(ds.meta_train.len(), 6);
    assert_eq!(ds.meta_test.len(), 3);
    assert!(ds.meta_train.iter().all(|e| e.demos.len() == 2));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("one.json"), r#"{"generate": {"demos_per_task": 1}}"#).unwrap();
    let out = mil(p, &["generate", "--config", "one.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!p.join("dataset.mil").exists());

    std::fs::write(p.join("bad.json"), "{\n  \"train\": {\"epochs\": }\n}").unwrap();
    let out = mil(p, &["generate", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json:2:"));

    std::fs::write(p.join("typo.json"), r#"{"trian": {}}"#).unwrap();
    assert_eq!(mil(p, &["generate", "--config", "typo.json"]).status.code(), Some(1));
}

#[test]
fn zero_epochs_keeps_initialization() {
    let (_t, dir) = workspace();
    ok(&mil(
        &dir,
        &["train", "--config", "small.json", "--data", "d.mil", "--epochs", "0", "--seed", "4", "--out", "p.mil"],
    ));
    let saved = read_model(&dir.join("p.mil")).unwrap();
    let again = {
        let spec: &ModelSpec = &saved.spec;
        // initialization reproduced from the recorded architecture and seed
        let rng_seed = milearn::data::mix_seed(4, milearn::cli::INIT_SALT);
        init_params(&spec.arch, &mut ChaCha8Rng::seed_from_u64(rng_seed))
    };
    assert_eq!(saved.params, again);
    let hist = std::fs::read_to_string(dir.join("p.mil.history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 2, "{hist}");
}

#[test]
fn training_is_reproducible_and_resumable() {
    let (_t, dir) = workspace();
    let train = |out: &str, extra: &[&str]| {
        let mut args = vec!["train", "--config", "small.json", "--data", "d.mil", "--out", out];
        args.extend_from_slice(extra);
        ok(&mil(&dir, &args))
    };
    train("a.mil", &["--epochs", "4"]);
    train("b.mil", &["--epochs", "4"]);
    let read = |f: &str| std::fs::read(dir.join(f)).unwrap();
    assert_eq!(read("a.mil"), read("b.mil"));
    assert_eq!(read("a.mil.history.csv"), read("b.mil.history.csv"));

    std::fs::write(dir.join("ck.json"), SMALL.replace(r#""epochs": 2,"#, r#""epochs": 2, "checkpoint_every": 1,"#))
        .unwrap();
    ok(&mil(&dir, &["train", "--config", "ck.json", "--data", "d.mil", "--out", "c.mil"]));
    ok(&mil(
        &dir,
        &[
            "train",
            "--config",
            "ck.json",
            "--data",
            "d.mil",
            "--epochs",
            "4",
            "--resume",
            "c.mil.ckpt",
            "--out",
            "c.mil",
        ],
    ));
    assert_eq!(read_model(&dir.join("a.mil")).unwrap().params, read_model(&dir.join("c.mil")).unwrap().params);
    assert_eq!(read("a.mil.history.csv"), read("c.mil.history.csv"));
}

#[test]
fn eval_writes_reports_per_method_and_shots() {
    let (_t, dir) = workspace();
    let line = ok(&mil(&dir, &["eval", "--config", "small.json", "--data", "d.mil", "--method", "random"]));
    assert!(line.starts_with("random k=1: success "), "{line}");
    assert!(dir.join("eval-random-k1.json").exists() && dir.join("eval-random-k1.csv").exists());

    ok(&mil(&dir, &["train", "--config", "small.json", "--data", "d.mil", "--out", "p.mil"]));
    for k in ["1", "2"] {
        ok(&mil(&dir, &["eval", "--config", "small.json", "--data", "d.mil", "--params", "p.mil", "--shots", k]));
    }
    let one = std::fs::read_to_string(dir.join("eval-mil-k1.json")).unwrap();
    let two = std::fs::read_to_string(dir.join("eval-mil-k2.json")).unwrap();
    assert_ne!(one, two);
    assert!(one.contains("\"pre_loss\""));

    ok(&mil(&dir, &["eval", "--config", "small.json", "--data", "d.mil", "--params", "p.mil", "--out", "again"]));
    assert_eq!(one, std::fs::read_to_string(dir.join("again.json")).unwrap());
}

#[test]
fn baselines_train_and_evaluate() {
    let (_t, dir) = workspace();
    for method in ["contextual", "lstm"] {
        let out = format!("{method}.mil");
        ok(&mil(&dir, &["train", "--config", "small.json", "--data", "d.mil", "--method", method, "--out", &out]));
        ok(&mil(&dir, &["eval", "--config", "small.json", "--data", "d.mil", "--method", method, "--params", &out]));
        assert!(dir.join(format!("eval-{method}-k1.csv")).exists());
    }
    let out = mil(&dir, &["eval", "--config", "small.json", "--data", "d.mil", "--method", "lstm"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn modality_mismatch_exits_four() {
    let (_t, dir) = workspace();
    ok(&mil(&dir, &["train", "--config", "small.json", "--data", "d.mil", "--out", "p.mil"]));
    let out = mil(
        &dir,
        &["eval", "--config", "small.json", "--data", "d.mil", "--params", "p.mil", "--demo-modality", "video-only"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn env_mismatch_is_rejected_unless_allowed() {
    let (_t, dir) = workspace();
    std::fs::write(dir.join("long.json"), SMALL.replacen('{', r#"{"env": {"horizon": 60},"#, 1)).unwrap();
    let args = ["train", "--config", "long.json", "--data", "d.mil", "--epochs", "0", "--out", "p.mil"];
    assert_eq!(mil(&dir, &args).status.code(), Some(1));
    let mut allowed = args.to_vec();
    allowed.push("--allow-env-mismatch");
    ok(&mil(&dir, &allowed));
}

#[test]
fn gradcheck_reports_and_catches_faults() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&mil(dir.path(), &["gradcheck", "--out", "g.json"]));
    assert!(text.contains("meta"), "{text}");
    assert!(dir.path().join("g.json").exists());
    let out = mil(dir.path(), &["gradcheck", "--inject-fault", "exp"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("failing checks"));
    assert_eq!(mil(dir.path(), &["gradcheck", "--inject-fault", "nope"]).status.code(), Some(1));
}
