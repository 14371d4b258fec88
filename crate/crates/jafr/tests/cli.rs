//! End-to-end tests of the `jafr` binary: artifacts, manifests, exit codes,
//! and byte-level reproducibility.

use std::path::Path;
use std::process::Command;

fn jafr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jafr"))
}

fn write_train_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("train.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

const TINY_TRAIN: &str = "\
tag = tiny
dataset = blobs:n=192,k=2,seed=5
eval_dataset = blobs:n=96,k=2,seed=6
model.arch = {\"kind\": \"mlp\", \"hidden\": [16]}
model.num_classes = 2
model.input = [1,16,16]
train.lambda_freq = 0.0
train.lr = 0.1
train.epochs = 4
train.batch_size = 32
train.seed = 9
";

#[test]
fn train_produces_checkpoint_log_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_train_config(dir.path(), TINY_TRAIN);
    let out = dir.path().join("runs");
    let status = jafr()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("tiny_seed9.ckpt").exists());
    assert!(out.join("tiny_seed9_train_log.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("tiny_seed9_train_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 2);
    // The manifest embeds the fully resolved config.
    assert_eq!(manifest["config"]["train"]["epochs"], 4);

    // Separable blobs should be fully learned.
    let log = std::fs::read_to_string(out.join("tiny_seed9_train_log.csv")).unwrap();
    let last_epoch = log.lines().last().unwrap();
    let acc: f64 = last_epoch.rsplit(',').next().unwrap().parse().unwrap();
    assert!(acc > 0.95, "final accuracy {acc}");
}

#[test]
fn rerun_reproduces_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_train_config(dir.path(), TINY_TRAIN);
    let run = |out: &Path| {
        let status = jafr()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a);
    run(&out_b);
    for name in ["tiny_seed9.ckpt", "tiny_seed9_train_log.csv", "tiny_seed9_train_manifest.json"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // Same for an evaluation verb driven by the checkpoint.
    let eval = |out: &Path| {
        let status = jafr()
            .args(["eval-adv", "--checkpoint"])
            .arg(out.join("tiny_seed9.ckpt"))
            .args([
                "--dataset",
                "blobs:n=96,k=2,seed=6",
                "--attack",
                "fgsm",
                "--sample",
                "48",
                "--seed",
                "3",
                "--tag",
                "tiny",
            ])
            .arg("--out-dir")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    eval(&out_a);
    eval(&out_b);
    let a = std::fs::read(out_a.join("tiny_seed3_adv_report.csv")).unwrap();
    let b = std::fs::read(out_b.join("tiny_seed3_adv_report.csv")).unwrap();
    assert_eq!(a, b, "evaluation reports differ between identical runs");
}

#[test]
fn flag_overrides_beat_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_train_config(dir.path(), TINY_TRAIN);
    let out = dir.path().join("runs");
    let status = jafr()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--set", "train.epochs=1", "--seed", "77", "--out-dir"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("tiny_seed77_train_manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["config"]["train"]["epochs"], 1);
    assert_eq!(manifest["seed"], 77);
}

#[test]
fn config_errors_exit_2_data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");

    // Unparseable config line.
    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "this is not a config\n").unwrap();
    let output = jafr()
        .args(["train", "--config"])
        .arg(&bad_cfg)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    let line = stderr.lines().last().unwrap();
    assert!(line.starts_with("error kind=config"), "stderr: {stderr}");

    // Missing checkpoint file.
    let output = jafr()
        .args(["eval-adv", "--checkpoint", "/nonexistent.ckpt"])
        .args(["--dataset", "blobs:n=16,k=2,seed=0", "--attack", "fgsm"])
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("kind=data"));

    // Invalid attack configuration (step above epsilon).
    let cfg = write_train_config(dir.path(), TINY_TRAIN);
    let status = jafr()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let output = jafr()
        .args(["eval-adv", "--checkpoint"])
        .arg(out.join("tiny_seed9.ckpt"))
        .args([
            "--dataset",
            "blobs:n=16,k=2,seed=0",
            "--attack",
            "pgd",
            "--eps",
            "0.01",
            "--step",
            "0.5",
        ])
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn corruption_profile_orders_fog_above_gaussian_noise() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let status = jafr()
        .args([
            "profile-corruptions",
            "--dataset",
            "textures:n=48,c=3,h=32,w=32,seed=11",
            "--sample",
            "48",
            "--tag",
            "tex",
        ])
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("tex_seed0_corruption_bias.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 10, "expected one row per corruption kind");
    // Descending order.
    let values: Vec<f64> =
        rows.iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    for pair in values.windows(2) {
        assert!(pair[0] >= pair[1], "rows not sorted descending: {csv}");
    }
    let pos = |name: &str| rows.iter().position(|r| r.starts_with(name)).unwrap();
    assert!(pos("fog") < pos("gaussian-noise"), "fog should rank above gaussian noise:\n{csv}");
}

#[test]
fn report_combines_columns_and_computes_mce() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    std::fs::create_dir_all(&out).unwrap();
    // Two synthetic corruption reports: one baseline, one with half the error.
    let write_report = |tag: &str, acc: f64| {
        let path = out.join(format!("{tag}.csv"));
        let mut body = String::from("metric,value\n");
        body.push_str(&format!("tag,{tag}\nseed,0\nclean_acc,0.9\n"));
        for kind in ["fog", "gaussian-noise"] {
            for s in 1..=5 {
                body.push_str(&format!("corr_{kind}_s{s},{acc}\n"));
            }
        }
        std::fs::write(&path, body).unwrap();
        path
    };
    let base = write_report("standard", 0.5);
    let half = write_report("jafr", 0.75);
    let status = jafr()
        .args(["report", "--input"])
        .arg(&base)
        .arg("--input")
        .arg(&half)
        .args(["--baseline", "standard", "--tag", "combined"])
        .arg("--out-dir")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let table = std::fs::read_to_string(out.join("combined_report.csv")).unwrap();
    let mce_row = table.lines().find(|l| l.starts_with("mce,")).unwrap();
    assert_eq!(mce_row, "mce,100,50");
    assert!(table.starts_with("metric,standard,jafr"));
}
