//! End-to-end tests of the `cca` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use cca_pipeline::{read_ppm, synth_corpus, write_ppm};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cca"))
}

fn setup_corpus(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, img) in synth_corpus(77, n, 48, 48).iter().enumerate() {
        write_ppm(&dir.join(format!("img{i:03}.ppm")), img).unwrap();
    }
}

fn write_config(path: &Path, data_dir: &Path, ckpt: &Path, seed: u64) {
    std::fs::write(
        path,
        format!(
            "# tiny smoke-training config\n\
             seed = {seed}\n\
             steps = 4\n\
             batch_size = 2\n\
             crop_size = 32\n\
             lr_initial = 1e-4\n\
             lr_drop_step = 3\n\
             lr_final = 1e-5\n\
             lambda = 0.85\n\
             cca_enabled = true\n\
             cca_sign = maximize_gain\n\
             schedule_n = 3\n\
             schedule_k = 1.7\n\
             profile = toy\n\
             data_dir = {}\n\
             checkpoint_path = {}\n",
            data_dir.display(),
            ckpt.display()
        ),
    )
    .unwrap();
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("cca_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn train_compress_decompress_eval_pipeline() {
    let dir = tmp("pipeline");
    let data = dir.join("data");
    setup_corpus(&data, 4);
    let cfg = dir.join("train.cfg");
    let ckpt = dir.join("m.ccaw");
    write_config(&cfg, &data, &ckpt, 5);

    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());

    let input = data.join("img000.ppm");
    let cca = dir.join("a.cca");
    let out = bin()
        .args(["compress", "--model"])
        .arg(&ckpt)
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(&cca)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let restored = dir.join("a.ppm");
    let out = bin()
        .args(["decompress", "--model"])
        .arg(&ckpt)
        .arg("--input")
        .arg(&cca)
        .arg("--output")
        .arg(&restored)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // PSNR is computable between the original and the reconstruction.
    let a = read_ppm(&input).unwrap();
    let b = read_ppm(&restored).unwrap();
    assert_eq!((a.width, a.height), (b.width, b.height));
    let p = cca_cli::eval::psnr(&a, &b).unwrap();
    assert!(p.is_finite() && p > 0.0, "psnr {p}");

    // eval subcommand writes the CSV schema.
    let csv = dir.join("eval.csv");
    let out = bin()
        .args(["eval", "--model"])
        .arg(&ckpt)
        .arg("--images")
        .arg(&data)
        .arg("--output")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("image,bpp,psnr\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn train_is_deterministic_across_runs() {
    let dir = tmp("determinism");
    let data = dir.join("data");
    setup_corpus(&data, 3);
    for run in 0..2 {
        let cfg = dir.join(format!("t{run}.cfg"));
        let ckpt = dir.join(format!("m{run}.ccaw"));
        write_config(&cfg, &data, &ckpt, 99);
        let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.join("m0.ccaw")).unwrap();
    let b = std::fs::read(dir.join("m1.ccaw")).unwrap();
    assert_eq!(a, b, "same config+seed must give identical checkpoints");
}

#[test]
fn cca_seed_env_overrides_config() {
    let dir = tmp("seedenv");
    let data = dir.join("data");
    setup_corpus(&data, 3);
    let cfg = dir.join("t.cfg");
    let ckpt_a = dir.join("a.ccaw");
    write_config(&cfg, &data, &ckpt_a, 1);
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .env("CCA_SEED", "777")
        .output()
        .unwrap();
    assert!(out.status.success());
    // Same config without the env and seed 777 written directly.
    let cfg2 = dir.join("t2.cfg");
    let ckpt_b = dir.join("b.ccaw");
    write_config(&cfg2, &data, &ckpt_b, 777);
    std::fs::rename(&ckpt_a, ckpt_b.with_extension("env")).unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg2).output().unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(ckpt_b.with_extension("env")).unwrap(),
        std::fs::read(&ckpt_b).unwrap()
    );
}

#[test]
fn bdrate_of_identical_files_prints_zero() {
    let dir = tmp("bdrate");
    let csv = dir.join("rd.csv");
    std::fs::write(
        &csv,
        "lambda,bpp,psnr,model_id\n0.85,0.4,30,m\n1.8,0.7,32,m\n3.5,1.1,34,m\n7,1.9,36,m\n",
    )
    .unwrap();
    let out = bin()
        .args(["bdrate", "--anchor"])
        .arg(&csv)
        .arg("--test")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.trim(), "0.00%");
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let out = bin().args(["compress", "--nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().arg("unknown-subcommand").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args([
            "compress",
            "--model",
            "/nonexistent.ccaw",
            "--input",
            "/nonexistent.ppm",
            "--output",
            "/tmp/x.cca",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "one-line error: {err}");
}

#[test]
fn help_exists_for_each_subcommand() {
    for sub in ["train", "compress", "decompress", "eval", "bdrate", "infodist", "rdsweep"] {
        let out = bin().args([sub, "--help"]).output().unwrap();
        assert!(out.status.success(), "{sub} --help failed");
        assert!(!out.stdout.is_empty());
    }
}
