//! End-to-end checks of the command-line surface.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intact"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("intact-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn gen_is_deterministic_across_invocations() {
    let out1 = tmp("gen1.csv");
    let out2 = tmp("gen2.csv");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["gen", "--seed", "42", "--n", "120", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read(&out1), read(&out2));
}

#[test]
fn train_and_eval_round_trip() {
    let data = tmp("train_data.csv");
    assert!(bin()
        .args(["gen", "--seed", "7", "--n", "240", "--out"])
        .arg(&data)
        .status()
        .unwrap()
        .success());

    let ck1 = tmp("ck1.txt");
    let ck2 = tmp("ck2.txt");
    let trace = tmp("trace.csv");
    for ck in [&ck1, &ck2] {
        let status = bin()
            .args([
                "train",
                "--seed",
                "9",
                "--max-epochs",
                "30",
                "--patience",
                "30",
                "--data",
            ])
            .arg(&data)
            .arg("--checkpoint-out")
            .arg(ck)
            .arg("--trace-out")
            .arg(&trace)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read(&ck1), read(&ck2), "checkpoints must be deterministic");

    let trace_text = String::from_utf8(read(&trace)).unwrap();
    assert!(trace_text.starts_with("# data"));
    assert!(trace_text.contains("epoch,train_elbo,validation_elbo"));

    let output = bin()
        .args(["eval", "--seed", "3", "--checkpoint"])
        .arg(&ck1)
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("seed,setting"));
    let row = lines.next().unwrap();
    assert_eq!(row.split(',').count(), 17);
}

#[test]
fn sweep_runs_from_a_config_file_and_is_deterministic() {
    let config = tmp("sweep.toml");
    std::fs::write(
        &config,
        r#"
[sweep]
n_models = 2
settings = ["proxy_confounded"]
alphas = [0.2]
betas = [0.2]
base_seed = 31
n_points = 150
mc_draws = 10

[model]
hidden_sizes = [8]

[train]
max_epochs = 12
batch_size = 25

[baseline]
hidden = [8]
max_epochs = 12
"#,
    )
    .unwrap();

    let rows1 = tmp("sweep1.csv");
    let rows2 = tmp("sweep2.csv");
    for rows in [&rows1, &rows2] {
        let status = bin()
            .args(["sweep", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(rows)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read(&rows1), read(&rows2));

    let text = String::from_utf8(read(&rows1)).unwrap();
    assert!(text.starts_with("# "), "resolved config header expected");
    assert_eq!(
        text.lines().filter(|l| !l.starts_with('#')).count(),
        3,
        "header plus one row per model"
    );
    let summary = tmp("sweep1_summary.csv");
    assert!(summary.exists(), "summary file expected");
}

#[test]
fn ihdp_runs_on_the_standin_table() {
    let table = Path::new(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .join("data/ihdp_standin.csv");
    let out1 = tmp("ihdp1.csv");
    let out2 = tmp("ihdp2.csv");
    let config = tmp("ihdp.toml");
    std::fs::write(
        &config,
        "[model]\nlatent_dim = 2\nhidden_sizes = [8]\n\n[train]\nmax_epochs = 10\n",
    )
    .unwrap();
    for out in [&out1, &out2] {
        let status = bin()
            .args(["ihdp", "--seed", "5", "--replications", "2", "--covariates"])
            .arg(&table)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read(&out1), read(&out2));
    let text = String::from_utf8(read(&out1)).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn missing_ihdp_table_reports_not_installed() {
    let out = bin()
        .args([
            "ihdp",
            "--seed",
            "5",
            "--replications",
            "1",
            "--covariates",
            "/nonexistent/ihdp.csv",
            "--out",
            "/tmp/never.csv",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("dataset not installed"), "{err}");
}

#[test]
fn unknown_subcommand_exits_with_usage() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit 2");
}

#[test]
fn invalid_flag_value_fails_cleanly() {
    let out = bin()
        .args([
            "gen",
            "--seed",
            "1",
            "--alpha",
            "1.5",
            "--out",
            "/tmp/never2.csv",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: "), "{err}");
}

#[test]
fn selftest_exits_zero() {
    let out = bin().arg("selftest").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    assert!(!text.contains("FAIL"));
}
