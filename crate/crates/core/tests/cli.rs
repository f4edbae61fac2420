mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kappa_lab::checkpoint::Checkpoint;
use kappa_lab::cli::manifest::RunManifest;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_kappa-lab"));
    c.env("KAPPA_LAB_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn tiny_train(dir: &Path) -> PathBuf {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    write(
        dir,
        "train.toml",
        &format!(
            r#"
seed = 5
mode = "adversarial"
checkpoint_epochs = [1]

[data]
dir = "{}"
train_size = 120
test_size = 60

[noise]
kind = "pair"
rate = 0.4

[model]
hidden = [16]

[train]
epochs = 2
batch_size = 32
learning_rate = 0.05
milestones = []

[eval]
robust = false

[probe]
samples = 5
"#,
            data.display()
        ),
    )
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["synth"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let missing = run(&["synth", "--config", "/no/such.toml", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = write(tmp.path(), "bad.toml", "epsilon = \"wide\"\n");
    let r = run(&["synth", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("epsilon"));

    let invalid = write(tmp.path(), "invalid.toml", "flipped = 40\n");
    assert_eq!(
        run(&["synth", "--config", s(&invalid), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );

    let ok = write(tmp.path(), "ok.toml", "iterations = 5\n");
    let r = run(&[
        "synth",
        "--config",
        s(&ok),
        "--out",
        s(&out),
        "--checkpoint",
        "x.json",
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let tmp = TempDir::new().unwrap();
    let blocker = write(tmp.path(), "file", "");
    let cfg = write(
        tmp.path(),
        "ok.toml",
        "iterations = 5\ngrid_resolution = 4\n",
    );
    let r = run(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&blocker.join("sub")),
    ]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn synth_writes_a_verifiable_run_directory() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "synth.toml",
        "iterations = 50\ngrid_resolution = 10\n",
    );
    let out = tmp.path().join("run");
    let r = run(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--seed",
        "3",
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    let m = RunManifest::load(&out).unwrap();
    m.verify(&out).unwrap();
    assert_eq!(m.command, "synth");
    assert_eq!(m.seeds["base"], 3);
    let names: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
    for f in [
        "config.json",
        "dataset.csv",
        "grid-st.csv",
        "grid-pgd-4.csv",
        "neighborhood.csv",
        "summary.json",
    ] {
        assert!(names.contains(&f), "missing {f}");
    }
    let grid = std::fs::read_to_string(out.join("grid-st.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 100);
}

#[test]
fn train_kappa_and_resume_round_trip() {
    if !common::mnist_available() {
        eprintln!("MNIST files not present; skipping");
        return;
    }
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_train(tmp.path());
    let run_dir = tmp.path().join("train");
    let r = run(&["train", "--config", s(&cfg), "--out", s(&run_dir)]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    RunManifest::load(&run_dir)
        .unwrap()
        .verify(&run_dir)
        .unwrap();
    let ck = run_dir.join("checkpoints/epoch-001.json");
    let loaded = Checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.epoch, 1);
    assert_eq!(loaded.seeds.base_seed, 5);
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    // κ analysis of both checkpoints; the config supplies data and noise
    let kcfg = write(
        tmp.path(),
        "kappa.toml",
        &std::fs::read_to_string(&cfg)
            .unwrap()
            .split("[model]")
            .next()
            .unwrap()
            .replace(
                "seed = 5\nmode = \"adversarial\"\ncheckpoint_epochs = [1]\n",
                "bins = 8\n",
            ),
    );
    let kdir = tmp.path().join("kappa");
    let final_ck = run_dir.join("final-model.json");
    let r = run(&[
        "kappa",
        "--config",
        s(&kcfg),
        "--out",
        s(&kdir),
        "--checkpoint",
        s(&ck),
        "--checkpoint",
        s(&final_ck),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    let auroc = std::fs::read_to_string(kdir.join("auroc.csv")).unwrap();
    assert_eq!(auroc.lines().count(), 1 + 2 * 4);
    assert!(kdir.join("00-epoch-001/table.csv").exists());
    assert!(kdir.join("01-epoch-002/hist-kappa.csv").exists());

    // a mismatched seed is refused
    let r = run(&[
        "kappa",
        "--config",
        s(&kcfg),
        "--out",
        s(&kdir),
        "--checkpoint",
        s(&ck),
        "--seed",
        "6",
    ]);
    assert_eq!(r.status.code(), Some(2));

    // resuming from a checkpoint
    let r = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("resumed")),
        "--checkpoint",
        s(&final_ck),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );

    // a damaged checkpoint is an input error
    let broken = write(tmp.path(), "broken.json", "{\"format\": ");
    let r = run(&[
        "kappa",
        "--config",
        s(&kcfg),
        "--out",
        s(&kdir),
        "--checkpoint",
        s(&broken),
    ]);
    assert_eq!(r.status.code(), Some(2));
}
