//! Standard or adversarial training on an MNIST subset with noisy labels:
//! per-epoch accuracy on correct vs incorrect training labels, test accuracy,
//! and the prediction entropy around corrupted points at the end.
//!
//!     cargo run --release --example noisy_training -- [config] [seed]
//!
//! `config` defaults to `configs/train-at-sym20.toml`; try
//! `configs/train-st-sym20.toml` for the memorizing baseline.

use std::path::{Path, PathBuf};

use kappa_lab::cli::config::{self, TrainRunConfig};
use kappa_lab::cli::experiments::run_train;
use kappa_lab::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/train-at-sym20.toml")
    });
    let seed: Option<u64> = args.next().and_then(|s| s.parse().ok());
    let cfg: TrainRunConfig = config::load(&path)?;
    let report = run_train(&cfg, seed.unwrap_or(cfg.seed), None)?;
    println!("epoch  loss(correct) loss(incorrect) acc(correct) acc(incorrect)    gap   test");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    for m in &report.history {
        println!(
            "{:5}  {:>13} {:>15} {:>12} {:>14} {:>6} {:>6}",
            m.epoch,
            opt(m.mean_loss_correct),
            opt(m.mean_loss_incorrect),
            opt(m.train_acc_correct),
            opt(m.train_acc_incorrect),
            opt(m.group_gap()),
            opt(m.test_acc_natural),
        );
    }
    if let Some(e) = &report.entropy {
        println!(
            "entropy around {} corrupted points: random {:.3} nats, adversarial {:.3} nats",
            e.points, e.random, e.adversarial
        );
    }
    Ok(())
}
