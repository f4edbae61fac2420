//! Separating corrupted from clean labels by κ vs by loss, at every saved
//! checkpoint of an adversarial run under 40% pair-flipping noise.
//!
//!     cargo run --release --example kappa_vs_loss -- [seed]

use std::path::Path;

use kappa_lab::cli::config::{self, KappaRunConfig, TrainRunConfig};
use kappa_lab::cli::experiments::{run_kappa, run_train};
use kappa_lab::Result;

fn main() -> Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let train: TrainRunConfig = config::load(&dir.join("train-at-pair40.toml"))?;
    let kappa: KappaRunConfig = config::load(&dir.join("kappa.toml"))?;
    let run = run_train(&train, seed, None)?;
    let report = run_kappa(&kappa, &run.checkpoints)?;
    println!("epoch  AUROC(kappa, low=corrupted)  AUROC(loss, high=corrupted)");
    for a in &report.analyses {
        println!(
            "{:5}  {:27.3}  {:27.3}",
            a.epoch, a.auroc.kappa_low_means_corrupted, a.auroc.loss_high_means_corrupted
        );
    }
    if let Some(last) = report.analyses.last() {
        println!("most typical samples at epoch {}:", last.epoch);
        for &i in last.ranking.iter().take(5) {
            let r = &last.table[i];
            println!(
                "  #{:4} label {} kappa {:2} loss {:.4} corrupted {}",
                r.sample_index, r.observed_label, r.kappa, r.loss, r.corrupted
            );
        }
    }
    Ok(())
}
