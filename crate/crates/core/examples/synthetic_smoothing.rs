//! Standard vs PGD-k adversarial training on 23 points with two flipped
//! labels: how much of each flipped point's ε-ball keeps the flipped label.
//!
//!     cargo run --release --example synthetic_smoothing -- [seed] [out-dir]
//!
//! With an output directory, decision grids are written as `grid-<model>.csv`.

use std::path::{Path, PathBuf};

use kappa_lab::cli::config::{self, SynthConfig};
use kappa_lab::cli::experiments::run_synth;
use kappa_lab::{csv_out, Result};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = args.next().map(PathBuf::from);
    let cfg: SynthConfig =
        config::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/synth.toml"))?;
    let report = run_synth(&cfg, seed)?;
    for i in report.dataset.corrupted_indices() {
        let p = report.dataset.features().row(i);
        println!("flipped point {i} at ({:.3}, {:.3})", p[0], p[1]);
    }
    for m in &report.models {
        println!(
            "{:6} flipped-label agreement {:.3}  train acc correct/incorrect {:.2}/{:.2}",
            m.name,
            m.mean_agreement(),
            m.final_metrics.train_acc_correct.unwrap_or(f64::NAN),
            m.final_metrics.train_acc_incorrect.unwrap_or(f64::NAN),
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).map_err(|e| kappa_lab::Error::io(dir, e))?;
            csv_out::write_grid(&dir.join(format!("grid-{}.csv", m.name)), &m.grid)?;
        }
    }
    Ok(())
}
