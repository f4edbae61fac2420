//! The robust annotator against three baselines, labeling MNIST test images
//! of which a growing fraction has been adversarially perturbed.
//!
//!     cargo run --release --example robust_annotator -- [seed]
//!
//! Trains four models (about two and a half minutes on one core).

use std::path::Path;

use kappa_lab::cli::config::{self, AnnotateRunConfig};
use kappa_lab::cli::experiments::{run_annotate, ANNOTATORS};
use kappa_lab::Result;

fn main() -> Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let cfg: AnnotateRunConfig =
        config::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/annotate.toml"))?;
    let report = run_annotate(&cfg, seed)?;
    let ds = &report.train_set;
    let fixed = report
        .relabel_log
        .iter()
        .filter(|e| e.new_label == ds.true_labels()[e.index])
        .count();
    println!(
        "{} relabel events, {fixed} to the true label",
        report.relabel_log.len()
    );

    print!("{:16}", "ratio");
    for r in &cfg.ratios {
        print!(" {r:6.1}");
    }
    println!();
    for name in ANNOTATORS {
        print!("{name:16}");
        for &r in &cfg.ratios {
            print!(" {:6.3}", report.accuracy_of(name, r).unwrap_or(f64::NAN));
        }
        println!();
    }
    if let Some(bins) = report.confidence_of("robust-noisy") {
        println!("robust annotator, natural inputs: accuracy by kappa");
        for b in bins.iter().filter(|b| b.count > 0) {
            println!(
                "  kappa {:2}: {:4} samples, accuracy {:.3}",
                b.kappa,
                b.count,
                b.accuracy.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
