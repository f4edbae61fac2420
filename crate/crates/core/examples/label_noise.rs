//! Symmetric and pair-flipping label noise: empirical transition matrices.
//!
//!     cargo run --release --example label_noise

use kappa_lab::data::inject_noise;
use kappa_lab::{NoiseSpec, NoisyDataset, Result, Tensor};

fn main() -> Result<()> {
    let n = 20_000;
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let clean = NoisyDataset::clean(Tensor::zeros(&[n, 1]), labels, 10)?;
    for spec in [NoiseSpec::symmetric(0.2, 3), NoiseSpec::pair(0.4, 3)] {
        let noisy = inject_noise(&clean, &spec)?;
        println!(
            "{:?} rate {}: {} of {n} labels flipped",
            spec.kind,
            spec.rate,
            noisy.corrupted_count()
        );
        let mut t = [[0usize; 10]; 10];
        for (y, o) in noisy.true_labels().iter().zip(noisy.observed_labels()) {
            t[*y][*o] += 1;
        }
        for (y, row) in t.iter().enumerate() {
            let total: usize = row.iter().sum();
            let cells: Vec<String> = row
                .iter()
                .map(|&c| format!("{:.2}", c as f64 / total as f64))
                .collect();
            println!("  {y}: {}", cells.join(" "));
        }
    }
    Ok(())
}
