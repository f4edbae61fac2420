//! ℓ∞ PGD and the geometry value κ on a model trained on the synthetic
//! two-class square.
//!
//!     cargo run --release --example pgd_kappa

use kappa_lab::attack::{geometry_values, pgd_attack_batch};
use kappa_lab::data::synth_binary;
use kappa_lab::training::train;
use kappa_lab::{AttackConfig, Model, OptimizerSpec, Result, TrainConfig};

fn main() -> Result<()> {
    let ds = synth_binary(200, 0, 1)?;
    let mut model = Model::mlp(&[2, 32, 32, 2], 1)?;
    train(
        &mut model,
        &ds,
        &TrainConfig::standard(300, 50, OptimizerSpec::adam(1e-2)).with_seed(1),
        None,
    )?;

    let attack = AttackConfig::new(0.1, 0.01, 20);
    let ids: Vec<usize> = (0..ds.len()).collect();
    let adv = pgd_attack_batch(&model, ds.features(), ds.observed_labels(), &ids, &attack)?;
    let dist = adv
        .data()
        .iter()
        .zip(ds.features().data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let natural = accuracy(&model.predict(ds.features())?, ds.true_labels());
    let robust = accuracy(&model.predict(&adv)?, ds.true_labels());
    println!("max |x_adv - x|_inf = {dist:.4} (eps {})", attack.epsilon);
    println!("accuracy natural {natural:.3}, under PGD-20 {robust:.3}");

    let kappa = geometry_values(&model, ds.features(), ds.observed_labels(), &ids, &attack)?;
    let mut counts = vec![0usize; attack.max_steps + 1];
    for k in &kappa {
        counts[k.kappa] += 1;
    }
    println!("kappa histogram (last bucket includes never-flipped samples):");
    for (k, c) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
        println!("  kappa={k:2}: {c}");
    }
    Ok(())
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
