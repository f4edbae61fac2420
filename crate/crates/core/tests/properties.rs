mod common;

use common::{Case, OPS};
use kappa_lab::analysis::{separability_auroc, Orientation};
use kappa_lab::attack::{geometry_values, pgd_attack_batch};
use kappa_lab::data::inject_noise;
use kappa_lab::model::Model;
use kappa_lab::{AttackConfig, NoiseSpec, NoisyDataset, Tensor};
use proptest::prelude::*;

fn random_model(seed: u64, d: usize, hidden: usize, c: usize) -> Model {
    Model::mlp(&[d, hidden, c], seed).unwrap()
}

fn unit_points(n: usize, d: usize, raw: &[f64]) -> Tensor {
    let data = (0..n * d)
        .map(|i| {
            let v = raw[i % raw.len()];
            // pile some coordinates exactly onto the box faces
            if v < 0.1 {
                0.0
            } else if v > 0.9 {
                1.0
            } else {
                v
            }
        })
        .collect();
    Tensor::matrix(n, d, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        for op in OPS {
            let err = Case::random(op, seed).max_relative_error(1e-5).unwrap();
            prop_assert!(err < 1e-4, "{op:?}: relative error {err}");
        }
    }

    #[test]
    fn pgd_stays_in_ball_and_box(
        seed in any::<u64>(),
        eps in 0.001f64..0.5,
        alpha_frac in 0.05f64..1.5,
        steps in 1usize..8,
        random_start in any::<bool>(),
        raw in prop::collection::vec(0.0f64..1.0, 12),
    ) {
        let model = random_model(seed, 6, 8, 3);
        let x = unit_points(4, 6, &raw);
        let mut cfg = AttackConfig::new(eps, eps * alpha_frac, steps);
        if random_start {
            cfg = cfg.with_random_start(seed);
        }
        let adv = pgd_attack_batch(&model, &x, &[0, 1, 2, 0], &[0, 1, 2, 3], &cfg).unwrap();
        for (a, b) in adv.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= eps);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn single_step_moves_alpha_where_unclamped(
        seed in any::<u64>(),
        raw in prop::collection::vec(0.0f64..1.0, 12),
    ) {
        let model = random_model(seed, 6, 8, 3);
        let x = unit_points(2, 6, &raw);
        let cfg = AttackConfig::new(0.1, 0.03, 1);
        let labels = [1, 2];
        let adv = pgd_attack_batch(&model, &x, &labels, &[0, 1], &cfg).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            let g = model.input_gradient(&x.select_rows(&[i]), y).unwrap();
            for j in 0..6 {
                let (x0, xa, gj) = (x.row(i)[j], adv.row(i)[j], g.data()[j]);
                let target = x0 + cfg.alpha * gj.signum();
                if gj != 0.0 && (0.0..=1.0).contains(&target) {
                    prop_assert!(((xa - x0).abs() - cfg.alpha).abs() < 1e-12);
                    prop_assert_eq!((xa - x0).signum(), gj.signum());
                }
            }
        }
    }

    #[test]
    fn kappa_prefix_consistent(seed in any::<u64>(), raw in prop::collection::vec(0.0f64..1.0, 40)) {
        let model = random_model(seed, 5, 6, 4);
        let x = unit_points(8, 5, &raw);
        let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
        let ids: Vec<usize> = (0..8).collect();
        let mut short = AttackConfig::new(0.3, 0.02, 5);
        if seed % 2 == 0 {
            short = short.with_random_start(seed);
        }
        let long = short.clone().with_steps(20);
        let a = geometry_values(&model, &x, &labels, &ids, &short).unwrap();
        let b = geometry_values(&model, &x, &labels, &ids, &long).unwrap();
        let pred = model.predict(&x).unwrap();
        for ((ka, kb), (p, y)) in a.iter().zip(&b).zip(pred.iter().zip(&labels)) {
            if !ka.saturated {
                prop_assert_eq!(ka.kappa, kb.kappa);
            }
            // with a random start κ = 0 refers to the start point instead
            if !short.random_start {
                prop_assert_eq!(ka.kappa == 0, p != y);
            }
        }
    }

    #[test]
    fn auroc_invariant_under_monotone_maps(
        scores in prop::collection::vec(-5.0f64..5.0, 2..60),
        flags in prop::collection::vec(any::<bool>(), 60),
    ) {
        let corrupted = &flags[..scores.len()];
        prop_assume!(corrupted.iter().any(|&c| c) && corrupted.iter().any(|&c| !c));
        for orientation in [Orientation::LowScoreMeansCorrupted, Orientation::HighScoreMeansCorrupted] {
            let base = separability_auroc(&scores, corrupted, orientation).unwrap();
            for f in [|v: f64| v.exp(), |v: f64| v * v * v + v, |v: f64| 3.0 * v - 7.0] {
                let mapped: Vec<f64> = scores.iter().map(|&v| f(v)).collect();
                prop_assert_eq!(separability_auroc(&mapped, corrupted, orientation).unwrap(), base);
            }
        }
    }
}

#[test]
fn logits_do_not_depend_on_batch_composition() {
    let model = Model::mlp(&[7, 16, 16, 5], 3).unwrap();
    let raw: Vec<f64> = (0..40 * 7)
        .map(|i| ((i * 37 % 101) as f64) / 100.0)
        .collect();
    let x = Tensor::matrix(40, 7, raw).unwrap();
    let full = model.logits(&x).unwrap();
    for i in [0, 13, 39] {
        let one = model.logits(&x.select_rows(&[i])).unwrap();
        assert_eq!(one.row(0), full.row(i));
    }
    let idx: Vec<usize> = (0..40).rev().step_by(3).collect();
    let part = model.logits(&x.select_rows(&idx)).unwrap();
    for (r, &i) in idx.iter().enumerate() {
        assert_eq!(part.row(r), full.row(i));
    }
}

#[test]
fn pgd_does_not_depend_on_batch_composition() {
    let model = Model::mlp(&[4, 8, 3], 9).unwrap();
    let x = Tensor::matrix(6, 4, (0..24).map(|i| (i as f64 * 0.041) % 1.0).collect()).unwrap();
    let labels = [0, 1, 2, 0, 1, 2];
    let ids = [10, 11, 12, 13, 14, 15];
    let cfg = AttackConfig::new(0.1, 0.02, 5).with_random_start(4);
    let all = pgd_attack_batch(&model, &x, &labels, &ids, &cfg).unwrap();
    let one = pgd_attack_batch(
        &model,
        &x.select_rows(&[4]),
        &labels[4..5],
        &ids[4..5],
        &cfg,
    )
    .unwrap();
    assert_eq!(one.row(0), all.row(4));
}

#[test]
fn pair_noise_targets_next_class() {
    let labels: Vec<usize> = (0..5000).map(|i| i % 10).collect();
    let clean = NoisyDataset::clean(Tensor::zeros(&[5000, 1]), labels, 10).unwrap();
    let noisy = inject_noise(&clean, &NoiseSpec::pair(0.4, 11)).unwrap();
    for i in 0..noisy.len() {
        if noisy.corrupted()[i] {
            assert_eq!(
                noisy.observed_labels()[i],
                (noisy.true_labels()[i] + 1) % 10
            );
        }
    }
}
