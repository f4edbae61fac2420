//! Measurements on trained models: neighborhood entropy, per-sample κ/loss
//! tables, AUROC separability, typical/rare ranking and density histograms.

use std::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig};
use crate::data::{minmax_normalize, NoisyDataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDirection {
    /// Uniform samples from the ε-ball clipped to `[0,1]^d`.
    Random,
    /// One-step PGD variants from uniformly random starts in the ε-ball.
    Adversarial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyProbe {
    pub direction: ProbeDirection,
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl EntropyProbe {
    pub fn random(epsilon: f64, seed: u64) -> Self {
        EntropyProbe {
            direction: ProbeDirection::Random,
            epsilon,
            n_samples: 100,
            seed,
        }
    }

    pub fn adversarial(epsilon: f64, seed: u64) -> Self {
        EntropyProbe {
            direction: ProbeDirection::Adversarial,
            ..EntropyProbe::random(epsilon, seed)
        }
    }
}

/// `n` uniform draws from the ε-ball around `center`, clipped to `[0,1]`.
pub fn ball_samples(center: &[f64], epsilon: f64, n: usize, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let mut data = Vec::with_capacity(n * center.len());
    for _ in 0..n {
        data.extend(
            center.iter().map(|&c| {
                crate::attack::clamp_into(c + r.gen_range(-epsilon..=epsilon), c, epsilon)
            }),
        );
    }
    Tensor::from_parts(vec![n, center.len()], data)
}

fn neighborhood(
    model: &Model,
    point: &[f64],
    label: usize,
    probe: &EntropyProbe,
    point_index: usize,
) -> Result<Tensor> {
    let seed = rng::derive_seed(probe.seed, "entropy-probe", point_index as u64);
    match probe.direction {
        ProbeDirection::Random => Ok(ball_samples(point, probe.epsilon, probe.n_samples, seed)),
        ProbeDirection::Adversarial => {
            let copies: Vec<f64> = (0..probe.n_samples).flat_map(|_| point.to_vec()).collect();
            let x = Tensor::from_parts(vec![probe.n_samples, point.len()], copies);
            let cfg = AttackConfig::new(probe.epsilon, probe.epsilon, 1).with_random_start(seed);
            let ids: Vec<usize> = (0..probe.n_samples).collect();
            attack::pgd_attack_batch(model, &x, &vec![label; probe.n_samples], &ids, &cfg)
        }
    }
}

/// Mean prediction entropy (nats) over `n_samples` neighbors of each point:
/// `-(1/(k·n)) Σ_x Σ_y p(y|x) ln p(y|x)`. `labels` are the labels the
/// adversarial probe attacks; the random probe ignores them.
pub fn neighborhood_entropy(
    model: &Model,
    points: &Tensor,
    labels: &[usize],
    probe: &EntropyProbe,
) -> Result<f64> {
    let points = points.as_matrix();
    if points.rows() == 0 || probe.n_samples == 0 {
        return Err(Error::config(
            "probe",
            "needs at least one point and one sample",
        ));
    }
    if labels.len() != points.rows() {
        return Err(Error::dim("labels", points.rows(), labels.len()));
    }
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let nb = neighborhood(model, points.row(i), label, probe, i)?;
        let p = model.probabilities(&nb)?;
        total += p
            .data()
            .iter()
            .filter(|&&q| q > 0.0)
            .map(|&q| -q * q.ln())
            .sum::<f64>();
    }
    let h = total / (points.rows() * probe.n_samples) as f64;
    Ok(h.max(0.0))
}

/// Fraction of `n` uniform ε-ball neighbors of each point predicted as that
/// point's label, averaged over points.
pub fn neighborhood_agreement(
    model: &Model,
    points: &Tensor,
    labels: &[usize],
    epsilon: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let points = points.as_matrix();
    if points.rows() == 0 || n == 0 {
        return Err(Error::config(
            "neighborhood",
            "needs at least one point and one sample",
        ));
    }
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let nb = ball_samples(
            points.row(i),
            epsilon,
            n,
            rng::derive_seed(seed, "agreement", i as u64),
        );
        let pred = model.predict(&nb)?;
        total += pred.iter().filter(|&&p| p == label).count() as f64 / n as f64;
    }
    Ok(total / points.rows() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_index: usize,
    pub observed_label: usize,
    pub true_label: usize,
    pub corrupted: bool,
    pub loss: f64,
    pub loss_norm: f64,
    pub kappa: usize,
    pub kappa_norm: f64,
    pub predicted: usize,
}

/// Natural loss against the observed label, κ, prediction and the
/// min-max normalized loss and κ columns for every sample.
pub fn kappa_loss_table(
    model: &Model,
    ds: &NoisyDataset,
    cfg: &AttackConfig,
) -> Result<Vec<SampleRecord>> {
    let labels = ds.observed_labels();
    let (losses, pred) = model.losses_and_predictions(ds.features(), labels)?;
    let ids: Vec<usize> = (0..ds.len()).collect();
    let kappas = attack::geometry_values(model, ds.features(), labels, &ids, cfg)?;
    let kv: Vec<f64> = kappas.iter().map(|k| k.kappa as f64).collect();
    let loss_norm = minmax_normalize(&losses)?;
    let kappa_norm = minmax_normalize(&kv)?;
    Ok((0..ds.len())
        .map(|i| SampleRecord {
            sample_index: i,
            observed_label: labels[i],
            true_label: ds.true_labels()[i],
            corrupted: ds.corrupted()[i],
            loss: losses[i],
            loss_norm: loss_norm[i],
            kappa: kappas[i].kappa,
            kappa_norm: kappa_norm[i],
            predicted: pred[i],
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LowScoreMeansCorrupted,
    HighScoreMeansCorrupted,
}

/// Probability that a random corrupted sample's oriented score exceeds a
/// random clean sample's, ties counted half (Mann–Whitney U / (n₁·n₀)).
pub fn separability_auroc(
    scores: &[f64],
    is_corrupted: &[bool],
    orientation: Orientation,
) -> Result<f64> {
    if scores.len() != is_corrupted.len() {
        return Err(Error::dim("is_corrupted", scores.len(), is_corrupted.len()));
    }
    let n_pos = is_corrupted.iter().filter(|&&c| c).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined(
            "AUROC needs both corrupted and clean samples".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Undefined("AUROC of NaN scores".into()));
    }
    let oriented: Vec<f64> = match orientation {
        Orientation::HighScoreMeansCorrupted => scores.to_vec(),
        Orientation::LowScoreMeansCorrupted => scores.iter().map(|s| -s).collect(),
    };
    let mut order: Vec<usize> = (0..oriented.len()).collect();
    order.sort_by(|&a, &b| oriented[a].total_cmp(&oriented[b]));
    // sum of mid-ranks of the corrupted samples
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && oriented[order[j + 1]] == oriented[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if is_corrupted[k] {
                rank_sum += mid_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Sample indices from most typical to most rare: κ descending, then loss
/// ascending, then index.
pub fn rank_typical_rare(table: &[SampleRecord]) -> Vec<usize> {
    let mut rows: Vec<&SampleRecord> = table.iter().collect();
    rows.sort_by(|a, b| {
        b.kappa
            .cmp(&a.kappa)
            .then(a.loss.total_cmp(&b.loss))
            .then(a.sample_index.cmp(&b.sample_index))
    });
    rows.into_iter().map(|r| r.sample_index).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count_correct: usize,
    pub count_incorrect: usize,
}

/// Uniform-bin histogram over `[0,1]`, counted separately for clean and
/// corrupted samples. A value of exactly 1 lands in the last bin.
pub fn histogram(values: &[f64], corrupted: &[bool], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::config("bins", "must be positive"));
    }
    if values.len() != corrupted.len() {
        return Err(Error::dim("corrupted", values.len(), corrupted.len()));
    }
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            bin_low: b as f64 / bins as f64,
            bin_high: (b + 1) as f64 / bins as f64,
            count_correct: 0,
            count_incorrect: 0,
        })
        .collect();
    for (&v, &c) in values.iter().zip(corrupted) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Contract(format!(
                "histogram value {v} outside [0, 1]"
            )));
        }
        let b = ((v * bins as f64) as usize).min(bins - 1);
        if c {
            out[b].count_incorrect += 1;
        } else {
            out[b].count_correct += 1;
        }
    }
    Ok(out)
}

/// Default bin count for density exports.
pub const DENSITY_BINS: usize = 64;

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with mid-ranks for ties; `None` when either
/// side is constant or fewer than two pairs are given.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// One cell of a prediction grid over the unit square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub x: f64,
    pub y: f64,
    pub predicted: usize,
    pub confidence: f64,
}

/// Predictions at cell centers of a `resolution x resolution` grid over
/// `[0,1]^2`, rows ordered by y then x.
pub fn decision_grid(model: &Model, resolution: usize) -> Result<Vec<GridCell>> {
    if model.input_dim() != 2 {
        return Err(Error::dim("model.input", 2, model.input_dim()));
    }
    let step = 1.0 / resolution as f64;
    let mut coords = Vec::with_capacity(resolution * resolution * 2);
    for j in 0..resolution {
        for i in 0..resolution {
            coords.extend([(i as f64 + 0.5) * step, (j as f64 + 0.5) * step]);
        }
    }
    let x = Tensor::from_parts(vec![resolution * resolution, 2], coords);
    let p = model.probabilities(&x)?;
    Ok((0..x.rows())
        .map(|r| {
            let probs = p.row(r);
            let predicted = crate::linalg::argmax(probs);
            GridCell {
                x: x.row(r)[0],
                y: x.row(r)[1],
                predicted,
                confidence: probs[predicted],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Linear;

    fn record(i: usize, kappa: usize, loss: f64) -> SampleRecord {
        SampleRecord {
            sample_index: i,
            observed_label: 0,
            true_label: 0,
            corrupted: false,
            loss,
            loss_norm: 0.0,
            kappa,
            kappa_norm: 0.0,
            predicted: 0,
        }
    }

    fn constant_model(d: usize, bias: Vec<f64>) -> Model {
        Model::from_layers(vec![Linear {
            weight: Tensor::zeros(&[d, bias.len()]),
            bias: Tensor::vector(bias).unwrap(),
        }])
        .unwrap()
    }

    #[test]
    fn auroc_reference_cases() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let hi = Orientation::HighScoreMeansCorrupted;
        assert_eq!(
            separability_auroc(&s, &[false, false, true, true], hi).unwrap(),
            1.0
        );
        assert_eq!(
            separability_auroc(&s, &[true, false, false, true], hi).unwrap(),
            0.5
        );
        assert_eq!(
            separability_auroc(&s, &[true, false, true, false], hi).unwrap(),
            0.25
        );
        assert_eq!(
            separability_auroc(&[0.3; 5], &[true, false, false, true, false], hi).unwrap(),
            0.5
        );
        assert_eq!(
            separability_auroc(
                &s,
                &[true, true, false, false],
                Orientation::LowScoreMeansCorrupted
            )
            .unwrap(),
            1.0
        );
        assert!(matches!(
            separability_auroc(&s, &[true; 4], hi),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn entropy_of_uniform_and_one_hot_models() {
        let pts = Tensor::new(vec![3, 4], vec![0.5; 12]).unwrap();
        let uniform = constant_model(4, vec![0.0; 10]);
        let h = neighborhood_entropy(&uniform, &pts, &[0, 1, 2], &EntropyProbe::random(0.031, 1))
            .unwrap();
        assert!((h - 10f64.ln()).abs() < 1e-12);
        let one_hot = constant_model(4, vec![1000.0, 0.0, 0.0]);
        let h = neighborhood_entropy(
            &one_hot,
            &pts,
            &[0, 0, 0],
            &EntropyProbe::adversarial(0.031, 1),
        )
        .unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn ranking_rules() {
        let t = vec![record(0, 3, 0.9), record(1, 3, 0.1), record(2, 3, 0.5)];
        assert_eq!(rank_typical_rare(&t), vec![1, 2, 0]);
        let t = vec![record(0, 0, 0.01), record(1, 10, 5.0), record(2, 4, 1.0)];
        assert_eq!(rank_typical_rare(&t), vec![1, 2, 0]);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 1.0, 0.5, 0.999], &[false, true, false, true], 4).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(h[0].count_correct, 1);
        assert_eq!(h[2].count_correct, 1);
        assert_eq!(h[3].count_incorrect, 2);
        assert!(histogram(&[1.5], &[false], 4).is_err());
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
    }

    #[test]
    fn grid_has_one_cell_per_point() {
        let m = Model::mlp(&[2, 4, 2], 0).unwrap();
        let g = decision_grid(&m, 10).unwrap();
        assert_eq!(g.len(), 100);
        assert!(g.iter().all(|c| c.confidence >= 0.5));
    }
}
