//! Robust annotator: adversarial training that relabels samples whose
//! geometry value is below `K` and whose loss is among the largest of their
//! mini-batch, then uses the trained model to label possibly adversarial
//! unlabeled data with κ as a confidence score.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig};
use crate::data::NoisyDataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng;
use crate::tensor::Tensor;
use crate::training::{self, EpochMetrics, TrainConfig, TrainHooks, TrainMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorConfig {
    /// Adversarial training configuration the annotator runs on.
    pub base: TrainConfig,
    /// Epochs of plain adversarial training before selection starts.
    pub warmup_epochs: usize,
    /// Geometry threshold `K`: only samples with κ < K are relabel candidates.
    pub geometry_threshold: usize,
    /// Fraction of each mini-batch (by largest loss) eligible for relabeling.
    pub loss_fraction: f64,
}

impl AnnotatorConfig {
    /// `K = 2`, top 20% losses, warmup over the first 40% of epochs.
    pub fn with_defaults(base: TrainConfig) -> Self {
        let warmup_epochs = base.epochs * 2 / 5;
        AnnotatorConfig {
            base,
            warmup_epochs,
            geometry_threshold: 2,
            loss_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.base.mode != TrainMode::Adversarial {
            return Err(Error::config(
                "base.mode",
                "the annotator trains adversarially",
            ));
        }
        if self.base.epochs > 0 && self.warmup_epochs >= self.base.epochs {
            return Err(Error::config("warmup_epochs", "must be below base.epochs"));
        }
        if !(self.loss_fraction > 0.0 && self.loss_fraction < 1.0) {
            return Err(Error::config("loss_fraction", "must be in (0, 1)"));
        }
        Ok(())
    }

    /// Attack used to measure κ during selection: the training attack's
    /// budget without the random start.
    pub fn kappa_attack(&self) -> Option<AttackConfig> {
        self.base
            .attack
            .clone()
            .map(AttackConfig::without_random_start)
    }
}

/// Loss threshold `L` for a batch: the `(k+1)`-th largest loss with
/// `k = ceil(fraction · m)`, or `-inf` when `k = m`. Exactly the `k`
/// largest losses exceed `L` when losses are distinct; with ties fewer may.
pub fn select_threshold_l(batch_losses: &[f64], fraction: f64) -> Result<f64> {
    if batch_losses.is_empty() {
        return Err(Error::Undefined("loss threshold of an empty batch".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config("loss_fraction", "must be in (0, 1)"));
    }
    let m = batch_losses.len();
    let k = ((fraction * m as f64 - 1e-9).ceil() as usize).clamp(1, m);
    if k == m {
        return Ok(f64::NEG_INFINITY);
    }
    let mut sorted = batch_losses.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[k])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabelEvent {
    pub epoch: usize,
    pub batch: usize,
    pub index: usize,
    pub old_label: usize,
    pub new_label: usize,
    pub kappa: usize,
    pub loss: f64,
    /// The loss threshold in force for this event's batch.
    pub threshold: f64,
}

struct Relabeler<'a> {
    cfg: &'a AnnotatorConfig,
    kappa_cfg: AttackConfig,
    log: Vec<RelabelEvent>,
}

impl TrainHooks for Relabeler<'_> {
    fn before_update(
        &mut self,
        epoch: usize,
        batch: usize,
        model: &Model,
        ids: &[usize],
        x: &Tensor,
        labels: &mut [usize],
    ) -> Result<()> {
        if epoch < self.cfg.warmup_epochs || self.cfg.geometry_threshold == 0 {
            return Ok(());
        }
        let kappas = attack::geometry_values(model, x, labels, ids, &self.kappa_cfg)?;
        let (losses, pred) = model.losses_and_predictions(x, labels)?;
        let threshold = select_threshold_l(&losses, self.cfg.loss_fraction)?;
        for i in 0..ids.len() {
            let kappa = kappas[i].kappa;
            if kappa < self.cfg.geometry_threshold && losses[i] > threshold && pred[i] != labels[i]
            {
                self.log.push(RelabelEvent {
                    epoch: epoch + 1,
                    batch,
                    index: ids[i],
                    old_label: labels[i],
                    new_label: pred[i],
                    kappa,
                    loss: losses[i],
                    threshold,
                });
                labels[i] = pred[i];
            }
        }
        Ok(())
    }
}

/// Trains the robust annotator. Before `warmup_epochs` this is plain
/// adversarial training; afterwards each mini-batch's selected samples get
/// their working label replaced by the model's natural prediction before
/// adversarial examples are generated. Corrections persist across epochs.
pub fn robust_annotator_train(
    model: &Model,
    ds: &NoisyDataset,
    cfg: &AnnotatorConfig,
    test: Option<&NoisyDataset>,
) -> Result<(Model, Vec<EpochMetrics>, Vec<RelabelEvent>)> {
    cfg.validate()?;
    let mut hooks = Relabeler {
        cfg,
        kappa_cfg: cfg.kappa_attack().expect("validated"),
        log: Vec::new(),
    };
    let mut trained = model.clone();
    let history = training::train_with_hooks(&mut trained, ds, &cfg.base, test, &mut hooks)?;
    Ok((trained, history, hooks.log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotateOptions {
    /// Fraction of the unlabeled points replaced by adversarial versions.
    pub adversarial_ratio: f64,
    /// Attack that perturbs the selected points.
    pub attacker: AttackConfig,
    /// Attack that measures κ against the assigned label.
    pub kappa: AttackConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub sample_index: usize,
    pub assigned_label: usize,
    pub kappa: usize,
    pub confidence_bin: usize,
    pub perturbed: bool,
    /// Whether the assignment matches the supplied true label.
    pub correct: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub results: Vec<AnnotationResult>,
    pub accuracy: Option<f64>,
}

/// Labels `features` with `model`. A seeded `adversarial_ratio` share of the
/// points is first replaced by PGD outputs against the annotating model,
/// attacking `true_labels` when supplied and the model's own predictions
/// otherwise.
pub fn annotate(
    model: &Model,
    features: &Tensor,
    opts: &AnnotateOptions,
    true_labels: Option<&[usize]>,
) -> Result<Annotation> {
    if !(0.0..=1.0).contains(&opts.adversarial_ratio) {
        return Err(Error::config("adversarial_ratio", "must be in [0, 1]"));
    }
    opts.attacker.validate()?;
    opts.kappa.validate()?;
    let features = features.as_matrix();
    let u = features.rows();
    if let Some(t) = true_labels {
        if t.len() != u {
            return Err(Error::dim("true_labels", u, t.len()));
        }
    }
    let attack_labels = match true_labels {
        Some(t) => t.to_vec(),
        None => model.predict(&features)?,
    };
    let n_perturb = ((opts.adversarial_ratio * u as f64).round() as usize).min(u);
    let mut perturbed = vec![false; u];
    let mut chosen = index::sample(
        &mut rng::rng_for(opts.seed, "annotate-perturb", 0),
        u,
        n_perturb,
    )
    .into_vec();
    chosen.sort_unstable();
    for &i in &chosen {
        perturbed[i] = true;
    }

    let mut inputs = features.clone();
    if !chosen.is_empty() {
        let x = features.select_rows(&chosen);
        let labels: Vec<usize> = chosen.iter().map(|&i| attack_labels[i]).collect();
        let adv = attack::pgd_attack_batch(model, &x, &labels, &chosen, &opts.attacker)?;
        let d = inputs.cols();
        let data = inputs.data_mut();
        for (r, &i) in chosen.iter().enumerate() {
            data[i * d..(i + 1) * d].copy_from_slice(adv.row(r));
        }
    }

    let assigned = model.predict(&inputs)?;
    let ids: Vec<usize> = (0..u).collect();
    let kappas = attack::geometry_values(model, &inputs, &assigned, &ids, &opts.kappa)?;
    let results: Vec<AnnotationResult> = (0..u)
        .map(|i| AnnotationResult {
            sample_index: i,
            assigned_label: assigned[i],
            kappa: kappas[i].kappa,
            confidence_bin: kappas[i].kappa,
            perturbed: perturbed[i],
            correct: true_labels.map(|t| t[i] == assigned[i]),
        })
        .collect();
    let accuracy = true_labels.map(|_| {
        results.iter().filter(|r| r.correct == Some(true)).count() as f64 / u.max(1) as f64
    });
    Ok(Annotation { results, accuracy })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBin {
    pub kappa: usize,
    pub count: usize,
    /// `None` for empty bins.
    pub accuracy: Option<f64>,
}

/// One bin per κ value in `0..=max_steps` with the fraction of correct
/// assignments and the sample count.
pub fn confidence_bins(
    results: &[AnnotationResult],
    true_labels: &[usize],
    max_steps: usize,
) -> Result<Vec<ConfidenceBin>> {
    if results.len() != true_labels.len() {
        return Err(Error::dim("true_labels", results.len(), true_labels.len()));
    }
    let mut counts = vec![(0usize, 0usize); max_steps + 1];
    for (r, &t) in results.iter().zip(true_labels) {
        if r.kappa > max_steps {
            return Err(Error::Contract(format!(
                "kappa {} exceeds max_steps {max_steps}",
                r.kappa
            )));
        }
        counts[r.kappa].0 += 1;
        if r.assigned_label == t {
            counts[r.kappa].1 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(kappa, (count, hits))| ConfidenceBin {
            kappa,
            count,
            accuracy: (count > 0).then(|| hits as f64 / count as f64),
        })
        .collect())
}

/// Spearman correlation between κ bin and bin accuracy over bins holding at
/// least `min_count` samples.
pub fn confidence_trend(bins: &[ConfidenceBin], min_count: usize) -> Option<f64> {
    let kept: Vec<&ConfidenceBin> = bins
        .iter()
        .filter(|b| b.count >= min_count && b.accuracy.is_some())
        .collect();
    let xs: Vec<f64> = kept.iter().map(|b| b.kappa as f64).collect();
    let ys: Vec<f64> = kept.iter().map(|b| b.accuracy.unwrap_or(0.0)).collect();
    crate::analysis::spearman(&xs, &ys)
}
