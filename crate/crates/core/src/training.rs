//! Standard and adversarial training with metrics split by whether a
//! sample's observed label is correct.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig};
use crate::data::NoisyDataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{LrSchedule, Optimizer, OptimizerSpec};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Minimize the loss on natural inputs.
    Standard,
    /// Minimize the loss on PGD adversarial variants of the inputs.
    Adversarial,
}

/// Optional per-epoch measurements beyond natural accuracy and loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Attack used for robust test accuracy.
    #[serde(default)]
    pub robust: Option<AttackConfig>,
    /// Attack used to measure κ on the training set.
    #[serde(default)]
    pub kappa: Option<AttackConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Training attack; present exactly when `mode` is adversarial.
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl TrainConfig {
    pub fn standard(epochs: usize, batch_size: usize, optimizer: OptimizerSpec) -> Self {
        TrainConfig {
            mode: TrainMode::Standard,
            epochs,
            batch_size,
            optimizer,
            schedule: LrSchedule::constant(),
            attack: None,
            seed: 0,
            eval: EvalConfig::default(),
        }
    }

    pub fn adversarial(
        epochs: usize,
        batch_size: usize,
        optimizer: OptimizerSpec,
        attack: AttackConfig,
    ) -> Self {
        TrainConfig {
            mode: TrainMode::Adversarial,
            attack: Some(attack),
            ..TrainConfig::standard(epochs, batch_size, optimizer)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_eval(mut self, eval: EvalConfig) -> Self {
        self.eval = eval;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        self.optimizer.validate()?;
        self.schedule.validate()?;
        match (self.mode, &self.attack) {
            (TrainMode::Adversarial, Some(a)) => a.validate()?,
            (TrainMode::Adversarial, None) => {
                return Err(Error::config(
                    "attack",
                    "adversarial mode requires an attack",
                ))
            }
            (TrainMode::Standard, Some(_)) => {
                return Err(Error::config("attack", "standard mode takes no attack"))
            }
            (TrainMode::Standard, None) => {}
        }
        for a in [&self.eval.robust, &self.eval.kappa].into_iter().flatten() {
            a.validate()?;
        }
        Ok(())
    }

    /// Training attack for zero-based `epoch`, with its own random-start
    /// stream.
    pub fn epoch_attack(&self, epoch: usize) -> Option<AttackConfig> {
        self.attack.as_ref().map(|a| {
            let seed = rng::derive_seed(a.seed ^ self.seed, "train-attack", epoch as u64);
            a.clone().with_seed(seed)
        })
    }
}

/// Per-epoch measurements. Group accuracies compare predictions on natural
/// training inputs with the observed labels; `None` marks a quantity that
/// was not measured or whose group is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// One-based epoch number.
    pub epoch: usize,
    pub train_acc_correct: Option<f64>,
    pub train_acc_incorrect: Option<f64>,
    pub test_acc_natural: Option<f64>,
    pub test_acc_robust: Option<f64>,
    pub mean_loss_correct: Option<f64>,
    pub mean_loss_incorrect: Option<f64>,
    pub mean_kappa_correct: Option<f64>,
    pub mean_kappa_incorrect: Option<f64>,
}

impl EpochMetrics {
    /// A row with nothing measured.
    pub fn empty(epoch: usize) -> Self {
        EpochMetrics {
            epoch,
            train_acc_correct: None,
            train_acc_incorrect: None,
            test_acc_natural: None,
            test_acc_robust: None,
            mean_loss_correct: None,
            mean_loss_incorrect: None,
            mean_kappa_correct: None,
            mean_kappa_incorrect: None,
        }
    }

    /// `train_acc_correct - train_acc_incorrect` when both groups exist.
    pub fn group_gap(&self) -> Option<f64> {
        Some(self.train_acc_correct? - self.train_acc_incorrect?)
    }
}

/// Accuracy split by the corruption flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub correct: Option<f64>,
    pub incorrect: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub standard_acc: f64,
    pub robust_acc: Option<f64>,
    pub standard_split: GroupSplit,
    pub robust_split: Option<GroupSplit>,
}

/// Callbacks into the training loop.
pub trait TrainHooks {
    /// Runs before adversarial examples are generated for a mini-batch and
    /// may rewrite that batch's working labels.
    #[allow(clippy::too_many_arguments)]
    fn before_update(
        &mut self,
        _epoch: usize,
        _batch: usize,
        _model: &Model,
        _ids: &[usize],
        _x: &Tensor,
        _labels: &mut [usize],
    ) -> Result<()> {
        Ok(())
    }

    fn epoch_end(&mut self, _epoch: usize, _model: &Model, _metrics: &EpochMetrics) -> Result<()> {
        Ok(())
    }
}

/// No-op hooks.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

fn mean_where(values: &[f64], mask: &[bool], want: bool) -> Option<f64> {
    let (sum, count) = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

fn split(hits: &[f64], corrupted: &[bool]) -> GroupSplit {
    GroupSplit {
        correct: mean_where(hits, corrupted, false),
        incorrect: mean_where(hits, corrupted, true),
    }
}

/// Standard accuracy and, when `attack` is given, robust accuracy on the
/// per-sample PGD outputs, both against observed labels and split by the
/// corruption flag.
pub fn evaluate(
    model: &Model,
    ds: &NoisyDataset,
    attack: Option<&AttackConfig>,
) -> Result<Evaluation> {
    let labels = ds.observed_labels();
    let pred = model.predict(ds.features())?;
    let hits: Vec<f64> = pred
        .iter()
        .zip(labels)
        .map(|(a, b)| f64::from(u8::from(a == b)))
        .collect();
    let (robust_acc, robust_split) = match attack {
        Some(cfg) => {
            let ids: Vec<usize> = (0..ds.len()).collect();
            let adv = attack::pgd_attack_batch(model, ds.features(), labels, &ids, cfg)?;
            let rpred = model.predict(&adv)?;
            let rhits: Vec<f64> = rpred
                .iter()
                .zip(labels)
                .map(|(a, b)| f64::from(u8::from(a == b)))
                .collect();
            (
                Some(accuracy(&rpred, labels)),
                Some(split(&rhits, ds.corrupted())),
            )
        }
        None => (None, None),
    };
    Ok(Evaluation {
        standard_acc: accuracy(&pred, labels),
        robust_acc,
        standard_split: split(&hits, ds.corrupted()),
        robust_split,
    })
}

fn epoch_metrics(
    epoch: usize,
    model: &Model,
    ds: &NoisyDataset,
    cfg: &TrainConfig,
    test: Option<&NoisyDataset>,
) -> Result<EpochMetrics> {
    let labels = ds.observed_labels();
    let (losses, pred) = model.losses_and_predictions(ds.features(), labels)?;
    let hits: Vec<f64> = pred
        .iter()
        .zip(labels)
        .map(|(a, b)| f64::from(u8::from(a == b)))
        .collect();
    let corrupted = ds.corrupted();

    let (mean_kappa_correct, mean_kappa_incorrect) = match &cfg.eval.kappa {
        Some(kcfg) => {
            let ids: Vec<usize> = (0..ds.len()).collect();
            let ks = attack::geometry_values(model, ds.features(), labels, &ids, kcfg)?;
            let kv: Vec<f64> = ks.iter().map(|k| k.kappa as f64).collect();
            (
                mean_where(&kv, corrupted, false),
                mean_where(&kv, corrupted, true),
            )
        }
        None => (None, None),
    };

    let (test_acc_natural, test_acc_robust) = match test {
        Some(t) => {
            let eval = evaluate(model, t, cfg.eval.robust.as_ref())?;
            (Some(eval.standard_acc), eval.robust_acc)
        }
        None => (None, None),
    };

    Ok(EpochMetrics {
        epoch: epoch + 1,
        train_acc_correct: mean_where(&hits, corrupted, false),
        train_acc_incorrect: mean_where(&hits, corrupted, true),
        test_acc_natural,
        test_acc_robust,
        mean_loss_correct: mean_where(&losses, corrupted, false),
        mean_loss_incorrect: mean_where(&losses, corrupted, true),
        mean_kappa_correct,
        mean_kappa_incorrect,
    })
}

/// Mini-batches of zero-based `epoch`: a seeded shuffle cut into chunks,
/// each sorted ascending so reductions run in sample-index order.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, "shuffle", epoch as u64));
    order
        .chunks(batch_size.max(1))
        .map(|c| {
            let mut b = c.to_vec();
            b.sort_unstable();
            b
        })
        .collect()
}

fn check_shapes(model: &Model, ds: &NoisyDataset) -> Result<()> {
    if model.input_dim() != ds.feature_dim() {
        return Err(Error::dim("dataset", model.input_dim(), ds.feature_dim()));
    }
    if model.class_count() != ds.class_count() {
        return Err(Error::dim(
            "dataset.classes",
            model.class_count(),
            ds.class_count(),
        ));
    }
    Ok(())
}

/// Trains `model` in place and returns one [`EpochMetrics`] per epoch.
pub fn train(
    model: &mut Model,
    ds: &NoisyDataset,
    cfg: &TrainConfig,
    test: Option<&NoisyDataset>,
) -> Result<Vec<EpochMetrics>> {
    train_with_hooks(model, ds, cfg, test, &mut NoHooks)
}

pub fn train_with_hooks(
    model: &mut Model,
    ds: &NoisyDataset,
    cfg: &TrainConfig,
    test: Option<&NoisyDataset>,
    hooks: &mut dyn TrainHooks,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    check_shapes(model, ds)?;
    if let Some(t) = test {
        check_shapes(model, t)?;
    }
    let mut optimizer = Optimizer::new(cfg.optimizer.clone(), model)?;
    let mut working = ds.observed_labels().to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        optimizer.set_learning_rate(
            cfg.schedule
                .learning_rate_at(cfg.optimizer.learning_rate, epoch),
        );
        let attack_cfg = cfg.epoch_attack(epoch);
        for (b, ids) in epoch_batches(ds.len(), cfg.batch_size, cfg.seed, epoch)
            .iter()
            .enumerate()
        {
            let x = ds.features().select_rows(ids);
            let mut labels: Vec<usize> = ids.iter().map(|&i| working[i]).collect();
            hooks.before_update(epoch, b, model, ids, &x, &mut labels)?;
            for (&i, &l) in ids.iter().zip(&labels) {
                working[i] = l;
            }
            let inputs = match &attack_cfg {
                Some(a) => attack::pgd_attack_batch(model, &x, &labels, ids, a)?,
                None => x,
            };
            let (loss, grads) = model.loss_and_gradients(&inputs, &labels)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            optimizer.step(model, &grads)?;
        }
        let metrics = epoch_metrics(epoch, model, ds, cfg, test)?;
        hooks.epoch_end(epoch, model, &metrics)?;
        history.push(metrics);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{self, NoiseSpec};

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let ds = data::synth_binary(23, 2, 0).unwrap();
        let mut m = Model::mlp(&[2, 8, 2], 0).unwrap();
        let before = m.clone();
        let cfg = TrainConfig::standard(0, 8, OptimizerSpec::adam(1e-3));
        let hist = train(&mut m, &ds, &cfg, None).unwrap();
        assert!(hist.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn attack_presence_must_match_mode() {
        let mut cfg = TrainConfig::standard(1, 8, OptimizerSpec::adam(1e-3));
        cfg.attack = Some(AttackConfig::new(0.1, 0.01, 1));
        assert!(cfg.validate().is_err());
        cfg.attack = None;
        cfg.mode = TrainMode::Adversarial;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn clean_data_leaves_incorrect_group_absent() {
        let ds = data::synth_binary(40, 0, 1).unwrap();
        let mut m = Model::mlp(&[2, 8, 2], 0).unwrap();
        let cfg = TrainConfig::standard(2, 16, OptimizerSpec::adam(1e-2));
        let hist = train(&mut m, &ds, &cfg, None).unwrap();
        assert_eq!(hist.len(), 2);
        for h in &hist {
            assert!(h.train_acc_correct.is_some());
            assert!(h.train_acc_incorrect.is_none());
            assert!(h.mean_loss_incorrect.is_none());
            assert!(h.group_gap().is_none());
        }
    }

    #[test]
    fn batches_cover_every_sample_once() {
        let batches = epoch_batches(50, 16, 3, 2);
        assert_eq!(batches.len(), 4);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.windows(2).all(|w| w[0] < w[1])));
        assert_ne!(epoch_batches(50, 16, 3, 2), epoch_batches(50, 16, 3, 3));
    }

    #[test]
    fn constant_model_on_balanced_set_scores_half() {
        let f = Tensor::new(vec![4, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let ds = NoisyDataset::clean(f, vec![0, 1, 0, 1], 2).unwrap();
        let m = Model::from_layers(vec![crate::model::Linear {
            weight: Tensor::zeros(&[1, 2]),
            bias: Tensor::vector(vec![1.0, 0.0]).unwrap(),
        }])
        .unwrap();
        let e = evaluate(&m, &ds, None).unwrap();
        assert_eq!(e.standard_acc, 0.5);
        assert!(e.robust_acc.is_none());
        let noisy = data::inject_noise(&ds, &NoiseSpec::pair(1.0, 0)).unwrap();
        let e = evaluate(&m, &noisy, Some(&AttackConfig::new(0.1, 0.025, 2))).unwrap();
        assert!(e.robust_acc.is_some());
        assert!(e.standard_split.correct.is_none());
    }
}
