//! In-memory experiment runners behind the commands. Each takes a resolved
//! config and a base seed and returns everything the command writes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::analysis::{self, EntropyProbe, GridCell, HistogramBin, Orientation, SampleRecord};
use crate::annotator::{
    self, AnnotateOptions, AnnotationResult, AnnotatorConfig, ConfidenceBin, RelabelEvent,
};
use crate::attack::AttackConfig;
use crate::checkpoint::{Checkpoint, SeedLineage};
use crate::data::{self, NoisyDataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{OptimizerKind, OptimizerSpec};
use crate::rng::derive_seed;
use crate::training::{self, EpochMetrics, TrainConfig, TrainHooks, TrainMode};

use super::config::{
    mnist_with_noise, AnnotateRunConfig, KappaRunConfig, SynthConfig, TrainRunConfig,
};

/// Named sub-seeds of a run, in derivation order.
pub type Seeds = BTreeMap<String, u64>;

fn seeds(base: u64, labels: &[&str]) -> Seeds {
    let mut s: Seeds = labels
        .iter()
        .map(|l| (l.to_string(), derive_seed(base, l, 0)))
        .collect();
    s.insert("base".into(), base);
    s
}

#[derive(Clone, Debug)]
pub struct SynthModel {
    /// `st` or `pgd-<k>`.
    pub name: String,
    pub pgd_steps: Option<usize>,
    pub model: Model,
    pub final_metrics: EpochMetrics,
    /// Agreement with the flipped label per corrupted point, in index order.
    pub agreement: Vec<(usize, f64)>,
    pub grid: Vec<GridCell>,
}

impl SynthModel {
    pub fn mean_agreement(&self) -> f64 {
        self.agreement.iter().map(|(_, a)| a).sum::<f64>() / self.agreement.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct SynthReport {
    pub dataset: NoisyDataset,
    pub models: Vec<SynthModel>,
    pub seeds: Seeds,
}

impl SynthReport {
    pub fn model(&self, name: &str) -> Option<&SynthModel> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Standard training and PGD-k adversarial training on the synthetic set,
/// all from the same initialization, full batch.
pub fn run_synth(cfg: &SynthConfig, seed: u64) -> Result<SynthReport> {
    let seeds = seeds(
        seed,
        &["synth-data", "init", "train", "train-attack", "agreement"],
    );
    let ds = data::synth_binary(cfg.points, cfg.flipped, seeds["synth-data"])?;
    let mut sizes = vec![2];
    sizes.extend(&cfg.hidden);
    sizes.push(2);
    let init = Model::mlp(&sizes, seeds["init"])?;
    let corrupted = ds.corrupted_indices();

    let mut runs: Vec<Option<usize>> = vec![None];
    runs.extend(cfg.pgd_steps.iter().map(|&k| Some(k)));
    let mut models = Vec::with_capacity(runs.len());
    for steps in runs {
        let opt = OptimizerSpec::adam(cfg.learning_rate);
        let tc = match steps {
            None => TrainConfig::standard(cfg.iterations, ds.len(), opt),
            Some(k) => {
                let mut a = AttackConfig::new(cfg.epsilon, cfg.alpha, k);
                if cfg.random_start {
                    a = a.with_random_start(seeds["train-attack"]);
                }
                TrainConfig::adversarial(cfg.iterations, ds.len(), opt, a)
            }
        }
        .with_seed(seeds["train"]);
        let mut model = init.clone();
        let history = training::train(&mut model, &ds, &tc, None)?;
        let final_metrics = history
            .last()
            .cloned()
            .unwrap_or_else(|| EpochMetrics::empty(0));
        let agreement = corrupted
            .iter()
            .map(|&i| {
                let one = ds.subset(&[i]);
                analysis::neighborhood_agreement(
                    &model,
                    one.features(),
                    one.observed_labels(),
                    cfg.epsilon,
                    cfg.neighborhood_samples,
                    derive_seed(seeds["agreement"], "point", i as u64),
                )
                .map(|a| (i, a))
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = analysis::decision_grid(&model, cfg.grid_resolution)?;
        models.push(SynthModel {
            name: steps.map_or("st".to_string(), |k| format!("pgd-{k}")),
            pgd_steps: steps,
            model,
            final_metrics,
            agreement,
            grid,
        });
    }
    Ok(SynthReport {
        dataset: ds,
        models,
        seeds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropySummary {
    pub random: f64,
    pub adversarial: f64,
    pub points: usize,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub train_set: NoisyDataset,
    pub test_set: NoisyDataset,
    pub history: Vec<EpochMetrics>,
    pub model: Model,
    /// Final-epoch entropy around corrupted training points.
    pub entropy: Option<EntropySummary>,
    pub checkpoints: Vec<Checkpoint>,
    pub seeds: Seeds,
}

struct Saver<'a> {
    epochs: &'a [usize],
    batches_per_epoch: u64,
    lineage: SeedLineage,
    saved: Vec<Checkpoint>,
}

impl TrainHooks for Saver<'_> {
    fn epoch_end(&mut self, epoch: usize, model: &Model, _m: &EpochMetrics) -> Result<()> {
        if self.epochs.contains(&(epoch + 1)) {
            self.saved.push(Checkpoint {
                model: model.clone(),
                optimizer: OptimizerKind::SgdMomentum,
                step: (epoch as u64 + 1) * self.batches_per_epoch,
                epoch: epoch + 1,
                seeds: self.lineage.clone(),
            });
        }
        Ok(())
    }
}

fn lineage(seeds: &Seeds) -> SeedLineage {
    SeedLineage {
        base_seed: seeds["base"],
        init_seed: seeds["init"],
        derived: seeds
            .iter()
            .filter(|(k, _)| k.as_str() != "base")
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
    }
}

/// Loads data, trains, records per-epoch metrics and requested checkpoints,
/// and probes neighborhood entropy around corrupted points at the end.
/// `init` replaces the seeded initialization when given.
pub fn run_train(cfg: &TrainRunConfig, seed: u64, init: Option<Model>) -> Result<TrainReport> {
    let seeds = seeds(
        seed,
        &["init", "train", "train-attack", "eval-attack", "probe"],
    );
    let (train_set, test_set) = mnist_with_noise(&cfg.data, cfg.noise.as_ref(), seed)?;
    let mut model = match init {
        Some(m) => m,
        None => Model::mlp(
            &cfg.model
                .layer_sizes(train_set.feature_dim(), train_set.class_count()),
            seeds["init"],
        )?,
    };
    let tc = cfg
        .train
        .config(cfg.mode, seed)
        .with_eval(cfg.eval.config(seed));
    let mut saver = Saver {
        epochs: &cfg.checkpoint_epochs,
        batches_per_epoch: train_set.len().div_ceil(tc.batch_size) as u64,
        lineage: lineage(&seeds),
        saved: Vec::new(),
    };
    let history =
        training::train_with_hooks(&mut model, &train_set, &tc, Some(&test_set), &mut saver)?;
    let entropy = if train_set.corrupted_count() > 0 {
        let bad = train_set.subset(&train_set.corrupted_indices());
        let probe = |dir| EntropyProbe {
            direction: dir,
            epsilon: cfg.probe.epsilon,
            n_samples: cfg.probe.samples,
            seed: seeds["probe"],
        };
        Some(EntropySummary {
            random: analysis::neighborhood_entropy(
                &model,
                bad.features(),
                bad.observed_labels(),
                &probe(analysis::ProbeDirection::Random),
            )?,
            adversarial: analysis::neighborhood_entropy(
                &model,
                bad.features(),
                bad.observed_labels(),
                &probe(analysis::ProbeDirection::Adversarial),
            )?,
            points: bad.len(),
        })
    } else {
        None
    };
    Ok(TrainReport {
        train_set,
        test_set,
        history,
        model,
        entropy,
        checkpoints: saver.saved,
        seeds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AurocSummary {
    pub kappa_low_means_corrupted: f64,
    pub kappa_high_means_corrupted: f64,
    pub loss_high_means_corrupted: f64,
    pub loss_low_means_corrupted: f64,
}

#[derive(Clone, Debug)]
pub struct KappaAnalysis {
    pub epoch: usize,
    pub table: Vec<SampleRecord>,
    pub ranking: Vec<usize>,
    pub kappa_histogram: Vec<HistogramBin>,
    pub loss_histogram: Vec<HistogramBin>,
    pub auroc: AurocSummary,
}

#[derive(Clone, Debug)]
pub struct KappaReport {
    pub analyses: Vec<KappaAnalysis>,
    pub pooled_kappa_histogram: Vec<HistogramBin>,
    pub pooled_loss_histogram: Vec<HistogramBin>,
}

fn pool(hists: &[&[HistogramBin]]) -> Vec<HistogramBin> {
    let mut out = hists.first().map(|h| h.to_vec()).unwrap_or_default();
    for h in hists.iter().skip(1) {
        for (o, b) in out.iter_mut().zip(h.iter()) {
            o.count_correct += b.count_correct;
            o.count_incorrect += b.count_incorrect;
        }
    }
    out
}

/// κ/loss tables, histograms, AUROCs and rankings for each checkpoint on
/// the training set the checkpoint's run saw (rebuilt from its base seed).
pub fn run_kappa(cfg: &KappaRunConfig, checkpoints: &[Checkpoint]) -> Result<KappaReport> {
    if checkpoints.is_empty() {
        return Err(Error::config(
            "checkpoints",
            "at least one checkpoint is required",
        ));
    }
    let base = checkpoints[0].seeds.base_seed;
    if let Some(c) = checkpoints.iter().find(|c| c.seeds.base_seed != base) {
        return Err(Error::config(
            "checkpoints",
            format!(
                "checkpoint of epoch {} has base seed {}, expected {base}",
                c.epoch, c.seeds.base_seed
            ),
        ));
    }
    let (train_set, _) = mnist_with_noise(&cfg.data, cfg.noise.as_ref(), base)?;
    let attack = cfg.kappa.attack(0).without_random_start();
    let mut analyses = Vec::with_capacity(checkpoints.len());
    for c in checkpoints {
        if c.model.input_dim() != train_set.feature_dim()
            || c.model.class_count() != train_set.class_count()
        {
            return Err(Error::dim(
                "checkpoint.model",
                (train_set.feature_dim(), train_set.class_count()),
                (c.model.input_dim(), c.model.class_count()),
            ));
        }
        let table = analysis::kappa_loss_table(&c.model, &train_set, &attack)?;
        let corrupted: Vec<bool> = table.iter().map(|r| r.corrupted).collect();
        let kappa: Vec<f64> = table.iter().map(|r| r.kappa as f64).collect();
        let loss: Vec<f64> = table.iter().map(|r| r.loss).collect();
        let au = |s: &[f64], o| analysis::separability_auroc(s, &corrupted, o);
        let auroc = AurocSummary {
            kappa_low_means_corrupted: au(&kappa, Orientation::LowScoreMeansCorrupted)?,
            kappa_high_means_corrupted: au(&kappa, Orientation::HighScoreMeansCorrupted)?,
            loss_high_means_corrupted: au(&loss, Orientation::HighScoreMeansCorrupted)?,
            loss_low_means_corrupted: au(&loss, Orientation::LowScoreMeansCorrupted)?,
        };
        let kn: Vec<f64> = table.iter().map(|r| r.kappa_norm).collect();
        let ln: Vec<f64> = table.iter().map(|r| r.loss_norm).collect();
        analyses.push(KappaAnalysis {
            epoch: c.epoch,
            ranking: analysis::rank_typical_rare(&table),
            kappa_histogram: analysis::histogram(&kn, &corrupted, cfg.bins)?,
            loss_histogram: analysis::histogram(&ln, &corrupted, cfg.bins)?,
            table,
            auroc,
        });
    }
    let kh: Vec<&[HistogramBin]> = analyses
        .iter()
        .map(|a| a.kappa_histogram.as_slice())
        .collect();
    let lh: Vec<&[HistogramBin]> = analyses
        .iter()
        .map(|a| a.loss_histogram.as_slice())
        .collect();
    Ok(KappaReport {
        pooled_kappa_histogram: pool(&kh),
        pooled_loss_histogram: pool(&lh),
        analyses,
    })
}

/// The four annotators compared on adversarial U data.
pub const ANNOTATORS: [&str; 4] = ["robust-noisy", "pgd-noisy", "pgd-clean", "standard-clean"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub annotator: String,
    pub ratio: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct AnnotateReport {
    pub accuracy: Vec<AccuracyRow>,
    pub annotations: Vec<(String, f64, Vec<AnnotationResult>)>,
    /// κ-bin accuracy on natural U data, per annotator.
    pub confidence: Vec<(String, Vec<ConfidenceBin>)>,
    pub relabel_log: Vec<RelabelEvent>,
    pub train_set: NoisyDataset,
    pub seeds: Seeds,
}

impl AnnotateReport {
    pub fn accuracy_of(&self, annotator: &str, ratio: f64) -> Option<f64> {
        self.accuracy
            .iter()
            .find(|r| r.annotator == annotator && r.ratio == ratio)
            .map(|r| r.accuracy)
    }

    pub fn confidence_of(&self, annotator: &str) -> Option<&[ConfidenceBin]> {
        self.confidence
            .iter()
            .find(|(n, _)| n == annotator)
            .map(|(_, b)| b.as_slice())
    }
}

/// Trains the robust annotator (noisy labels), plain AT on noisy and on
/// clean labels, and ST on clean labels from one initialization; then
/// labels the test pool at each adversarial ratio.
pub fn run_annotate(cfg: &AnnotateRunConfig, seed: u64) -> Result<AnnotateReport> {
    let seeds = seeds(
        seed,
        &["init", "train", "train-attack", "u-attack", "u-perturb"],
    );
    let (clean, pool) = cfg.data.load(seed)?;
    let noisy = data::inject_noise(&clean, &cfg.noise.spec(seed))?;
    let init = Model::mlp(
        &cfg.model
            .layer_sizes(clean.feature_dim(), clean.class_count()),
        seeds["init"],
    )?;
    let at = cfg.train.config(TrainMode::Adversarial, seed);
    let st = cfg.train.config(TrainMode::Standard, seed);

    let acfg = AnnotatorConfig {
        base: at.clone(),
        warmup_epochs: cfg.selection.warmup_epochs,
        geometry_threshold: cfg.selection.geometry_threshold,
        loss_fraction: cfg.selection.loss_fraction,
    };
    let (robust, _, relabel_log) = annotator::robust_annotator_train(&init, &noisy, &acfg, None)?;
    let fit = |ds: &NoisyDataset, tc: &TrainConfig| -> Result<Model> {
        let mut m = init.clone();
        training::train(&mut m, ds, tc, None)?;
        Ok(m)
    };
    let models = [
        robust,
        fit(&noisy, &at)?,
        fit(&clean, &at)?,
        fit(&clean, &st)?,
    ];

    let truth = pool.true_labels();
    let kappa = cfg.kappa_attack();
    let mut accuracy = Vec::new();
    let mut annotations = Vec::new();
    let mut confidence = Vec::new();
    for (name, model) in ANNOTATORS.iter().zip(&models) {
        for &ratio in &cfg.ratios {
            let opts = AnnotateOptions {
                adversarial_ratio: ratio,
                attacker: AttackConfig::evaluation(
                    cfg.attack_epsilon,
                    cfg.attack_steps,
                    seeds["u-attack"],
                ),
                kappa: kappa.clone(),
                seed: seeds["u-perturb"],
            };
            let ann = annotator::annotate(model, pool.features(), &opts, Some(truth))?;
            accuracy.push(AccuracyRow {
                annotator: name.to_string(),
                ratio,
                accuracy: ann.accuracy.unwrap_or(0.0),
            });
            if ratio == 0.0 {
                confidence.push((
                    name.to_string(),
                    annotator::confidence_bins(&ann.results, truth, kappa.max_steps)?,
                ));
            }
            annotations.push((name.to_string(), ratio, ann.results));
        }
    }
    Ok(AnnotateReport {
        accuracy,
        annotations,
        confidence,
        relabel_log,
        train_set: noisy,
        seeds,
    })
}
