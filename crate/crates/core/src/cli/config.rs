//! Run configurations. Every key defaults to the paper's value (or to the
//! documented desk-scale choice where the paper has none); the shipped
//! `configs/*.toml` files hold the desk-scale overrides.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::{self, NoiseKind, NoiseSpec, NoisyDataset};
use crate::error::{Error, Result};
use crate::optim::{LrSchedule, Milestone, OptimizerSpec};
use crate::rng::derive_seed;
use crate::training::{EvalConfig, TrainConfig, TrainMode};

/// Parses a TOML document, reporting the offending key path on failure.
pub fn parse_toml<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::Config {
            field: if field == "." {
                origin.display().to_string()
            } else {
                field
            },
            reason: e.into_inner().message().trim().to_string(),
        }
    })
}

/// Reads a config file; relative data paths are resolved against the
/// file's directory.
pub fn load<T: DeserializeOwned + RunConfig>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: T = parse_toml(&text, path)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

pub trait RunConfig {
    fn resolve_paths(&mut self, _base: &Path) {}
    fn validate(&self) -> Result<()>;
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistSection {
    pub dir: PathBuf,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for MnistSection {
    fn default() -> Self {
        MnistSection {
            dir: PathBuf::from("data/mnist"),
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
            train_size: 2000,
            test_size: 1000,
        }
    }
}

impl MnistSection {
    /// Seeded train and test subsets.
    pub fn load(&self, seed: u64) -> Result<(NoisyDataset, NoisyDataset)> {
        let train = data::load_mnist_idx(
            &self.dir.join(&self.train_images),
            &self.dir.join(&self.train_labels),
            self.train_size,
            derive_seed(seed, "mnist-train", 0),
        )?;
        let test = data::load_mnist_idx(
            &self.dir.join(&self.test_images),
            &self.dir.join(&self.test_labels),
            self.test_size,
            derive_seed(seed, "mnist-test", 0),
        )?;
        Ok((train, test))
    }

    fn validate(&self) -> Result<()> {
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::config(
                "data",
                "train_size and test_size must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub rate: f64,
}

impl NoiseSection {
    pub fn spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            kind: self.kind,
            rate: self.rate,
            seed: derive_seed(seed, "noise", 0),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::config("noise.rate", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Loads the MNIST subsets and corrupts the training labels.
pub fn mnist_with_noise(
    data: &MnistSection,
    noise: Option<&NoiseSection>,
    seed: u64,
) -> Result<(NoisyDataset, NoisyDataset)> {
    let (train, test) = data.load(seed)?;
    let train = match noise {
        Some(n) => data::inject_noise(&train, &n.spec(seed))?,
        None => train,
    };
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: vec![256, 256],
        }
    }
}

impl ModelSection {
    pub fn layer_sizes(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(classes);
        sizes
    }
}

/// A PGD budget as written in configs; seeds are derived per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    #[serde(default)]
    pub random_start: bool,
}

impl AttackSection {
    pub fn attack(&self, seed: u64) -> AttackConfig {
        let a = AttackConfig::new(self.epsilon, self.alpha, self.steps);
        if self.random_start {
            a.with_random_start(seed)
        } else {
            a
        }
    }

    /// Budget used for training: ε = 0.031, α = 0.007, 10 steps, random start.
    pub fn training_preset() -> Self {
        AttackSection {
            epsilon: 0.031,
            alpha: 0.007,
            steps: 10,
            random_start: true,
        }
    }

    /// κ on MNIST: PGD-40 with ε = 0.3, α = 0.01, no random start.
    pub fn mnist_kappa_preset() -> Self {
        AttackSection {
            epsilon: 0.3,
            alpha: 0.01,
            steps: 40,
            random_start: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Zero-based epochs from which the learning rate is multiplied.
    pub milestones: Vec<Milestone>,
    pub attack: AttackSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![
                Milestone {
                    epoch: 30,
                    multiplier: 0.1,
                },
                Milestone {
                    epoch: 60,
                    multiplier: 0.1,
                },
            ],
            attack: AttackSection::training_preset(),
        }
    }
}

impl TrainSection {
    pub fn config(&self, mode: TrainMode, seed: u64) -> TrainConfig {
        let opt = OptimizerSpec::sgd(self.learning_rate, self.momentum)
            .with_weight_decay(self.weight_decay);
        let base = match mode {
            TrainMode::Standard => TrainConfig::standard(self.epochs, self.batch_size, opt),
            TrainMode::Adversarial => TrainConfig::adversarial(
                self.epochs,
                self.batch_size,
                opt,
                self.attack.attack(derive_seed(seed, "train-attack", 0)),
            ),
        };
        base.with_seed(derive_seed(seed, "train", 0))
            .with_schedule(LrSchedule {
                milestones: self.milestones.clone(),
            })
    }

    fn validate(&self) -> Result<()> {
        let probe = self.config(TrainMode::Adversarial, 0);
        probe.validate().map_err(|e| match e {
            Error::Config { field, reason } => Error::Config {
                field: format!("train.{field}"),
                reason,
            },
            other => other,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Robust test accuracy every epoch (PGD with α = ε/4, random start).
    pub robust: bool,
    pub robust_epsilon: f64,
    pub robust_steps: usize,
    /// Mean κ per group every epoch.
    pub kappa: bool,
    pub kappa_attack: AttackSection,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            robust: true,
            robust_epsilon: 0.031,
            robust_steps: 20,
            kappa: false,
            kappa_attack: AttackSection::mnist_kappa_preset(),
        }
    }
}

impl EvalSection {
    pub fn config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            robust: self.robust.then(|| {
                AttackConfig::evaluation(
                    self.robust_epsilon,
                    self.robust_steps,
                    derive_seed(seed, "eval-attack", 0),
                )
            }),
            kappa: self.kappa.then(|| self.kappa_attack.attack(0)),
        }
    }
}

/// Neighborhood-entropy probe around corrupted training points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub epsilon: f64,
    pub samples: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            epsilon: 0.031,
            samples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub points: usize,
    pub flipped: usize,
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub alpha: f64,
    /// PGD step counts of the adversarially trained models.
    pub pgd_steps: Vec<usize>,
    pub random_start: bool,
    pub neighborhood_samples: usize,
    pub grid_resolution: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            points: 23,
            flipped: 2,
            hidden: vec![32; 4],
            iterations: 1000,
            learning_rate: 1e-3,
            epsilon: 0.08,
            alpha: 0.02,
            pgd_steps: vec![1, 2, 3, 4],
            random_start: true,
            neighborhood_samples: 100,
            grid_resolution: 200,
        }
    }
}

impl RunConfig for SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.flipped >= self.points {
            return Err(Error::config("flipped", "must be below points"));
        }
        if self.pgd_steps.contains(&0) {
            return Err(Error::config("pgd_steps", "step counts must be >= 1"));
        }
        if self.grid_resolution == 0 || self.neighborhood_samples == 0 {
            return Err(Error::config(
                "grid_resolution",
                "grid_resolution and neighborhood_samples must be positive",
            ));
        }
        AttackConfig::new(self.epsilon, self.alpha, 1).validate()?;
        OptimizerSpec::adam(self.learning_rate).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub seed: u64,
    pub mode: TrainMode,
    pub data: MnistSection,
    pub noise: Option<NoiseSection>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub probe: ProbeSection,
    /// One-based epochs after which a checkpoint is written.
    pub checkpoint_epochs: Vec<usize>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            seed: 0,
            mode: TrainMode::Standard,
            data: MnistSection::default(),
            noise: Some(NoiseSection {
                kind: NoiseKind::Symmetric,
                rate: 0.2,
            }),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            probe: ProbeSection::default(),
            checkpoint_epochs: Vec::new(),
        }
    }
}

impl RunConfig for TrainRunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data.dir);
    }

    fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        self.train.validate()?;
        if let Some(&e) = self
            .checkpoint_epochs
            .iter()
            .find(|&&e| e == 0 || e > self.train.epochs)
        {
            return Err(Error::config(
                "checkpoint_epochs",
                format!("epoch {e} outside 1..={}", self.train.epochs),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KappaRunConfig {
    pub data: MnistSection,
    pub noise: Option<NoiseSection>,
    pub kappa: AttackSection,
    pub bins: usize,
    /// Checkpoints to analyze in addition to any given on the command line.
    pub checkpoints: Vec<PathBuf>,
}

impl Default for KappaRunConfig {
    fn default() -> Self {
        KappaRunConfig {
            data: MnistSection::default(),
            noise: TrainRunConfig::default().noise,
            kappa: AttackSection::mnist_kappa_preset(),
            bins: crate::analysis::DENSITY_BINS,
            checkpoints: Vec::new(),
        }
    }
}

impl RunConfig for KappaRunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data.dir);
        for c in &mut self.checkpoints {
            resolve(base, c);
        }
    }

    fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        if self.bins == 0 {
            return Err(Error::config("bins", "must be positive"));
        }
        self.kappa.attack(0).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub warmup_epochs: usize,
    pub geometry_threshold: usize,
    pub loss_fraction: f64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            warmup_epochs: 40,
            geometry_threshold: 2,
            loss_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateRunConfig {
    pub seed: u64,
    /// `test_size` test images serve as the unlabeled pool.
    pub data: MnistSection,
    pub noise: NoiseSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub selection: SelectionSection,
    /// U-data attack: PGD with α = ε/4 and a random start.
    pub attack_epsilon: f64,
    pub attack_steps: usize,
    pub ratios: Vec<f64>,
    /// κ of assigned labels; defaults to the training budget without
    /// random start.
    pub kappa: Option<AttackSection>,
    /// Minimum bin size for the confidence trend.
    pub confidence_min_count: usize,
}

impl Default for AnnotateRunConfig {
    fn default() -> Self {
        AnnotateRunConfig {
            seed: 0,
            data: MnistSection::default(),
            noise: NoiseSection {
                kind: NoiseKind::Symmetric,
                rate: 0.2,
            },
            model: ModelSection::default(),
            train: TrainSection {
                epochs: 120,
                batch_size: 128,
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 2e-4,
                milestones: vec![
                    Milestone {
                        epoch: 60,
                        multiplier: 0.1,
                    },
                    Milestone {
                        epoch: 90,
                        multiplier: 0.1,
                    },
                    Milestone {
                        epoch: 110,
                        multiplier: 0.5,
                    },
                ],
                attack: AttackSection::training_preset(),
            },
            selection: SelectionSection::default(),
            attack_epsilon: 0.031,
            attack_steps: 20,
            ratios: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            kappa: None,
            confidence_min_count: 20,
        }
    }
}

impl AnnotateRunConfig {
    pub fn kappa_attack(&self) -> AttackConfig {
        match &self.kappa {
            Some(k) => k.attack(0).without_random_start(),
            None => self.train.attack.attack(0).without_random_start(),
        }
    }
}

impl RunConfig for AnnotateRunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data.dir);
    }

    fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.noise.validate()?;
        self.train.validate()?;
        if self.selection.warmup_epochs >= self.train.epochs {
            return Err(Error::config(
                "selection.warmup_epochs",
                "must be below train.epochs",
            ));
        }
        if !(self.selection.loss_fraction > 0.0 && self.selection.loss_fraction < 1.0) {
            return Err(Error::config(
                "selection.loss_fraction",
                "must be in (0, 1)",
            ));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::config("ratios", format!("{r} outside [0, 1]")));
        }
        AttackConfig::evaluation(self.attack_epsilon, self.attack_steps.max(1), 0).validate()?;
        if self.attack_steps == 0 {
            return Err(Error::config("attack_steps", "must be >= 1"));
        }
        self.kappa_attack().validate()
    }
}
