//! Adversarial training under noisy labels.
//!
//! The crate bundles a small reverse-mode autodiff engine, MLP classifiers,
//! ℓ∞ PGD with the geometry value κ (the number of PGD steps needed to flip
//! a prediction), symmetric and pair-flipping label noise, standard and
//! adversarial training loops with per-group metrics, κ-vs-loss analytics,
//! and the robust annotator that relabels samples with small κ and large
//! loss during adversarial training.
//!
//! ## Examples
//!
//! One runnable example per capability (`cargo run --release --example <name>`):
//!
//! - **`gradient_check`** - tape gradients vs central differences
//! - **`pgd_kappa`** - PGD adversarial examples and the κ histogram of a model
//! - **`label_noise`** - symmetric and pair-flipping transition matrices
//! - **`synthetic_smoothing`** - ST vs PGD-k AT on the 23-point set
//! - **`noisy_training`** - per-group accuracies and entropy on noisy MNIST
//! - **`kappa_vs_loss`** - κ and loss AUROCs across checkpoints
//! - **`robust_annotator`** - four annotators on perturbed unlabeled data
//!
//! The `kappa-lab` binary wraps the [`cli`] runners (`synth`, `train`,
//! `kappa`, `annotate`) and writes self-describing run directories.

pub mod analysis;
pub mod annotator;
pub mod attack;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod csv_out;
pub mod data;
pub mod error;
mod linalg;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod training;

pub use attack::{AttackConfig, KappaRecord};
pub use autodiff::{Graph, Var};
pub use data::{NoiseKind, NoiseSpec, NoisyDataset};
pub use error::{Error, Result};
pub use model::Model;
pub use optim::{LrSchedule, OptimizerSpec};
pub use tensor::Tensor;
pub use training::{EpochMetrics, TrainConfig, TrainMode};
