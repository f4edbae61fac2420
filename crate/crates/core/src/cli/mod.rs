//! Command-line surface: `synth`, `train`, `kappa` and `annotate`, each
//! writing a self-describing run directory (resolved config, CSV/JSON
//! outputs and a digest manifest).
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or format
//! error. `KAPPA_LAB_THREADS` sets the worker thread count.

pub mod config;
pub mod experiments;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::analysis::HistogramBin;
use crate::annotator::confidence_trend;
use crate::checkpoint::Checkpoint;
use crate::csv_out;
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

use config::{AnnotateRunConfig, KappaRunConfig, RunConfig, SynthConfig, TrainRunConfig};
use manifest::{RunDir, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "kappa-lab",
    version,
    about = "Adversarial training under noisy labels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// TOML config; omitted keys take their preset values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory to create or overwrite.
    #[arg(long)]
    pub out: PathBuf,
    /// Base seed, overriding the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint to start from (`train`) or to analyze (`kappa`, repeatable).
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// ST and PGD-1..4 AT on the 23-point synthetic set.
    Synth(RunArgs),
    /// ST or AT on an MNIST subset with label noise.
    Train(RunArgs),
    /// κ/loss tables, histograms and AUROCs for saved checkpoints.
    Kappa(RunArgs),
    /// Four annotators labeling adversarially perturbed U data.
    Annotate(RunArgs),
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    crate::parallel::init_from_env();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| ()),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Kappa(a) => cmd_kappa(a).map(|_| ()),
        Command::Annotate(a) => cmd_annotate(a).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

fn load_or_default<T>(path: Option<&Path>) -> Result<T>
where
    T: serde::de::DeserializeOwned + RunConfig + Default,
{
    match path {
        Some(p) => config::load(p),
        None => {
            let cfg = T::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Serde(e.to_string()))
}

fn no_checkpoint(args: &RunArgs, command: &str) -> Result<()> {
    if args.checkpoint.is_empty() {
        Ok(())
    } else {
        Err(Error::config(
            "checkpoint",
            format!("`{command}` takes no checkpoint"),
        ))
    }
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn cmd_synth(args: &RunArgs) -> Result<RunManifest> {
    no_checkpoint(args, "synth")?;
    let mut cfg: SynthConfig = load_or_default(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let report = experiments::run_synth(&cfg, cfg.seed)?;
    let mut dir = RunDir::create(&args.out)?;
    let cfg_json = to_json(&cfg)?;
    dir.write_json("config.json", &cfg_json)?;

    let ds = &report.dataset;
    let mut s = String::from("index,a,b,observed,true,corrupted\n");
    for i in 0..ds.len() {
        let p = ds.features().row(i);
        s += &format!(
            "{i},{},{},{},{},{}\n",
            f6(p[0]),
            f6(p[1]),
            ds.observed_labels()[i],
            ds.true_labels()[i],
            u8::from(ds.corrupted()[i])
        );
    }
    dir.write("dataset.csv", s)?;

    let mut nb = String::from("model,index,a,b,observed,agreement\n");
    let mut summary = Vec::new();
    for m in &report.models {
        csv_out::write_grid(&dir.path(&format!("grid-{}.csv", m.name)), &m.grid)?;
        for &(i, a) in &m.agreement {
            let p = ds.features().row(i);
            nb += &format!(
                "{},{i},{},{},{},{}\n",
                m.name,
                f6(p[0]),
                f6(p[1]),
                ds.observed_labels()[i],
                f6(a)
            );
        }
        summary.push(json!({
            "model": m.name,
            "pgd_steps": m.pgd_steps,
            "train_acc_correct": m.final_metrics.train_acc_correct,
            "train_acc_incorrect": m.final_metrics.train_acc_incorrect,
            "mean_agreement": m.mean_agreement(),
        }));
    }
    dir.write("neighborhood.csv", nb)?;
    dir.write_json("summary.json", &summary)?;
    dir.finish("synth", cfg_json, report.seeds)
}

fn final_checkpoint(report: &experiments::TrainReport, batches: u64) -> Checkpoint {
    let epochs = report.history.len();
    Checkpoint {
        model: report.model.clone(),
        optimizer: OptimizerKind::SgdMomentum,
        step: epochs as u64 * batches,
        epoch: epochs,
        seeds: report
            .checkpoints
            .first()
            .map(|c| c.seeds.clone())
            .unwrap_or_else(|| crate::checkpoint::SeedLineage {
                base_seed: report.seeds["base"],
                init_seed: report.seeds["init"],
                derived: report
                    .seeds
                    .iter()
                    .filter(|(k, _)| k.as_str() != "base")
                    .map(|(k, v)| (k.clone(), *v))
                    .collect(),
            }),
    }
}

pub fn cmd_train(args: &RunArgs) -> Result<RunManifest> {
    let mut cfg: TrainRunConfig = load_or_default(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let init = match args.checkpoint.as_slice() {
        [] => None,
        [one] => Some(Checkpoint::load(one)?.model),
        _ => {
            return Err(Error::config(
                "checkpoint",
                "`train` takes at most one checkpoint",
            ))
        }
    };
    let report = experiments::run_train(&cfg, cfg.seed, init)?;
    let mut dir = RunDir::create(&args.out)?;
    let cfg_json = to_json(&cfg)?;
    dir.write_json("config.json", &cfg_json)?;
    csv_out::write_metrics(&dir.path("metrics.csv"), &report.history)?;
    for c in &report.checkpoints {
        c.save(&dir.path(&format!("checkpoints/epoch-{:03}.json", c.epoch)))?;
    }
    let batches = report.train_set.len().div_ceil(cfg.train.batch_size) as u64;
    final_checkpoint(&report, batches).save(&dir.path("final-model.json"))?;
    let noise = cfg.noise.as_ref().map(|n| n.spec(cfg.seed));
    dir.write_json(
        "summary.json",
        &json!({
            "final": report.history.last(),
            "entropy_around_corrupted": report.entropy,
            "train_set": report.train_set.manifest(noise.as_ref(), cfg.seed),
        }),
    )?;
    dir.finish("train", cfg_json, report.seeds)
}

fn write_hist(dir: &mut RunDir, rel: &str, bins: &[HistogramBin]) -> Result<()> {
    csv_out::write_histogram(&dir.path(rel), bins)
}

pub fn cmd_kappa(args: &RunArgs) -> Result<RunManifest> {
    let cfg: KappaRunConfig = load_or_default(args.config.as_deref())?;
    let paths: Vec<PathBuf> = cfg
        .checkpoints
        .iter()
        .chain(&args.checkpoint)
        .cloned()
        .collect();
    let checkpoints = paths
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    if let (Some(s), Some(c)) = (args.seed, checkpoints.first()) {
        if s != c.seeds.base_seed {
            return Err(Error::config(
                "seed",
                format!(
                    "checkpoints were trained with base seed {}",
                    c.seeds.base_seed
                ),
            ));
        }
    }
    let report = experiments::run_kappa(&cfg, &checkpoints)?;
    let mut dir = RunDir::create(&args.out)?;
    let cfg_json = json!({ "config": to_json(&cfg)?, "checkpoints": paths });
    dir.write_json("config.json", &cfg_json)?;
    let mut auroc = String::from("checkpoint,epoch,measure,orientation,auroc\n");
    for (i, a) in report.analyses.iter().enumerate() {
        let tag = format!("{i:02}-epoch-{:03}", a.epoch);
        csv_out::write_sample_table(&dir.path(&format!("{tag}/table.csv")), &a.table)?;
        write_hist(
            &mut dir,
            &format!("{tag}/hist-kappa.csv"),
            &a.kappa_histogram,
        )?;
        write_hist(&mut dir, &format!("{tag}/hist-loss.csv"), &a.loss_histogram)?;
        let mut rank = String::from("rank,index,kappa,loss\n");
        for (r, &idx) in a.ranking.iter().enumerate() {
            let row = &a.table[idx];
            rank += &format!("{r},{idx},{},{}\n", row.kappa, f6(row.loss));
        }
        dir.write(&format!("{tag}/ranking.csv"), rank)?;
        for (measure, orientation, v) in [
            (
                "kappa",
                "low_means_corrupted",
                a.auroc.kappa_low_means_corrupted,
            ),
            (
                "kappa",
                "high_means_corrupted",
                a.auroc.kappa_high_means_corrupted,
            ),
            (
                "loss",
                "high_means_corrupted",
                a.auroc.loss_high_means_corrupted,
            ),
            (
                "loss",
                "low_means_corrupted",
                a.auroc.loss_low_means_corrupted,
            ),
        ] {
            auroc += &format!("{i},{},{measure},{orientation},{}\n", a.epoch, f6(v));
        }
    }
    dir.write("auroc.csv", auroc)?;
    write_hist(
        &mut dir,
        "pooled/hist-kappa.csv",
        &report.pooled_kappa_histogram,
    )?;
    write_hist(
        &mut dir,
        "pooled/hist-loss.csv",
        &report.pooled_loss_histogram,
    )?;
    let seeds = [("base".to_string(), checkpoints[0].seeds.base_seed)].into();
    dir.finish("kappa", cfg_json, seeds)
}

pub fn cmd_annotate(args: &RunArgs) -> Result<RunManifest> {
    no_checkpoint(args, "annotate")?;
    let mut cfg: AnnotateRunConfig = load_or_default(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let report = experiments::run_annotate(&cfg, cfg.seed)?;
    let mut dir = RunDir::create(&args.out)?;
    let cfg_json = to_json(&cfg)?;
    dir.write_json("config.json", &cfg_json)?;
    let mut acc = String::from("annotator,ratio,accuracy\n");
    for r in &report.accuracy {
        acc += &format!("{},{:.1},{}\n", r.annotator, r.ratio, f6(r.accuracy));
    }
    dir.write("accuracy.csv", acc)?;
    for (name, ratio, results) in &report.annotations {
        csv_out::write_annotation(
            &dir.path(&format!("annotations/{name}-ratio-{ratio:.1}.csv")),
            results,
        )?;
    }
    let mut trends = serde_json::Map::new();
    for (name, bins) in &report.confidence {
        csv_out::write_confidence(&dir.path(&format!("confidence/{name}.csv")), bins)?;
        trends.insert(
            name.clone(),
            json!(confidence_trend(bins, cfg.confidence_min_count)),
        );
    }
    csv_out::write_relabel_log(&dir.path("relabel-log.csv"), &report.relabel_log)?;
    let ds = &report.train_set;
    let to_truth = report
        .relabel_log
        .iter()
        .filter(|e| e.new_label == ds.true_labels()[e.index])
        .count();
    dir.write_json(
        "summary.json",
        &json!({
            "accuracy": report.accuracy,
            "confidence_spearman": trends,
            "relabel_events": report.relabel_log.len(),
            "relabel_events_to_true_label": to_truth,
        }),
    )?;
    dir.finish("annotate", cfg_json, report.seeds)
}
