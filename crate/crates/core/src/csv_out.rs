//! CSV exports. Floats use six decimals; missing values are empty fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{GridCell, HistogramBin, SampleRecord};
use crate::annotator::{AnnotationResult, ConfidenceBin, RelabelEvent};
use crate::error::{Error, Result};
use crate::training::EpochMetrics;

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write(path: &Path, body: String) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub const METRICS_HEADER: &str = "epoch,train_acc_correct,train_acc_incorrect,test_acc_natural,\
test_acc_robust,mean_loss_correct,mean_loss_incorrect,mean_kappa_correct,mean_kappa_incorrect";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            m.epoch,
            opt(m.train_acc_correct),
            opt(m.train_acc_incorrect),
            opt(m.test_acc_natural),
            opt(m.test_acc_robust),
            opt(m.mean_loss_correct),
            opt(m.mean_loss_incorrect),
            opt(m.mean_kappa_correct),
            opt(m.mean_kappa_incorrect),
        );
    }
    s
}

pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    write(path, metrics_csv(rows))
}

pub const SAMPLE_HEADER: &str =
    "index,observed,true,corrupted,loss,loss_norm,kappa,kappa_norm,predicted";

pub fn write_sample_table(path: &Path, rows: &[SampleRecord]) -> Result<()> {
    let mut s = format!("{SAMPLE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{},{:.6},{}",
            r.sample_index,
            r.observed_label,
            r.true_label,
            u8::from(r.corrupted),
            r.loss,
            r.loss_norm,
            r.kappa,
            r.kappa_norm,
            r.predicted
        );
    }
    write(path, s)
}

pub const HISTOGRAM_HEADER: &str = "bin_low,bin_high,count_correct,count_incorrect";

pub fn write_histogram(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut s = format!("{HISTOGRAM_HEADER}\n");
    for b in bins {
        let _ = writeln!(
            s,
            "{:.6},{:.6},{},{}",
            b.bin_low, b.bin_high, b.count_correct, b.count_incorrect
        );
    }
    write(path, s)
}

pub const RELABEL_HEADER: &str = "epoch,batch,index,old_label,new_label,kappa,loss";

pub fn write_relabel_log(path: &Path, events: &[RelabelEvent]) -> Result<()> {
    let mut s = format!("{RELABEL_HEADER}\n");
    for e in events {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6}",
            e.epoch, e.batch, e.index, e.old_label, e.new_label, e.kappa, e.loss
        );
    }
    write(path, s)
}

pub const ANNOTATION_HEADER: &str = "index,assigned,kappa,perturbed,correct";

pub fn write_annotation(path: &Path, rows: &[AnnotationResult]) -> Result<()> {
    let mut s = format!("{ANNOTATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.sample_index,
            r.assigned_label,
            r.kappa,
            u8::from(r.perturbed),
            r.correct
                .map(|c| u8::from(c).to_string())
                .unwrap_or_default()
        );
    }
    write(path, s)
}

pub const CONFIDENCE_HEADER: &str = "kappa_bin,count,accuracy";

pub fn write_confidence(path: &Path, bins: &[ConfidenceBin]) -> Result<()> {
    let mut s = format!("{CONFIDENCE_HEADER}\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", b.kappa, b.count, opt(b.accuracy));
    }
    write(path, s)
}

pub const GRID_HEADER: &str = "x,y,predicted,confidence";

pub fn write_grid(path: &Path, cells: &[GridCell]) -> Result<()> {
    let mut s = format!("{GRID_HEADER}\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{:.6},{:.6},{},{:.6}",
            c.x, c.y, c.predicted, c.confidence
        );
    }
    write(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_metrics_are_empty_fields() {
        let m = EpochMetrics {
            epoch: 3,
            train_acc_correct: Some(0.5),
            ..EpochMetrics::empty(3)
        };
        let csv = metrics_csv(&[m]);
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line, "3,0.500000,,,,,,,");
        assert_eq!(line.split(',').count(), METRICS_HEADER.split(',').count());
    }
}
