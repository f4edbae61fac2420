//! Datasets with observed and ground-truth labels, the synthetic 2-D set,
//! MNIST IDX ingestion, label-noise injection and min-max normalization.

use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Features in `[0,1]^d` with observed (possibly corrupted) and true labels.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataset {
    features: Tensor,
    observed: Vec<usize>,
    truth: Vec<usize>,
    corrupted: Vec<bool>,
    class_count: usize,
}

impl NoisyDataset {
    /// A clean dataset: observed labels equal the true labels.
    pub fn clean(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        NoisyDataset::with_labels(features, labels.clone(), labels, class_count)
    }

    pub fn with_labels(
        features: Tensor,
        observed: Vec<usize>,
        truth: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if features.shape().len() != 2 {
            return Err(Error::dim("features", "[n, d]", features.shape()));
        }
        if observed.len() != n {
            return Err(Error::dim("observed_labels", n, observed.len()));
        }
        if truth.len() != n {
            return Err(Error::dim("true_labels", n, truth.len()));
        }
        for labels in [&observed, &truth] {
            if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
                return Err(Error::Label {
                    index: i,
                    label: l,
                    classes: class_count,
                });
            }
        }
        if let Some(pos) = features
            .data()
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Contract(format!(
                "feature entry {pos} lies outside [0, 1]"
            )));
        }
        let corrupted = observed.iter().zip(&truth).map(|(a, b)| a != b).collect();
        Ok(NoisyDataset {
            features,
            observed,
            truth,
            corrupted,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn observed_labels(&self) -> &[usize] {
        &self.observed
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.truth
    }

    pub fn corrupted(&self) -> &[bool] {
        &self.corrupted
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn corrupted_count(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }

    pub fn corrupted_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.corrupted[i]).collect()
    }

    /// Sub-dataset of the given rows, in the given order.
    pub fn subset(&self, idx: &[usize]) -> NoisyDataset {
        NoisyDataset {
            features: self.features.select_rows(idx),
            observed: idx.iter().map(|&i| self.observed[i]).collect(),
            truth: idx.iter().map(|&i| self.truth[i]).collect(),
            corrupted: idx.iter().map(|&i| self.corrupted[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Structured summary for run manifests.
    pub fn manifest(&self, noise: Option<&NoiseSpec>, seed: u64) -> DatasetManifest {
        DatasetManifest {
            n: self.len(),
            classes: self.class_count,
            feature_dim: self.feature_dim(),
            noise: noise.cloned(),
            seed,
            corrupted: self.corrupted_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub noise: Option<NoiseSpec>,
    pub seed: u64,
    pub corrupted: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Flip to one of the other `C - 1` classes uniformly.
    Symmetric,
    /// Flip class `i` to `(i + 1) mod C`.
    Pair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Symmetric,
            rate,
            seed,
        }
    }

    pub fn pair(rate: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Pair,
            rate,
            seed,
        }
    }
}

/// `n` points uniform in `(0,1)^2`, labelled 1 iff `b > a`, with
/// `flip_count` of them (chosen without replacement) given the other label.
pub fn synth_binary(n: usize, flip_count: usize, seed: u64) -> Result<NoisyDataset> {
    if n == 0 {
        return Err(Error::config("n", "must be positive"));
    }
    if flip_count >= n {
        return Err(Error::config(
            "flip_count",
            format!("must be below n = {n}, got {flip_count}"),
        ));
    }
    let mut rng = rng::rng_for(seed, "synth-points", 0);
    let mut open_unit = || loop {
        let v: f64 = rng.gen();
        if v > 0.0 {
            break v;
        }
    };
    let mut data = Vec::with_capacity(2 * n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = (open_unit(), open_unit());
        data.extend([a, b]);
        truth.push(usize::from(b > a));
    }
    let mut observed = truth.clone();
    let mut flip_rng = rng::rng_for(seed, "synth-flips", 0);
    for i in index::sample(&mut flip_rng, n, flip_count) {
        observed[i] = 1 - observed[i];
    }
    NoisyDataset::with_labels(Tensor::from_parts(vec![n, 2], data), observed, truth, 2)
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason: "truncated header".into(),
        })
}

/// Raw IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"),
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            reason: format!("truncated pixel data: expected {expected} bytes"),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: expected as u64,
            reason: "trailing bytes after pixel data".into(),
        });
    }
    Ok((count, rows, cols, bytes[16..].to_vec()))
}

/// Raw IDX label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"),
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected) as u64,
            reason: format!("label payload length {} != {count}", bytes.len() - 8),
        });
    }
    Ok(bytes[8..].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair, scales pixels by 1/255 and draws a
/// uniformly random subset of `subset_size` samples.
pub fn load_mnist_idx(
    images_path: &Path,
    labels_path: &Path,
    subset_size: usize,
    seed: u64,
) -> Result<NoisyDataset> {
    let (count, rows, cols, pixels) = parse_idx_images(&read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read(labels_path)?, labels_path)?;
    if labels.len() != count {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            reason: format!("label count {} != image count {count}", labels.len()),
        });
    }
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 8 + pos as u64,
            reason: format!("label {} outside 0..10", labels[pos]),
        });
    }
    if subset_size == 0 || subset_size > count {
        return Err(Error::config(
            "subset_size",
            format!("must be in 1..={count}, got {subset_size}"),
        ));
    }
    let dim = rows * cols;
    let mut rng = rng::rng_for(seed, "mnist-subset", 0);
    let chosen = index::sample(&mut rng, count, subset_size).into_vec();
    let mut data = Vec::with_capacity(subset_size * dim);
    for &i in &chosen {
        data.extend(
            pixels[i * dim..(i + 1) * dim]
                .iter()
                .map(|&p| p as f64 / 255.0),
        );
    }
    let y = chosen.iter().map(|&i| labels[i] as usize).collect();
    NoisyDataset::clean(Tensor::from_parts(vec![subset_size, dim], data), y, 10)
}

/// Corrupts observed labels according to `spec`. Features and true labels
/// are never touched.
pub fn inject_noise(ds: &NoisyDataset, spec: &NoiseSpec) -> Result<NoisyDataset> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::config("noise.rate", "must be in [0, 1]"));
    }
    let c = ds.class_count;
    if c < 2 && spec.rate > 0.0 {
        return Err(Error::config("noise", "needs at least two classes"));
    }
    let mut rng = rng::rng_for(spec.seed, "label-noise", 0);
    let mut observed = ds.observed.clone();
    for label in observed.iter_mut() {
        let flip = rng.gen::<f64>() < spec.rate;
        if !flip {
            continue;
        }
        *label = match spec.kind {
            NoiseKind::Symmetric => {
                let r = rng.gen_range(0..c - 1);
                if r >= *label {
                    r + 1
                } else {
                    r
                }
            }
            NoiseKind::Pair => (*label + 1) % c,
        };
    }
    NoisyDataset::with_labels(ds.features.clone(), observed, ds.truth.clone(), c)
}

/// `(v - min) / (max - min)`; a constant input maps to all zeros.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Undefined(
            "min-max normalization of an empty sequence".into(),
        ));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; values.len()]);
    }
    let span = max - min;
    Ok(values
        .iter()
        .map(|v| ((v - min) / span).clamp(0.0, 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_matches_protocol_shape() {
        let ds = synth_binary(23, 2, 0).unwrap();
        assert_eq!(ds.len(), 23);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.corrupted_count(), 2);
        for i in 0..23 {
            let r = ds.features().row(i);
            assert!(r.iter().all(|&v| v > 0.0 && v < 1.0));
            assert_eq!(ds.true_labels()[i], usize::from(r[1] > r[0]));
        }
    }

    #[test]
    fn synth_without_flips_is_clean_and_deterministic() {
        let ds = synth_binary(23, 0, 4).unwrap();
        assert!(ds.corrupted().iter().all(|&c| !c));
        assert_eq!(ds, synth_binary(23, 0, 4).unwrap());
        assert_ne!(ds, synth_binary(23, 0, 5).unwrap());
        assert!(matches!(synth_binary(5, 5, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn zero_rate_noise_is_identity() {
        let ds = synth_binary(50, 0, 1).unwrap();
        for spec in [NoiseSpec::symmetric(0.0, 3), NoiseSpec::pair(0.0, 3)] {
            assert_eq!(inject_noise(&ds, &spec).unwrap(), ds);
        }
        assert!(inject_noise(&ds, &NoiseSpec::pair(1.5, 0)).is_err());
        assert!(inject_noise(&ds, &NoiseSpec::pair(-0.1, 0)).is_err());
    }

    #[test]
    fn minmax_cases() {
        assert_eq!(
            minmax_normalize(&[3.0, 5.0, 7.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(minmax_normalize(&[2.0; 4]).unwrap(), vec![0.0; 4]);
        assert!(minmax_normalize(&[]).is_err());
    }

    #[test]
    fn dataset_rejects_out_of_range_inputs() {
        let f = Tensor::new(vec![2, 1], vec![0.5, 1.5]).unwrap();
        assert!(NoisyDataset::clean(f, vec![0, 1], 2).is_err());
        let f = Tensor::new(vec![2, 1], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            NoisyDataset::clean(f, vec![0, 2], 2),
            Err(Error::Label { index: 1, .. })
        ));
    }
}
