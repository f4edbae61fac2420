//! JSON checkpoints. Floats are written with 17 significant digits so a
//! save/load round trip reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::model::{Linear, Model};
use crate::optim::OptimizerKind;
use crate::tensor::Tensor;

/// Where the checkpoint's randomness came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub base_seed: u64,
    pub init_seed: u64,
    #[serde(default)]
    pub derived: Vec<(String, u64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: OptimizerKind,
    pub step: u64,
    pub epoch: usize,
    pub seeds: SeedLineage,
}

#[derive(Serialize)]
struct LayerOut {
    weight: Box<RawValue>,
    bias: Box<RawValue>,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format: &'static str,
    layer_sizes: &'a [usize],
    optimizer: OptimizerKind,
    step: u64,
    epoch: usize,
    seeds: &'a SeedLineage,
    layers: Vec<LayerOut>,
}

#[derive(Deserialize)]
struct LayerIn {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Deserialize)]
struct CheckpointIn {
    format: String,
    layer_sizes: Vec<usize>,
    optimizer: OptimizerKind,
    step: u64,
    epoch: usize,
    seeds: SeedLineage,
    layers: Vec<LayerIn>,
}

pub const FORMAT: &str = "kappa-lab-checkpoint/1";

fn exact(v: f64) -> String {
    format!("{v:.16e}")
}

fn raw_list(values: &[f64]) -> Result<Box<RawValue>> {
    let mut s = String::with_capacity(values.len() * 24 + 2);
    s.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{}", exact(*v));
    }
    s.push(']');
    RawValue::from_string(s).map_err(|e| Error::Serde(e.to_string()))
}

fn raw_matrix(t: &Tensor) -> Result<Box<RawValue>> {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut s = String::with_capacity(t.len() * 24 + rows * 3);
    s.push('[');
    for r in 0..rows {
        if r > 0 {
            s.push(',');
        }
        s.push_str(raw_list(&t.data()[r * cols..(r + 1) * cols])?.get());
    }
    s.push(']');
    RawValue::from_string(s).map_err(|e| Error::Serde(e.to_string()))
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let layers = self
            .model
            .layers()
            .iter()
            .map(|l| {
                Ok(LayerOut {
                    weight: raw_matrix(&l.weight)?,
                    bias: raw_list(l.bias.data())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = CheckpointOut {
            format: FORMAT,
            layer_sizes: self.model.layer_sizes(),
            optimizer: self.optimizer,
            step: self.step,
            epoch: self.epoch,
            seeds: &self.seeds,
            layers,
        };
        serde_json::to_string_pretty(&out).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: CheckpointIn =
            serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if raw.format != FORMAT {
            return Err(Error::config(
                "format",
                format!("unsupported `{}`", raw.format),
            ));
        }
        let layers = raw
            .layers
            .into_iter()
            .map(|l| {
                let d_out = l.bias.len();
                Ok(Linear {
                    weight: Tensor::from_rows(&l.weight)?,
                    bias: Tensor::new(vec![d_out], l.bias)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Model::from_layers(layers)?;
        if model.layer_sizes() != raw.layer_sizes {
            return Err(Error::dim(
                "layer_sizes",
                raw.layer_sizes,
                model.layer_sizes(),
            ));
        }
        Ok(Checkpoint {
            model,
            optimizer: raw.optimizer,
            step: raw.step,
            epoch: raw.epoch,
            seeds: raw.seeds,
        })
    }

    /// Writes the checkpoint, creating parent directories as needed.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(seed: u64) -> Checkpoint {
        Checkpoint {
            model: Model::mlp(&[3, 5, 2], seed).unwrap(),
            optimizer: OptimizerKind::Adam,
            step: 42,
            epoch: 3,
            seeds: SeedLineage {
                base_seed: seed,
                init_seed: seed ^ 1,
                derived: vec![("shuffle".into(), 99)],
            },
        }
    }

    #[test]
    fn round_trip_is_value_exact() {
        let ck = sample(5);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_unknown_format_and_bad_shapes() {
        let text = sample(1).to_json().unwrap();
        let renamed = text.replace(FORMAT, "other/9");
        assert!(Checkpoint::from_json(&renamed).is_err());
        let resized = text.replace("\"layer_sizes\": [\n    3,", "\"layer_sizes\": [\n    4,");
        assert!(Checkpoint::from_json(&resized).is_err());
    }

    proptest! {
        #[test]
        fn any_finite_float_survives(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
            let text = exact(v);
            let back: f64 = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
