//! Multilayer perceptron classifiers: ReLU between layers, identity output.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Reduction, Var};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::tensor::Tensor;

/// One affine layer: `weight` is `[d_in, d_out]`, `bias` is `[d_out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// The score function: logits in `R^C` for an input in `[0,1]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    layer_sizes: Vec<usize>,
    layers: Vec<Linear>,
}

/// Graph handles for a model's parameters, in `[w0, b0, w1, b1, ...]` order.
#[derive(Clone, Debug)]
pub struct ParamVars(pub Vec<Var>);

impl Model {
    /// Builds an MLP with `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// weights and biases. Bit-reproducible per seed.
    pub fn mlp(layer_sizes: &[usize], seed: u64) -> Result<Model> {
        validate_sizes(layer_sizes)?;
        let mut rng = rng::rng_for(seed, "mlp-init", 0);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let bound = 1.0 / (d_in as f64).sqrt();
                let weight = (0..d_in * d_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                let bias = (0..d_out).map(|_| rng.gen_range(-bound..bound)).collect();
                Linear {
                    weight: Tensor::from_parts(vec![d_in, d_out], weight),
                    bias: Tensor::from_parts(vec![d_out], bias),
                }
            })
            .collect();
        Ok(Model {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    /// Assembles a model from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Linear>) -> Result<Model> {
        let first = layers
            .first()
            .ok_or_else(|| Error::config("layers", "at least one layer is required"))?;
        let mut sizes = vec![first.weight.shape()[0]];
        for (i, layer) in layers.iter().enumerate() {
            let ws = layer.weight.shape();
            if ws.len() != 2 || ws[0] != sizes[i] {
                return Err(Error::dim("weights", [sizes[i], 0], ws));
            }
            if layer.bias.shape() != [ws[1]] {
                return Err(Error::dim("bias", [ws[1]], layer.bias.shape()));
            }
            sizes.push(ws[1]);
        }
        validate_sizes(&sizes)?;
        Ok(Model {
            layer_sizes: sizes,
            layers,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters in `[w0, b0, w1, b1, ...]` order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() > 2 || x.cols() != self.input_dim() {
            return Err(Error::dim(
                "input",
                format!("[n, {}]", self.input_dim()),
                x.shape(),
            ));
        }
        Ok(())
    }

    /// Registers parameters on `g`, tracked when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        let vars = self
            .parameters()
            .into_iter()
            .map(|p| {
                if trainable {
                    g.variable(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        ParamVars(vars)
    }

    /// Records the forward pass on `g` and returns the logits node.
    pub fn forward(&self, g: &mut Graph, input: Var, params: &ParamVars) -> Result<Var> {
        let mut h = input;
        let depth = self.layers.len();
        for (i, pair) in params.0.chunks(2).enumerate() {
            h = g.affine(h, pair[0], pair[1])?;
            if i + 1 < depth {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Graph-free forward pass: `[n, C]` logits for `[n, d]` inputs.
    /// Uses the same kernels as [`Model::forward`], so values agree exactly.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let rows = x.rows();
        let mut h = x.data().to_vec();
        let mut width = self.input_dim();
        let depth = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = linalg::affine_forward(&h, rows, width, layer.weight.data(), layer.bias.data());
            width = layer.bias.len();
            if i + 1 < depth {
                linalg::relu_inplace(&mut h);
            }
        }
        Ok(Tensor::from_parts(vec![rows, width], h))
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        Ok((0..z.rows()).map(|i| linalg::argmax(z.row(i))).collect())
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<usize> {
        let t = Tensor::vector(x.to_vec())?;
        Ok(self.predict(&t)?[0])
    }

    /// Softmax probabilities per row.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.logits(x)?;
        let c = z.cols();
        let mut out = vec![0.0; z.len()];
        for i in 0..z.rows() {
            linalg::softmax_row(z.row(i), &mut out[i * c..(i + 1) * c]);
        }
        Ok(Tensor::from_parts(vec![z.rows(), c], out))
    }

    /// Per-sample cross-entropy, predictions.
    pub fn losses_and_predictions(
        &self,
        x: &Tensor,
        labels: &[usize],
    ) -> Result<(Vec<f64>, Vec<usize>)> {
        let z = self.logits(x)?;
        if labels.len() != z.rows() {
            return Err(Error::dim("labels", z.rows(), labels.len()));
        }
        let c = z.cols();
        let mut scratch = vec![0.0; c];
        let mut losses = Vec::with_capacity(labels.len());
        let mut preds = Vec::with_capacity(labels.len());
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::Label {
                    index: i,
                    label: y,
                    classes: c,
                });
            }
            let row = z.row(i);
            let lse = linalg::softmax_row(row, &mut scratch);
            losses.push((lse - row[y]).max(0.0));
            preds.push(linalg::argmax(row));
        }
        Ok((losses, preds))
    }

    /// Gradient of each sample's own loss with respect to its input row,
    /// together with the logits at `x`. Parameters are untouched.
    pub fn input_gradients(&self, x: &Tensor, labels: &[usize]) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let input = g.variable(x.as_matrix());
        let logits = self.forward(&mut g, input, &params)?;
        let loss = g.cross_entropy(logits, labels, Reduction::Sum)?;
        g.backward(loss)?;
        let grad = g.grad(input).reshape(x.shape().to_vec())?;
        Ok((grad, g.value(logits).clone()))
    }

    /// `∇_x ℓ(f(x), y)` for a single sample.
    pub fn input_gradient(&self, x: &Tensor, y: usize) -> Result<Tensor> {
        if x.rows() != 1 {
            return Err(Error::dim("input", "a single sample", x.shape()));
        }
        Ok(self.input_gradients(x, &[y])?.0)
    }

    /// Batch-mean loss and its gradient for every parameter.
    pub fn loss_and_gradients(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let params = self.bind(&mut g, true);
        let input = g.constant(x.as_matrix());
        let logits = self.forward(&mut g, input, &params)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        g.backward(loss)?;
        let value = g.value(loss).item().expect("scalar");
        let grads = params.0.iter().map(|&v| g.grad(v)).collect();
        Ok((value, grads))
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::config(
            "layer_sizes",
            "at least an input and an output layer are required",
        ));
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::config(
            format!("layer_sizes[{i}]"),
            "layer widths must be positive",
        ));
    }
    Ok(())
}

/// `∇_x ℓ(f(x), y)` for one sample.
pub fn input_gradient(model: &Model, x: &Tensor, y: usize) -> Result<Tensor> {
    model.input_gradient(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_model(w: &[f64], b: &[f64], d_in: usize) -> Model {
        let d_out = b.len();
        Model::from_layers(vec![Linear {
            weight: Tensor::new(vec![d_in, d_out], w.to_vec()).unwrap(),
            bias: Tensor::new(vec![d_out], b.to_vec()).unwrap(),
        }])
        .unwrap()
    }

    #[test]
    fn mlp_is_deterministic_per_seed() {
        let sizes = [2, 32, 32, 32, 32, 2];
        let a = Model::mlp(&sizes, 11).unwrap();
        let b = Model::mlp(&sizes, 11).unwrap();
        let c = Model::mlp(&sizes, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.layers().len(), 5);
        assert_eq!(a.class_count(), 2);
    }

    #[test]
    fn mlp_init_respects_fan_in_bound() {
        let m = Model::mlp(&[784, 16, 10], 3).unwrap();
        let bound = 1.0 / 784f64.sqrt();
        assert!(m.layers()[0].weight.data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn mlp_rejects_bad_sizes() {
        assert!(matches!(Model::mlp(&[3], 0), Err(Error::Config { .. })));
        assert!(matches!(Model::mlp(&[], 0), Err(Error::Config { .. })));
        assert!(matches!(
            Model::mlp(&[3, 0, 2], 0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn predict_argmax_and_ties() {
        // identity map on two features: logits == input
        let m = linear_model(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2);
        assert_eq!(m.predict_one(&[0.1, 0.9]).unwrap(), 1);
        assert_eq!(m.predict_one(&[0.5, 0.5]).unwrap(), 0);
    }

    #[test]
    fn batch_prediction_matches_single() {
        let m = Model::mlp(&[5, 8, 4], 9).unwrap();
        let x = Tensor::new(
            vec![7, 5],
            (0..35).map(|i| ((i * 37) % 11) as f64 / 11.0).collect(),
        )
        .unwrap();
        let batch = m.predict(&x).unwrap();
        for (i, &p) in batch.iter().enumerate() {
            assert_eq!(m.predict_one(x.row(i)).unwrap(), p);
        }
    }

    #[test]
    fn predict_shape_mismatch() {
        let m = Model::mlp(&[3, 2], 0).unwrap();
        assert!(matches!(
            m.predict(&Tensor::zeros(&[2, 4])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn input_gradient_of_linear_two_class_model() {
        // logits = [w0 x + b0, w1 x + b1]; d loss / dx = (p1 - 1[y=1]) (w1 - w0)
        let (w0, w1, b0, b1) = (0.7, -1.3, 0.2, 0.05);
        let m = linear_model(&[w0, w1], &[b0, b1], 1);
        let x = 0.4;
        let z0 = w0 * x + b0;
        let z1 = w1 * x + b1;
        let p1 = 1.0 / (1.0 + (z0 - z1).exp());
        for y in 0..2 {
            let expected = if y == 1 {
                (p1 - 1.0) * (w1 - w0)
            } else {
                p1 * (w1 - w0)
            };
            let g = m
                .input_gradient(&Tensor::vector(vec![x]).unwrap(), y)
                .unwrap();
            assert!((g.data()[0] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn input_gradient_vanishes_when_saturated() {
        let m = linear_model(&[100.0, -100.0], &[0.0, 0.0], 1);
        let g = m
            .input_gradient(&Tensor::vector(vec![1.0]).unwrap(), 0)
            .unwrap();
        assert!(g.data()[0].abs() < 1e-8);
    }

    #[test]
    fn input_gradient_leaves_parameters_untouched() {
        let m = Model::mlp(&[4, 6, 3], 2).unwrap();
        let before = m.clone();
        let x = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        m.input_gradient(&x, 2).unwrap();
        assert_eq!(m, before);
    }
}
