//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: nodes are appended in evaluation order, so walking
//! the tape backwards from the root visits every node after all of its
//! consumers. Graphs are built fresh for each forward pass and dropped
//! afterwards.

use crate::error::{Error, Result};
use crate::linalg::{self, MatRef};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How per-sample cross-entropy terms are reduced to a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    /// Summed losses; row `i` of the logits gradient is then exactly the
    /// gradient of sample `i`'s own loss.
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
        reduction: Reduction,
    },
    Sum {
        input: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf treated as a constant: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Gradient of the last backward root with respect to `var`; zeros when
    /// nothing flowed into it.
    pub fn grad(&self, var: Var) -> Tensor {
        let node = &self.nodes[var.0];
        match &node.grad {
            Some(g) => Tensor::from_parts(node.value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all gradients and re-arms [`Graph::backward`].
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `input · weights + bias`, with `input` of shape `[n, d_in]` (or a
    /// single `[d_in]` row), `weights` `[d_in, d_out]` and `bias` `[d_out]`.
    pub fn affine(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weights.0].value;
        let b = &self.nodes[bias.0].value;
        if w.shape().len() != 2 {
            return Err(Error::dim("weights", "[d_in, d_out]", w.shape()));
        }
        let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
        if x.shape().len() > 2 || x.cols() != d_in {
            return Err(Error::dim("input", format!("[n, {d_in}]"), x.shape()));
        }
        if b.shape() != [d_out] {
            return Err(Error::dim("bias", [d_out], b.shape()));
        }
        let rows = x.rows();
        let data = linalg::affine_forward(x.data(), rows, d_in, w.data(), b.data());
        let shape = if x.shape().len() == 1 {
            vec![d_out]
        } else {
            vec![rows, d_out]
        };
        let value = Tensor::from_parts(shape, data);
        let rg = self.requires(&[input, weights, bias]);
        Ok(self.push(
            value,
            rg,
            Op::Affine {
                input,
                weights,
                bias,
            },
        ))
    }

    /// Elementwise `max(0, x)`. The subgradient at exactly zero is zero.
    pub fn relu(&mut self, input: Var) -> Var {
        let mut value = self.nodes[input.0].value.clone();
        linalg::relu_inplace(value.data_mut());
        let rg = self.requires(&[input]);
        self.push(value, rg, Op::Relu { input })
    }

    /// Batch-mean cross-entropy of `softmax(logits)` against `labels`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.cross_entropy(logits, labels, Reduction::Mean)
    }

    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<Var> {
        let z = &self.nodes[logits.0].value;
        if z.shape().len() > 2 {
            return Err(Error::dim("logits", "[n, C]", z.shape()));
        }
        let (rows, classes) = (z.rows(), z.cols());
        if labels.len() != rows {
            return Err(Error::dim("labels", rows, labels.len()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Label {
                index,
                label,
                classes,
            });
        }
        let mut probs = vec![0.0; rows * classes];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            let lse = linalg::softmax_row(row, &mut probs[i * classes..(i + 1) * classes]);
            total += (lse - row[y]).max(0.0);
        }
        let loss = match reduction {
            Reduction::Mean => total / rows as f64,
            Reduction::Sum => total,
        };
        let rg = self.requires(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                reduction,
            },
        ))
    }

    /// Sum of all entries.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.nodes[input.0].value.data().iter().sum();
        let rg = self.requires(&[input]);
        self.push(Tensor::scalar(total), rg, Op::Sum { input })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let src = &self.nodes[input.0].value;
        let data = src.data().iter().map(|v| v * factor).collect();
        let value = Tensor::from_parts(src.shape().to_vec(), data);
        let rg = self.requires(&[input]);
        self.push(value, rg, Op::Scale { input, factor })
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let a = &self.nodes[lhs.0].value;
        let b = &self.nodes[rhs.0].value;
        if a.shape() != b.shape() {
            return Err(Error::dim("rhs", a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(a.shape().to_vec(), data);
        let rg = self.requires(&[lhs, rhs]);
        Ok(self.push(value, rg, Op::Add { lhs, rhs }))
    }

    fn accumulate(&mut self, var: Var, delta: &[f64]) {
        let node = &mut self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            None => node.grad = Some(delta.to_vec()),
        }
    }

    /// Populates gradients of the scalar `root` with respect to every node
    /// it depends on. A second call needs [`Graph::zero_grad`] first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; call zero_grad first".into(),
            ));
        }
        self.backward_done = true;
        self.accumulate(root, &[1.0]);

        for idx in (0..=root.0).rev() {
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &upstream);
            self.nodes[idx].grad = Some(upstream);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, upstream: &[f64]) {
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Affine {
                input,
                weights,
                bias,
            } => {
                let (d_in, d_out) = {
                    let w = self.nodes[weights.0].value.shape();
                    (w[0], w[1])
                };
                let rows = self.nodes[input.0].value.rows();
                let up = MatRef::new(upstream, rows, d_out);
                if self.nodes[input.0].requires_grad {
                    let mut dx = vec![0.0; rows * d_in];
                    let w = &self.nodes[weights.0].value;
                    linalg::gemm(up, MatRef::new(w.data(), d_in, d_out).t(), 0.0, &mut dx);
                    self.accumulate(*input, &dx);
                }
                if self.nodes[weights.0].requires_grad {
                    let mut dw = vec![0.0; d_in * d_out];
                    let x = &self.nodes[input.0].value;
                    linalg::gemm(MatRef::new(x.data(), rows, d_in).t(), up, 0.0, &mut dw);
                    self.accumulate(*weights, &dw);
                }
                if self.nodes[bias.0].requires_grad {
                    let mut db = vec![0.0; d_out];
                    for r in 0..rows {
                        for (acc, g) in db.iter_mut().zip(&upstream[r * d_out..(r + 1) * d_out]) {
                            *acc += g;
                        }
                    }
                    self.accumulate(*bias, &db);
                }
            }
            Op::Relu { input } => {
                let x = self.nodes[input.0].value.data();
                let delta: Vec<f64> = x
                    .iter()
                    .zip(upstream)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(*input, &delta);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
                reduction,
            } => {
                let classes = self.nodes[logits.0].value.cols();
                let scale = match reduction {
                    Reduction::Mean => upstream[0] / labels.len() as f64,
                    Reduction::Sum => upstream[0],
                };
                let mut delta = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    delta[i * classes + y] -= 1.0;
                }
                delta.iter_mut().for_each(|d| *d *= scale);
                self.accumulate(*logits, &delta);
            }
            Op::Sum { input } => {
                let n = self.nodes[input.0].value.len();
                self.accumulate(*input, &vec![upstream[0]; n]);
            }
            Op::Scale { input, factor } => {
                let delta: Vec<f64> = upstream.iter().map(|g| g * factor).collect();
                self.accumulate(*input, &delta);
            }
            Op::Add { lhs, rhs } => {
                self.accumulate(*lhs, upstream);
                self.accumulate(*rhs, upstream);
            }
        }
        self.nodes[idx].op = op;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn affine_zero_input_yields_bias_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 2]));
        let w = g.constant(t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let b = g.constant(t(&[4], &[0.5, -1.0, 2.0, 0.0]));
        let out = g.affine(x, w, b).unwrap();
        for r in 0..3 {
            assert_eq!(g.value(out).row(r), &[0.5, -1.0, 2.0, 0.0]);
        }
    }

    #[test]
    fn affine_identity_weights_copy_input() {
        let mut g = Graph::new();
        let data = [0.3, -1.5, 2.25, 7.0, 0.0, -0.125];
        let x = g.constant(t(&[2, 3], &data));
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = g.constant(t(&[3, 3], &eye));
        let b = g.constant(Tensor::zeros(&[3]));
        let out = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(out).data(), &data);
    }

    #[test]
    fn affine_shape_errors_name_operand() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let w = g.constant(Tensor::zeros(&[4, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        match g.affine(x, w, b) {
            Err(Error::Dimension { operand, .. }) => assert_eq!(operand, "input"),
            other => panic!("unexpected {other:?}"),
        }
        let w = g.constant(Tensor::zeros(&[3, 2]));
        let b = g.constant(Tensor::zeros(&[5]));
        match g.affine(x, w, b) {
            Err(Error::Dimension { operand, .. }) => assert_eq!(operand, "bias"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relu_values_and_gradients() {
        let mut g = Graph::new();
        let x = g.variable(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(r);
        g.backward(s).unwrap();
        // subgradient at exactly zero is zero
        assert_eq!(g.grad(x).data(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.variable(t(&[4], &[-1.0, -2.0, -0.5, -3.0]));
        let r = g.relu(x);
        assert!(g.value(r).data().iter().all(|&v| v == 0.0));
        let s = g.sum(r);
        g.backward(s).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 0.0));

        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let r = g.relu(x);
        g.backward(r).unwrap();
        assert_eq!(g.grad(x).item(), Some(1.0));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::filled(&[4, 10], 0.7));
        let loss = g.softmax_cross_entropy(z, &[0, 3, 9, 5]).unwrap();
        let v = g.value(loss).item().unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn cross_entropy_large_margin_vanishes() {
        let mut g = Graph::new();
        let z = g.constant(t(&[1, 3], &[40.0, 0.0, 0.0]));
        let loss = g.softmax_cross_entropy(z, &[0]).unwrap();
        let v = g.value(loss).item().unwrap();
        assert!((0.0..1e-6).contains(&v));
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[2, 3]));
        match g.softmax_cross_entropy(z, &[1, 3]) {
            Err(Error::Label { index, label, .. }) => assert_eq!((index, label), (1, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let mut g = Graph::new();
        let z = g.variable(t(&[2, 3], &[1e6, -1e6, 0.0, -1e6, 1e6, 5e5]));
        let loss = g.softmax_cross_entropy(z, &[1, 0]).unwrap();
        g.backward(loss).unwrap();
        assert!(g.value(loss).is_finite());
        assert!(g.grad(z).is_finite());
    }

    #[test]
    fn backward_sum_of_leaf_gives_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::filled(&[2, 3], 4.0));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0; 6]);
    }

    #[test]
    fn backward_on_constant_root_is_noop() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        g.backward(c).unwrap();
        assert_eq!(g.grad(c).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_repeat() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::State(_))));
        g.zero_grad();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[1.0, 1.0]);
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2], &[1.0, -2.0]));
        let a = g.scale(x, 3.0);
        let b = g.add(a, x).unwrap();
        let s = g.sum(b);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[4.0, 4.0]);
    }
}
