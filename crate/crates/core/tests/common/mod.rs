#![allow(dead_code)]

use std::path::{Path, PathBuf};

use kappa_lab::autodiff::Reduction;
use kappa_lab::rng::{rng_for, Rng};
use kappa_lab::{Graph, Result, Tensor, Var};
use rand::Rng as _;

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

pub fn mnist_available() -> bool {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/mnist/train-images-idx3-ubyte")
        .exists()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Affine,
    Relu,
    CrossEntropyMean,
    CrossEntropySum,
    Sum,
    Scale,
    Add,
}

pub const OPS: [Op; 7] = [
    Op::Affine,
    Op::Relu,
    Op::CrossEntropyMean,
    Op::CrossEntropySum,
    Op::Sum,
    Op::Scale,
    Op::Add,
];

fn uniform(r: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero, so ReLU kinks stay outside the
/// finite-difference stencil.
fn away_from_zero(r: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(0.05..2.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// One randomized instance: the op's inputs plus a fixed random head that
/// maps non-scalar outputs to a scalar loss.
pub struct Case {
    pub op: Op,
    pub inputs: Vec<Tensor>,
    labels: Vec<usize>,
    factor: f64,
    head: (Tensor, Tensor, Vec<usize>),
}

impl Case {
    pub fn random(op: Op, seed: u64) -> Case {
        let mut r = rng_for(seed, "gradcheck", op as u64);
        let n = r.gen_range(1..5);
        let d = r.gen_range(1..6);
        let m = r.gen_range(1..5);
        let c = r.gen_range(2..6);
        let inputs = match op {
            Op::Affine => vec![
                uniform(&mut r, &[n, d], -1.0, 1.0),
                uniform(&mut r, &[d, m], -1.0, 1.0),
                uniform(&mut r, &[m], -1.0, 1.0),
            ],
            Op::Relu => vec![away_from_zero(&mut r, &[n, m])],
            Op::CrossEntropyMean | Op::CrossEntropySum => vec![uniform(&mut r, &[n, c], -3.0, 3.0)],
            Op::Sum | Op::Scale => vec![uniform(&mut r, &[n, m], -1.0, 1.0)],
            Op::Add => vec![
                uniform(&mut r, &[n, m], -1.0, 1.0),
                uniform(&mut r, &[n, m], -1.0, 1.0),
            ],
        };
        let labels = (0..n).map(|_| r.gen_range(0..c)).collect();
        let factor = r.gen_range(-2.0..2.0);
        let head_w = uniform(&mut r, &[m, 3], -1.0, 1.0);
        let head_b = uniform(&mut r, &[3], -1.0, 1.0);
        let head_y = (0..n).map(|_| r.gen_range(0..3)).collect();
        Case {
            op,
            inputs,
            labels,
            factor,
            head: (head_w, head_b, head_y),
        }
    }

    fn build(&self, g: &mut Graph, vars: &[Var]) -> Result<Var> {
        let out = match self.op {
            Op::Affine => g.affine(vars[0], vars[1], vars[2])?,
            Op::Relu => g.relu(vars[0]),
            Op::CrossEntropyMean => return g.cross_entropy(vars[0], &self.labels, Reduction::Mean),
            Op::CrossEntropySum => return g.cross_entropy(vars[0], &self.labels, Reduction::Sum),
            Op::Sum => return Ok(g.sum(vars[0])),
            Op::Scale => g.scale(vars[0], self.factor),
            Op::Add => g.add(vars[0], vars[1])?,
        };
        let w = g.constant(self.head.0.clone());
        let b = g.constant(self.head.1.clone());
        let z = g.affine(out, w, b)?;
        g.softmax_cross_entropy(z, &self.head.2)
    }

    pub fn loss(&self, inputs: &[Tensor]) -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let l = self.build(&mut g, &vars)?;
        Ok(g.value(l).item().unwrap())
    }

    pub fn gradients(&self) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| g.variable(t.clone())).collect();
        let l = self.build(&mut g, &vars)?;
        g.backward(l)?;
        Ok(vars.iter().map(|&v| g.grad(v)).collect())
    }

    /// Largest relative error between analytic and central-difference
    /// gradients over every input coordinate.
    pub fn max_relative_error(&self, h: f64) -> Result<f64> {
        let grads = self.gradients()?;
        let mut worst: f64 = 0.0;
        for (k, grad) in grads.iter().enumerate() {
            for i in 0..grad.len() {
                let mut plus = self.inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = self.inputs.clone();
                minus[k].data_mut()[i] -= h;
                let fd = (self.loss(&plus)? - self.loss(&minus)?) / (2.0 * h);
                let an = grad.data()[i];
                worst = worst.max(relative_error(an, fd));
            }
        }
        Ok(worst)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
