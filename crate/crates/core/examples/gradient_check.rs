//! Reverse-mode gradients of a two-layer MLP loss against central finite
//! differences.
//!
//!     cargo run --release --example gradient_check

use kappa_lab::rng::rng_for;
use kappa_lab::{Graph, Model, Result, Tensor};
use rand::Rng;

fn loss(model: &Model, x: &Tensor, y: &[usize]) -> Result<f64> {
    Ok(model.loss_and_gradients(x, y)?.0)
}

fn main() -> Result<()> {
    let model = Model::mlp(&[5, 8, 3], 7)?;
    let mut rng = rng_for(7, "example-inputs", 0);
    let x = Tensor::matrix(4, 5, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let y = [0, 2, 1, 2];

    // Parameter gradients.
    let (_, grads) = model.loss_and_gradients(&x, &y)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for l in 0..model.layers().len() {
        for (which, g) in [(0, &grads[2 * l]), (1, &grads[2 * l + 1])] {
            for i in 0..g.len() {
                let bump = |delta: f64| -> Result<f64> {
                    let mut layers = model.layers().to_vec();
                    let t = if which == 0 {
                        &mut layers[l].weight
                    } else {
                        &mut layers[l].bias
                    };
                    t.data_mut()[i] += delta;
                    loss(&Model::from_layers(layers)?, &x, &y)
                };
                let fd = (bump(h)? - bump(-h)?) / (2.0 * h);
                let an = g.data()[i];
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
            }
        }
    }
    println!(
        "parameters: {} gradients, worst relative error {worst:.2e}",
        model.parameter_count()
    );

    // Input gradient through an explicit graph.
    let mut g = Graph::new();
    let input = g.variable(x.clone());
    let params = model.bind(&mut g, false);
    let logits = model.forward(&mut g, input, &params)?;
    let l = g.softmax_cross_entropy(logits, &y)?;
    g.backward(l)?;
    let gx = g.grad(input);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut m = x.clone();
        m.data_mut()[i] -= h;
        let fd = (loss(&model, &p, &y)? - loss(&model, &m, &y)?) / (2.0 * h);
        worst = worst.max((gx.data()[i] - fd).abs() / gx.data()[i].abs().max(fd.abs()).max(1e-8));
    }
    println!(
        "inputs: {} gradients, worst relative error {worst:.2e}",
        x.len()
    );
    Ok(())
}
