//! ℓ∞ projected gradient descent and the geometry value κ.
//!
//! κ of a sample is the number of completed PGD iterations after which the
//! model's prediction first disagrees with the label the attack is run
//! against. A sample that is already misclassified at the starting point
//! has κ = 0; one that survives the whole budget reports κ = `max_steps`
//! with the `saturated` flag set.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Model;
use crate::parallel;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub max_steps: usize,
    #[serde(default)]
    pub random_start: bool,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    /// A deterministic PGD configuration without random start.
    pub fn new(epsilon: f64, alpha: f64, max_steps: usize) -> Self {
        AttackConfig {
            epsilon,
            alpha,
            max_steps,
            random_start: false,
            seed: 0,
        }
    }

    /// The evaluation attack: `steps` iterations with `α = ε/4` and a random
    /// start.
    pub fn evaluation(epsilon: f64, steps: usize, seed: u64) -> Self {
        AttackConfig::new(epsilon, epsilon / 4.0, steps).with_random_start(seed)
    }

    pub fn with_random_start(mut self, seed: u64) -> Self {
        self.random_start = true;
        self.seed = seed;
        self
    }

    pub fn without_random_start(mut self) -> Self {
        self.random_start = false;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("attack.epsilon", "must be > 0"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("attack.alpha", "must be > 0"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("attack.max_steps", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KappaRecord {
    pub sample_index: usize,
    pub kappa: usize,
    pub saturated: bool,
}

/// Elementwise sign with `sign(0) = 0`.
pub fn sign(g: &Tensor) -> Tensor {
    let data = g.data().iter().map(|&v| sign_of(v)).collect();
    Tensor::from_parts(g.shape().to_vec(), data)
}

fn sign_of(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Ball bounds tightened by an ulp where rounding of `center ± ε` would
/// otherwise put them more than ε away in floating point.
#[inline]
fn ball_bounds(center: f64, epsilon: f64) -> (f64, f64) {
    let mut lo = center - epsilon;
    while center - lo > epsilon {
        lo = lo.next_up();
    }
    let mut hi = center + epsilon;
    while hi - center > epsilon {
        hi = hi.next_down();
    }
    (lo, hi)
}

#[inline]
pub(crate) fn clamp_into(v: f64, center: f64, epsilon: f64) -> f64 {
    let (lo, hi) = ball_bounds(center, epsilon);
    v.clamp(lo, hi).clamp(0.0, 1.0)
}

/// Clamps `x` into the ε-ball around `x0`, then into `[0,1]`.
pub fn project(x: &Tensor, x0: &Tensor, epsilon: f64) -> Result<Tensor> {
    if x.shape() != x0.shape() {
        return Err(Error::dim("x", x0.shape(), x.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(x0.data())
        .map(|(&v, &c)| clamp_into(v, c, epsilon))
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

fn check_batch(model: &Model, x: &Tensor, labels: &[usize], ids: &[usize]) -> Result<()> {
    if x.shape().len() > 2 || x.cols() != model.input_dim() {
        return Err(Error::dim(
            "input",
            format!("[n, {}]", model.input_dim()),
            x.shape(),
        ));
    }
    if labels.len() != x.rows() {
        return Err(Error::dim("labels", x.rows(), labels.len()));
    }
    if ids.len() != x.rows() {
        return Err(Error::dim("sample_ids", x.rows(), ids.len()));
    }
    let c = model.class_count();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::Label {
            index,
            label,
            classes: c,
        });
    }
    Ok(())
}

/// Starting iterate: the natural point, or the natural point plus
/// `uniform[-ε, ε]` noise clamped to `[0,1]`. The noise for sample `id` is
/// drawn from its own stream, so it does not depend on batch composition.
pub fn start_point(x: &[f64], id: usize, cfg: &AttackConfig) -> Vec<f64> {
    if !cfg.random_start {
        return x.to_vec();
    }
    let mut r = rng::rng_for(cfg.seed, "pgd-random-start", id as u64);
    x.iter()
        .map(|&v| clamp_into(v + r.gen_range(-cfg.epsilon..=cfg.epsilon), v, cfg.epsilon))
        .collect()
}

struct Trajectory {
    adversarial: Vec<f64>,
    first_flip: Vec<Option<usize>>,
}

/// Runs PGD on a batch. When `stop_when_all_flipped` is set the loop ends as
/// soon as every sample has been misclassified once (κ is then final, the
/// iterate is not).
fn run_pgd(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    ids: &[usize],
    cfg: &AttackConfig,
    stop_when_all_flipped: bool,
) -> Result<Trajectory> {
    let d = x.cols();
    let n = x.rows();
    let natural = x.data();
    let mut current = Vec::with_capacity(n * d);
    for (i, &id) in ids.iter().enumerate() {
        current.extend(start_point(&natural[i * d..(i + 1) * d], id, cfg));
    }
    let mut first_flip = vec![None; n];
    let mut step = 0;
    loop {
        let iterate = Tensor::from_parts(vec![n, d], current);
        let need_grad = step < cfg.max_steps;
        let logits = if need_grad {
            let (grad, logits) = model.input_gradients(&iterate, labels)?;
            current = iterate.into_data();
            for (i, row) in current.chunks_mut(d).enumerate() {
                let g = grad.row(i);
                let x0 = &natural[i * d..(i + 1) * d];
                for ((v, &gi), &c) in row.iter_mut().zip(g).zip(x0) {
                    *v = clamp_into(*v + cfg.alpha * sign_of(gi), c, cfg.epsilon);
                }
            }
            logits
        } else {
            let logits = model.logits(&iterate)?;
            current = iterate.into_data();
            logits
        };
        // `logits` belong to iterate number `step`
        for (i, flip) in first_flip.iter_mut().enumerate() {
            if flip.is_none() && linalg::argmax(logits.row(i)) != labels[i] {
                *flip = Some(step);
            }
        }
        if step == cfg.max_steps
            || (stop_when_all_flipped && first_flip.iter().all(Option::is_some))
        {
            break;
        }
        step += 1;
    }
    Ok(Trajectory {
        adversarial: current,
        first_flip,
    })
}

/// PGD adversarial examples for a batch `x` of shape `[n, d]`, attacking
/// `labels`. `ids` key the per-sample random-start streams.
pub fn pgd_attack_batch(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    ids: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let x = x.as_matrix();
    check_batch(model, &x, labels, ids)?;
    let d = x.cols();
    let chunks = parallel::map_row_chunks(x.rows(), |range| {
        let part = x.select_rows(&range.clone().collect::<Vec<_>>());
        let t = run_pgd(
            model,
            &part,
            &labels[range.clone()],
            &ids[range],
            cfg,
            false,
        )?;
        Ok(t.adversarial)
    })?;
    Ok(Tensor::from_parts(vec![x.rows(), d], chunks.concat()))
}

/// PGD adversarial example for one sample (`[d]` or `[1, d]`).
pub fn pgd_attack(model: &Model, x: &Tensor, y: usize, cfg: &AttackConfig) -> Result<Tensor> {
    if x.rows() != 1 {
        return Err(Error::dim("input", "a single sample", x.shape()));
    }
    let adv = pgd_attack_batch(model, x, &[y], &[0], cfg)?;
    adv.reshape(x.shape().to_vec())
}

/// Geometry values for a batch, measured against `labels`.
pub fn geometry_values(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    ids: &[usize],
    cfg: &AttackConfig,
) -> Result<Vec<KappaRecord>> {
    cfg.validate()?;
    let x = x.as_matrix();
    check_batch(model, &x, labels, ids)?;
    let chunks = parallel::map_row_chunks(x.rows(), |range| {
        let part = x.select_rows(&range.clone().collect::<Vec<_>>());
        let t = run_pgd(
            model,
            &part,
            &labels[range.clone()],
            &ids[range.clone()],
            cfg,
            true,
        )?;
        Ok(t.first_flip
            .iter()
            .zip(&ids[range])
            .map(|(flip, &id)| match flip {
                Some(k) => KappaRecord {
                    sample_index: id,
                    kappa: *k,
                    saturated: false,
                },
                None => KappaRecord {
                    sample_index: id,
                    kappa: cfg.max_steps,
                    saturated: true,
                },
            })
            .collect::<Vec<_>>())
    })?;
    Ok(chunks.concat())
}

/// Geometry value of one sample.
pub fn geometry_value(
    model: &Model,
    x: &Tensor,
    y: usize,
    cfg: &AttackConfig,
) -> Result<KappaRecord> {
    if x.rows() != 1 {
        return Err(Error::dim("input", "a single sample", x.shape()));
    }
    Ok(geometry_values(model, x, &[y], &[0], cfg)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Linear;

    fn vecf(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn sign_cases() {
        let g = vecf(&[-2.0, 0.0, 5.0]);
        assert_eq!(sign(&g).data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(sign(&sign(&g)), sign(&g));
        let neg = vecf(&[2.0, 0.0, -5.0]);
        let flipped: Vec<f64> = sign(&g).data().iter().map(|v| -v).collect();
        assert_eq!(sign(&neg).data(), flipped.as_slice());
    }

    #[test]
    fn project_cases() {
        let inside = project(&vecf(&[0.55]), &vecf(&[0.5]), 0.1).unwrap();
        assert_eq!(inside.data(), &[0.55]);
        let ball = project(&vecf(&[0.9]), &vecf(&[0.5]), 0.1).unwrap();
        assert!((ball.data()[0] - 0.6).abs() < 1e-15);
        let domain = project(&vecf(&[-0.2]), &vecf(&[0.05]), 0.1).unwrap();
        assert_eq!(domain.data(), &[0.0]);
        assert!(project(&vecf(&[0.1, 0.2]), &vecf(&[0.1]), 0.1).is_err());
    }

    #[test]
    fn constant_model_leaves_point_in_place() {
        let m = Model::from_layers(vec![Linear {
            weight: Tensor::zeros(&[3, 2]),
            bias: vecf(&[0.0, 1.0]),
        }])
        .unwrap();
        let x = vecf(&[0.2, 0.4, 0.6]);
        let adv = pgd_attack(&m, &x, 1, &AttackConfig::new(0.3, 0.1, 7)).unwrap();
        assert_eq!(adv, x);
    }

    #[test]
    fn invalid_configs_rejected() {
        let m = Model::mlp(&[2, 2], 0).unwrap();
        let x = vecf(&[0.5, 0.5]);
        for cfg in [
            AttackConfig::new(0.0, 0.1, 1),
            AttackConfig::new(0.1, -0.1, 1),
            AttackConfig::new(0.1, 0.1, 0),
        ] {
            assert!(matches!(
                pgd_attack(&m, &x, 0, &cfg),
                Err(Error::Config { .. })
            ));
        }
    }

    /// 1-D two-class model whose boundary is the line `x = boundary`:
    /// class 1 above it, class 0 below.
    fn threshold_model(boundary: f64) -> Model {
        Model::from_layers(vec![Linear {
            weight: Tensor::new(vec![1, 2], vec![-1.0, 1.0]).unwrap(),
            bias: vecf(&[boundary, -boundary]),
        }])
        .unwrap()
    }

    #[test]
    fn kappa_counts_steps_to_cross_boundary() {
        // boundary sits 2.5 steps above x: iterates 0.2, 0.3, 0.4, 0.5
        let alpha = 0.1;
        let m = threshold_model(0.2 + 2.5 * alpha);
        let x = vecf(&[0.2]);
        let k = geometry_value(&m, &x, 0, &AttackConfig::new(0.9, alpha, 10)).unwrap();
        assert_eq!(k.kappa, 3);
        assert!(!k.saturated);
    }

    #[test]
    fn kappa_zero_when_misclassified_at_start() {
        let m = threshold_model(0.5);
        let k = geometry_value(&m, &vecf(&[0.8]), 0, &AttackConfig::new(0.1, 0.01, 5)).unwrap();
        assert_eq!(k.kappa, 0);
    }

    #[test]
    fn kappa_saturates_when_ball_excludes_boundary() {
        let m = threshold_model(0.9);
        let k = geometry_value(&m, &vecf(&[0.1]), 0, &AttackConfig::new(0.1, 0.05, 10)).unwrap();
        assert_eq!(k.kappa, 10);
        assert!(k.saturated);
    }

    #[test]
    fn kappa_at_final_step_is_not_saturated() {
        let m = threshold_model(0.25);
        let k = geometry_value(&m, &vecf(&[0.0]), 0, &AttackConfig::new(1.0, 0.1, 3)).unwrap();
        assert_eq!((k.kappa, k.saturated), (3, false));
    }

    #[test]
    fn random_start_stays_in_ball_and_is_seeded() {
        let cfg = AttackConfig::new(0.1, 0.02, 1).with_random_start(5);
        let x = [0.0, 0.5, 1.0, 0.95];
        let a = start_point(&x, 3, &cfg);
        assert_eq!(a, start_point(&x, 3, &cfg));
        assert_ne!(a, start_point(&x, 4, &cfg));
        for (v, c) in a.iter().zip(x) {
            assert!((v - c).abs() <= 0.1 && (0.0..=1.0).contains(v));
        }
    }
}
