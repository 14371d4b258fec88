//! FGSM and PGD adversarial example generation inside an L∞ ball.
//!
//! Attacks maximize the classification loss only — no spectral term enters
//! the inner loop. Both attacks share one sign-step kernel, so PGD with one
//! iteration, no random start, and a full-budget step is bit-identical to
//! FGSM. Every emitted example satisfies `‖x_adv − x‖_∞ ≤ ε` and stays in
//! pixel range; the projection runs after every step and clipping binds last.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::one_hot;
use crate::nn::{cross_entropy_each, Model};
use crate::tensor::Graph;

pub const DEFAULT_EPSILON: f64 = 8.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// L∞ budget in [0,1] pixel units.
    pub epsilon: f64,
    /// Per-iteration step size, at most `epsilon`.
    pub step: f64,
    pub iters: usize,
    pub restarts: usize,
    /// Uniform init in the ε-ball at the start of every restart.
    pub random_init: bool,
    /// Step against the gradient instead of along it. Off by default: the
    /// inner problem is a maximization, so the ascent direction is the one
    /// that serves it.
    pub descend: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::eval_default()
    }
}

impl AttackConfig {
    /// The evaluation protocol: 50 iterations, 10 random restarts, step ε/4,
    /// ε = 8/255.
    pub fn eval_default() -> Self {
        AttackConfig {
            epsilon: DEFAULT_EPSILON,
            step: DEFAULT_EPSILON / 4.0,
            iters: 50,
            restarts: 10,
            random_init: true,
            descend: false,
            seed: 0,
        }
    }

    /// Training-time PGD: cheaper inner loop, same budget.
    pub fn train_pgd_default() -> Self {
        AttackConfig { iters: 7, restarts: 1, ..AttackConfig::eval_default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon {} outside [0,1]", self.epsilon));
        }
        if !(0.0..=self.epsilon).contains(&self.step) {
            return Err(format!("step {} outside [0, epsilon={}]", self.step, self.epsilon));
        }
        if self.iters < 1 || self.restarts < 1 {
            return Err("iters and restarts must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AtMode {
    #[default]
    None,
    Fgsm,
    Pgd,
}

impl AtMode {
    pub fn name(&self) -> &'static str {
        match self {
            AtMode::None => "none",
            AtMode::Fgsm => "fgsm",
            AtMode::Pgd => "pgd",
        }
    }

    pub fn parse(s: &str) -> Option<AtMode> {
        [AtMode::None, AtMode::Fgsm, AtMode::Pgd].into_iter().find(|m| m.name() == s)
    }
}

/// Per-pixel sign of the per-sample classification-loss gradient at `images`.
fn grad_sign(model: &Model, images: &[f64], labels: &[usize], n: usize) -> Vec<f64> {
    let [c, h, w] = model.spec.input;
    let g = Graph::new();
    let x = g.var(images.to_vec(), &[n, c, h, w]);
    let y = g.constant(one_hot(labels, model.spec.num_classes), &[n, model.spec.num_classes]);
    let bound = model.bind_frozen(&g);
    let logits = bound.forward(&x);
    // Summing the per-sample losses makes row s of the gradient exactly
    // ∇_{x_s} L_cls(x_s, y_s).
    let grad = cross_entropy_each(&logits, &y).sum().backward(&[&x], false).pop().unwrap();
    grad.with_data(|d| d.iter().map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }).collect())
}

/// Per-sample classification loss at `images`.
fn per_sample_loss(model: &Model, images: &[f64], labels: &[usize], n: usize) -> Vec<f64> {
    let [c, h, w] = model.spec.input;
    let g = Graph::new();
    let x = g.constant(images.to_vec(), &[n, c, h, w]);
    let y = g.constant(one_hot(labels, model.spec.num_classes), &[n, model.spec.num_classes]);
    let logits = model.bind_frozen(&g).forward(&x);
    cross_entropy_each(&logits, &y).data()
}

/// One sign step from `base + delta`, projected back into the ε-ball and the
/// pixel range. Shared by FGSM and PGD so the degenerate PGD bit-matches.
fn sign_step(
    model: &Model,
    base: &[f64],
    delta: &mut [f64],
    labels: &[usize],
    n: usize,
    step: f64,
    epsilon: f64,
    descend: bool,
) {
    let current: Vec<f64> = base.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
    let sign = grad_sign(model, &current, labels, n);
    let dir = if descend { -step } else { step };
    for ((d, s), x) in delta.iter_mut().zip(sign).zip(base) {
        *d = (*d + dir * s).clamp(-epsilon, epsilon);
        *d = (x + *d).clamp(0.0, 1.0) - x;
    }
}

/// Single-step sign attack: `clip(x + ε·sign(∇_x L_cls))`.
pub fn fgsm(model: &Model, images: &[f64], labels: &[usize], epsilon: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&epsilon), "fgsm: epsilon outside [0,1]");
    let n = labels.len();
    let mut delta = vec![0.0; images.len()];
    sign_step(model, images, &mut delta, labels, n, epsilon, epsilon, false);
    images.iter().zip(delta).map(|(x, d)| x + d).collect()
}

/// Iterated projected sign attack with random restarts. Restarts run
/// independently (possibly in parallel) and are merged per sample by highest
/// final loss, earliest restart winning ties, so results do not depend on
/// thread count.
pub fn pgd(model: &Model, images: &[f64], labels: &[usize], cfg: &AttackConfig) -> Vec<f64> {
    cfg.validate().expect("invalid attack config");
    let n = labels.len();
    let pixels = images.len();
    assert_eq!(pixels % n.max(1), 0, "pgd: image buffer does not divide into {n} samples");

    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut delta = vec![0.0; pixels];
            if cfg.random_init {
                let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, restart as u64));
                for (d, x) in delta.iter_mut().zip(images) {
                    let raw: f64 = rng.random_range(-cfg.epsilon..=cfg.epsilon);
                    *d = (x + raw).clamp(0.0, 1.0) - x;
                }
            }
            for _ in 0..cfg.iters {
                sign_step(model, images, &mut delta, labels, n, cfg.step, cfg.epsilon, cfg.descend);
            }
            let adv: Vec<f64> = images.iter().zip(&delta).map(|(x, d)| x + d).collect();
            let losses = per_sample_loss(model, &adv, labels, n);
            (adv, losses)
        })
        .collect();

    let sample_len = pixels / n.max(1);
    let (mut best_adv, mut best_loss) = runs[0].clone();
    for (adv, losses) in runs.into_iter().skip(1) {
        for s in 0..n {
            if losses[s] > best_loss[s] {
                best_loss[s] = losses[s];
                best_adv[s * sample_len..(s + 1) * sample_len]
                    .copy_from_slice(&adv[s * sample_len..(s + 1) * sample_len]);
            }
        }
    }
    best_adv
}

fn restart_seed(base: u64, restart: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(restart.wrapping_add(1))
}

/// Inputs to train on under the given adversarial-training mode.
pub fn attacked_inputs(
    model: &Model,
    images: &[f64],
    labels: &[usize],
    at_mode: AtMode,
    cfg: &AttackConfig,
) -> Vec<f64> {
    match at_mode {
        AtMode::None => images.to_vec(),
        AtMode::Fgsm => fgsm(model, images, labels, cfg.epsilon),
        AtMode::Pgd => pgd(model, images, labels, cfg),
    }
}

/// Mean classification loss on the (possibly attacked) batch — the inner-max
/// objective evaluated at the attack's answer.
pub fn adversarial_train_step(
    model: &Model,
    images: &[f64],
    labels: &[usize],
    at_mode: AtMode,
    cfg: &AttackConfig,
) -> f64 {
    let adv = attacked_inputs(model, images, labels, at_mode, cfg);
    let n = labels.len();
    let losses = per_sample_loss(model, &adv, labels, n);
    losses.iter().sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;

    fn toy_model(seed: u64) -> Model {
        Model::init(ModelSpec::mlp([1, 4, 4], 3, vec![8]), seed)
    }

    fn toy_batch(n: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..n * 16).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        (images, labels)
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let model = toy_model(1);
        let (images, labels) = toy_batch(4, 2);
        let adv = fgsm(&model, &images, &labels, 0.0);
        assert_eq!(adv, images);
    }

    #[test]
    fn fgsm_saturates_budget_where_unclipped() {
        let model = toy_model(3);
        let (images, labels) = toy_batch(8, 4);
        let eps = 8.0 / 255.0;
        let adv = fgsm(&model, &images, &labels, eps);
        let mut saturated = 0;
        for (a, x) in adv.iter().zip(&images) {
            let d = (a - x).abs();
            assert!(d <= eps + 1e-12);
            assert!((0.0..=1.0).contains(a));
            if d > eps - 1e-12 {
                saturated += 1;
            }
        }
        assert!(saturated > adv.len() / 2, "only {saturated} pixels at the budget");
    }

    #[test]
    fn fgsm_does_not_decrease_loss() {
        let model = toy_model(5);
        let (images, labels) = toy_batch(16, 6);
        let clean = per_sample_loss(&model, &images, &labels, 16);
        let adv = fgsm(&model, &images, &labels, 0.05);
        let attacked = per_sample_loss(&model, &adv, &labels, 16);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&attacked) >= mean(&clean) - 1e-12);
    }

    #[test]
    fn degenerate_pgd_bit_matches_fgsm() {
        let model = toy_model(7);
        let (images, labels) = toy_batch(6, 8);
        let eps = 8.0 / 255.0;
        let cfg = AttackConfig {
            epsilon: eps,
            step: eps,
            iters: 1,
            restarts: 1,
            random_init: false,
            descend: false,
            seed: 0,
        };
        let via_pgd = pgd(&model, &images, &labels, &cfg);
        let via_fgsm = fgsm(&model, &images, &labels, eps);
        for (a, b) in via_pgd.iter().zip(&via_fgsm) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn pgd_respects_ball_and_range() {
        let model = toy_model(9);
        let (images, labels) = toy_batch(32, 10);
        let cfg = AttackConfig {
            iters: 5,
            restarts: 3,
            ..AttackConfig::eval_default()
        };
        let adv = pgd(&model, &images, &labels, &cfg);
        for (a, x) in adv.iter().zip(&images) {
            assert!((a - x).abs() <= cfg.epsilon + 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn pgd_is_deterministic_under_seed() {
        let model = toy_model(11);
        let (images, labels) = toy_batch(8, 12);
        let cfg = AttackConfig { iters: 4, restarts: 4, seed: 99, ..AttackConfig::eval_default() };
        let a = pgd(&model, &images, &labels, &cfg);
        let b = pgd(&model, &images, &labels, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn adversarial_loss_at_least_clean_loss() {
        let model = toy_model(13);
        let (images, labels) = toy_batch(16, 14);
        let cfg = AttackConfig { iters: 5, restarts: 2, ..AttackConfig::eval_default() };
        let clean = adversarial_train_step(&model, &images, &labels, AtMode::None, &cfg);
        let fg = adversarial_train_step(&model, &images, &labels, AtMode::Fgsm, &cfg);
        let pg = adversarial_train_step(&model, &images, &labels, AtMode::Pgd, &cfg);
        assert!(fg >= clean - 1e-12);
        assert!(pg >= clean - 1e-12);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = AttackConfig { step: 1.0, epsilon: 0.1, ..AttackConfig::eval_default() };
        assert!(bad.validate().is_err());
        let bad = AttackConfig { iters: 0, ..AttackConfig::eval_default() };
        assert!(bad.validate().is_err());
    }
}
