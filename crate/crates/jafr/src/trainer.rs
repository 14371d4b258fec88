//! The training loop: cross-entropy plus a weighted spectral term on the
//! input Jacobian, optionally on adversarially perturbed inputs.
//!
//! One step does, in order: (1) classification loss on the batch, (2) the
//! input Jacobian of that loss with the graph kept alive, (3) the channel-
//! averaged magnitude spectrum of each sample's Jacobian, (4) the frequency
//! loss `-ln B_low` per sample, averaged over the batch, and (5) one SGD
//! update on `L_cls + λ_freq · L_freq`. A positive `λ_freq` pushes Jacobian
//! spectra toward low frequencies; a negative one pushes them the other way.
//! With `λ_freq = 0` the spectral branch is skipped entirely and the update
//! is exactly a plain cross-entropy SGD step.
//!
//! Under adversarial training the attacked inputs serve both the
//! classification loss and the Jacobian, which are evaluated at the same
//! points.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{attacked_inputs, AtMode, AttackConfig};
use crate::data::{one_hot, Dataset};
use crate::freqbias::{bias_low, BiasConfig};
use crate::nn::{cross_entropy_each, Model};
use crate::spectral::channel_mean_spectrum;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    LinearWarmupDecay {
        #[serde(default = "default_warmup")]
        warmup_frac: f64,
    },
}

fn default_warmup() -> f64 {
    0.1
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::LinearWarmupDecay { warmup_frac: default_warmup() }
    }
}

impl LrSchedule {
    /// Learning rate at 0-based step `t` of `total`.
    pub fn lr_at(&self, base: f64, t: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::LinearWarmupDecay { warmup_frac } => {
                let warmup = ((total as f64 * warmup_frac).round() as usize).max(1);
                if t < warmup || total <= warmup {
                    base * (t + 1) as f64 / warmup as f64
                } else {
                    base * (total - t) as f64 / (total - warmup) as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the spectral term; negative biases toward high frequencies.
    pub lambda_freq: f64,
    pub lr: f64,
    pub momentum: f64,
    pub at_mode: AtMode,
    pub attack: AttackConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub bias: BiasConfig,
    /// Global gradient-norm clip; a NaN backstop, logged when it fires.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_freq: 0.0,
            lr: 0.05,
            momentum: 0.9,
            at_mode: AtMode::None,
            attack: AttackConfig::train_pgd_default(),
            epochs: 5,
            batch_size: 64,
            seed: 0,
            schedule: LrSchedule::default(),
            bias: BiasConfig::default(),
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lr <= 0.0 {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs < 1 {
            return Err("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return Err("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if self.at_mode != AtMode::None {
            self.attack.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub l_cls: f64,
    /// Absent when `lambda_freq = 0` (the branch is skipped).
    pub l_freq: Option<f64>,
    /// Batch-mean `B_low` of the step's per-sample Jacobian spectra.
    pub b_low: Option<f64>,
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub clean_acc: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// One CSV, step rows and epoch rows distinguished by the first column.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "kind,step,epoch,lr,l_cls,l_freq,b_low,grad_norm,clipped,clean_acc")?;
        for s in &self.steps {
            writeln!(
                out,
                "step,{},{},{},{},{},{},{},{},",
                s.step,
                s.epoch,
                s.lr,
                s.l_cls,
                s.l_freq.map(|v| v.to_string()).unwrap_or_default(),
                s.b_low.map(|v| v.to_string()).unwrap_or_default(),
                s.grad_norm,
                s.clipped
            )?;
        }
        for e in &self.epochs {
            writeln!(out, "epoch,,{},,,,,,,{}", e.epoch, e.clean_acc)?;
        }
        out.flush()
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value at step {step}: {what}")]
    Numerical {
        step: usize,
        what: String,
        /// The magnitude spectrum implicated, for post-mortem inspection.
        spectrum: Option<(Vec<f64>, usize, usize)>,
    },
    #[error("dataset shape {got:?} does not match model input {want:?}")]
    ShapeMismatch { got: [usize; 3], want: [usize; 3] },
    #[error("invalid train config: {0}")]
    Config(String),
}

/// Optimizer state across steps.
pub struct Trainer {
    pub cfg: TrainConfig,
    velocity: Vec<f64>,
    step_count: usize,
    total_steps: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: &Model, total_steps: usize) -> Result<Trainer, TrainError> {
        cfg.validate().map_err(TrainError::Config)?;
        Ok(Trainer { cfg, velocity: vec![0.0; model.num_params()], step_count: 0, total_steps })
    }

    pub fn steps_taken(&self) -> usize {
        self.step_count
    }

    /// One full update on a batch. Labels must index into the model's
    /// classes; pixels must be in [0,1].
    pub fn step(
        &mut self,
        model: &mut Model,
        images: &[f64],
        labels: &[usize],
    ) -> Result<StepLog, TrainError> {
        let step_idx = self.step_count;
        let [c, h, w] = model.spec.input;
        let n = labels.len();
        assert_eq!(images.len(), n * c * h * w, "batch does not match model input shape");

        // Attack generation never sees the spectral term; only the
        // classification loss shapes the perturbation.
        let inputs = match self.cfg.at_mode {
            AtMode::None => images.to_vec(),
            mode => {
                let mut atk = self.cfg.attack;
                atk.seed = per_step_seed(self.cfg.seed, step_idx as u64);
                attacked_inputs(model, images, labels, mode, &atk)
            }
        };

        let g = Graph::new();
        let bound = model.bind(&g);
        let x = g.var(inputs, &[n, c, h, w]);
        let y = g.constant(one_hot(labels, model.spec.num_classes), &[n, model.spec.num_classes]);
        let logits = bound.forward(&x);
        if !logits.with_data(|d| d.iter().all(|v| v.is_finite())) {
            return Err(TrainError::Numerical {
                step: step_idx,
                what: "non-finite logits".into(),
                spectrum: None,
            });
        }
        let ce = cross_entropy_each(&logits, &y);
        let l_cls = ce.mean();

        let mut l_freq_val = None;
        let mut b_low_val = None;
        let total = if self.cfg.lambda_freq != 0.0 {
            let jac = ce.sum().backward(&[&x], true).pop().expect("one wrt");
            let (l_freq, b_mean, worst) = batch_freq_loss(&g, &jac, n, c, h, w, &self.cfg.bias);
            if !b_mean.is_finite() || b_mean <= 0.0 {
                return Err(TrainError::Numerical {
                    step: step_idx,
                    what: format!("batch B_low = {b_mean}"),
                    spectrum: worst,
                });
            }
            l_freq_val = Some(l_freq.item());
            b_low_val = Some(b_mean);
            l_cls.add(&l_freq.mul_scalar(self.cfg.lambda_freq))
        } else {
            l_cls.clone()
        };

        let l_cls_v = l_cls.item();
        if !total.item().is_finite() {
            return Err(TrainError::Numerical {
                step: step_idx,
                what: format!("objective = {} (l_cls = {l_cls_v})", total.item()),
                spectrum: None,
            });
        }

        let params: Vec<&Tensor> = bound.params.iter().collect();
        let grads = total.backward(&params, false);

        // Global-norm clip, then SGD with momentum.
        let mut sq = 0.0;
        for gt in &grads {
            gt.with_data(|d| {
                for &v in d {
                    sq += v * v;
                }
            });
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(TrainError::Numerical {
                step: step_idx,
                what: format!("gradient norm = {grad_norm}"),
                spectrum: None,
            });
        }
        let clipped = grad_norm > self.cfg.clip_norm;
        let scale = if clipped { self.cfg.clip_norm / grad_norm } else { 1.0 };

        let lr = self.cfg.schedule.lr_at(self.cfg.lr, step_idx, self.total_steps.max(1));
        let mut off = 0;
        for (p, gt) in model.params.iter_mut().zip(&grads) {
            gt.with_data(|gd| {
                for (i, (&gv, pv)) in gd.iter().zip(p.data.iter_mut()).enumerate() {
                    let v = &mut self.velocity[off + i];
                    *v = self.cfg.momentum * *v + gv * scale;
                    *pv -= lr * *v;
                }
            });
            off += p.data.len();
        }

        self.step_count += 1;
        Ok(StepLog {
            step: step_idx,
            epoch: 0,
            lr,
            l_cls: l_cls_v,
            l_freq: l_freq_val,
            b_low: b_low_val,
            grad_norm,
            clipped,
        })
    }
}

/// Per-sample frequency losses over a batch Jacobian, averaged. Returns the
/// loss tensor (still attached to the graph), the batch-mean `B_low`, and the
/// spectrum with the most extreme value for diagnostics.
fn batch_freq_loss(
    g: &Graph,
    jac: &Tensor,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    bias_cfg: &BiasConfig,
) -> (Tensor, f64, Option<(Vec<f64>, usize, usize)>) {
    let sample_len = c * h * w;
    let mut loss_sum: Option<Tensor> = None;
    let mut b_sum = 0.0;
    let mut worst: Option<(f64, Vec<f64>)> = None;
    for s in 0..n {
        let idx: Vec<usize> = (s * sample_len..(s + 1) * sample_len).collect();
        let j_s = jac.gather(idx.into(), &[c, h, w]);
        let spectrum = channel_mean_spectrum(&j_s, crate::spectral::MAG_EPS);
        let b = bias_low(&spectrum, bias_cfg);
        let b_v = b.item();
        if !b_v.is_finite() || b_v <= 0.0 {
            let snap = spectrum.values();
            worst = Some((b_v, snap));
        }
        b_sum += b_v;
        let l = b.ln().neg();
        loss_sum = Some(match loss_sum {
            None => l,
            Some(acc) => acc.add(&l),
        });
    }
    let _ = g;
    let loss = loss_sum.expect("n >= 1").mul_scalar(1.0 / n as f64);
    (loss, b_sum / n as f64, worst.map(|(_, m)| (m, h, w)))
}

fn per_step_seed(base: u64, step: u64) -> u64 {
    base.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(step.wrapping_add(0x632B_E59B_D9B4_E019))
}

/// The training objective evaluated at the current parameters, without an
/// update: `(L_cls, L_freq)` on the given (already attacked, if desired)
/// inputs. Useful for finite-difference checks against the step.
pub fn objective_value(
    model: &Model,
    images: &[f64],
    labels: &[usize],
    bias_cfg: &BiasConfig,
    with_freq: bool,
) -> (f64, Option<f64>) {
    let [c, h, w] = model.spec.input;
    let n = labels.len();
    let g = Graph::new();
    let bound = model.bind(&g);
    let x = g.var(images.to_vec(), &[n, c, h, w]);
    let y = g.constant(one_hot(labels, model.spec.num_classes), &[n, model.spec.num_classes]);
    let ce = cross_entropy_each(&bound.forward(&x), &y);
    let l_cls = ce.mean().item();
    if !with_freq {
        return (l_cls, None);
    }
    let jac = ce.sum().backward(&[&x], true).pop().expect("one wrt");
    let (l_freq, _, _) = batch_freq_loss(&g, &jac, n, c, h, w, bias_cfg);
    (l_cls, Some(l_freq.item()))
}

/// Full training run: seeded shuffling, epoch loop, per-epoch clean accuracy
/// on `eval_set` (the training set when absent).
pub fn train(
    mut model: Model,
    dataset: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog), TrainError> {
    let want = model.spec.input;
    let got = [dataset.c, dataset.h, dataset.w];
    if want != got {
        return Err(TrainError::ShapeMismatch { got, want });
    }
    let batches_per_epoch = dataset.n.div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut trainer = Trainer::new(cfg.clone(), &model, total_steps)?;
    let mut log = TrainLog::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.n).collect();
        for i in (1..dataset.n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = dataset.gather_batch(chunk);
            let mut entry = trainer.step(&mut model, &images, &labels)?;
            entry.epoch = epoch;
            log.steps.push(entry);
        }
        let probe = eval_set.unwrap_or(dataset);
        let clean_acc = crate::evaluator::clean_accuracy(&model, probe, probe.n);
        log.epochs.push(EpochLog { epoch, clean_acc });
    }
    Ok((model, log))
}
