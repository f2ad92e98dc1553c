//! Desk-scale adversarial training: single-step (FGSM) training with a
//! cyclic learning rate, multi-step (PGD) training with a step-decay
//! schedule, and plain natural training, all over the same SGD engine.
//!
//! Determinism contract: a [`TrainConfig`] seed fully determines the
//! trajectory. Batch order draws from the shuffle stream, attack noise from
//! the attack stream, and the two never interleave, so runs replay bit-exactly.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::attack::{pgd, robust_accuracy, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{argmax_rows, Mode, Network};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Tensor};

/// PGD steps used for the per-epoch holdout robustness probe.
pub const HOLDOUT_PGD_STEPS: usize = 10;

/// Drop (in accuracy fraction) below the running holdout maximum that
/// qualifies as catastrophic overfitting.
pub const CO_DROP: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    FastAt,
    StandardAt,
    Natural,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    /// Evaluation budget; training perturbs at `test_eps × train_eps_multiplier`.
    pub test_eps: f64,
    pub train_eps_multiplier: f64,
    /// Inner-maximization steps for multi-step training.
    pub inner_steps: usize,
    pub lr_max: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: TrainMode) -> Self {
        Self {
            mode,
            epochs: 15,
            test_eps: 4.0 / 255.0,
            train_eps_multiplier: 1.25,
            inner_steps: 10,
            lr_max: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            seed: 0,
        }
    }

    /// The perturbation budget used when crafting training examples.
    pub fn train_eps(&self) -> f64 {
        self.test_eps * self.train_eps_multiplier
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be positive".into()));
        }
        if !(self.test_eps >= 0.0 && self.test_eps.is_finite()) {
            return Err(Error::Invalid("test_eps must be finite and >= 0".into()));
        }
        if !(self.train_eps_multiplier > 0.0) {
            return Err(Error::Invalid(
                "train_eps_multiplier must be positive".into(),
            ));
        }
        if self.inner_steps == 0 {
            return Err(Error::Invalid("inner_steps must be positive".into()));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(Error::Invalid("lr_max must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Invalid("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Invalid("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-indexed epoch number.
    pub epoch: usize,
    /// Learning rate at the epoch's final step.
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Accuracy on the perturbed training batches (clean batches for
    /// natural training), accumulated during the epoch.
    pub adv_train_acc: f64,
    /// Clean training-set accuracy, evaluated after the epoch.
    pub natural_train_acc: f64,
    /// Holdout accuracy under the PGD probe at `test_eps`.
    pub holdout_pgd_acc: f64,
    pub holdout_natural_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// The evaluation budget the holdout columns were probed at.
    pub test_eps: f64,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_holdout_pgd_acc(&self) -> Option<f64> {
        self.records.last().map(|r| r.holdout_pgd_acc)
    }
}

/// Piecewise-linear one-cycle schedule: 0 → `lr_max` over the first half of
/// training, back to 0 over the second half.
pub fn cyclic_lr(t: f64, total: f64, lr_max: f64) -> f64 {
    assert!(total > 0.0, "schedule length must be positive");
    assert!((0.0..=total).contains(&t), "step {t} outside [0, {total}]");
    let half = total / 2.0;
    if t <= half {
        lr_max * t / half
    } else {
        lr_max * (total - t) / half
    }
}

/// Step-decay schedule: ×0.1 once the 0-indexed epoch reaches 50% of the
/// run, ×0.1 again at 75%.
fn step_decay_lr(epoch0: usize, epochs: usize, lr_max: f64) -> f64 {
    let frac = epoch0 as f64 / epochs as f64;
    let mut lr = lr_max;
    if frac >= 0.5 {
        lr *= 0.1;
    }
    if frac >= 0.75 {
        lr *= 0.1;
    }
    lr
}

/// Clean accuracy of `net` over `dataset`, evaluated in inference mode.
pub fn accuracy<T: Scalar>(
    net: &mut Network<T>,
    dataset: &Dataset<T>,
    batch_size: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = dataset.gather(chunk);
        let pred = net.predict(&x)?;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// One SGD step. Weight decay folds into the gradient first, then the
/// momentum buffer absorbs it, then the parameter moves:
/// `g ← ∇ + wd·p; v ← m·v + g; p ← p − lr·v`.
fn sgd_step<T: Scalar>(
    net: &mut Network<T>,
    grads: &[Tensor<T>],
    velocity: &mut [Tensor<T>],
    lr: f64,
    cfg: &TrainConfig,
) {
    let (lr, wd, m) = (
        T::from_f64(lr),
        T::from_f64(cfg.weight_decay),
        T::from_f64(cfg.momentum),
    );
    for ((param, grad), vel) in net.params_mut().iter_mut().zip(grads).zip(velocity) {
        *vel = vel.zip(&param.tensor.zip(grad, |p, g| g + wd * p), |v, g| m * v + g);
        param.tensor = param.tensor.zip(vel, |p, v| p - lr * v);
    }
}

/// Inner-maximization attack for one training mode, at the training budget.
fn training_attack(cfg: &TrainConfig) -> Option<AttackConfig> {
    let eps = cfg.train_eps();
    match cfg.mode {
        TrainMode::Natural => None,
        TrainMode::FastAt => Some(AttackConfig {
            eps,
            alpha: eps.max(f64::MIN_POSITIVE),
            steps: 1,
            restarts: 1,
            rand_init: true,
        }),
        TrainMode::StandardAt => Some(AttackConfig::pgd(eps, cfg.inner_steps)),
    }
}

/// Trains `net` in place per `cfg.mode` and returns the per-epoch history.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset<T>,
    holdout: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    train_set.validate()?;
    holdout.validate()?;
    if train_set.class_count != net.config.num_classes as usize {
        return Err(Error::Invalid(format!(
            "dataset has {} classes but the network emits {}",
            train_set.class_count, net.config.num_classes
        )));
    }

    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    let attack_cfg = training_attack(cfg);
    let probe = [AttackConfig::pgd(cfg.test_eps, HOLDOUT_PGD_STEPS)];

    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut attack_rng = stream_rng(cfg.seed, Stream::Attack);
    let mut velocity: Vec<Tensor<T>> = net
        .params()
        .iter()
        .map(|p| Tensor::zeros_like(&p.tensor))
        .collect();

    let mut history = TrainHistory {
        records: Vec::with_capacity(cfg.epochs),
        test_eps: cfg.test_eps,
    };
    let mut global_step = 0usize;

    for epoch in 1..=cfg.epochs {
        net.set_mode(Mode::Train);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        let mut adv_correct = 0usize;
        let mut last_lr = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train_set.gather(chunk);
            let x_in = match &attack_cfg {
                // The attack itself runs in inference mode and restores
                // training mode afterwards.
                Some(a) => pgd(net, &x, &y, a, &mut attack_rng)?,
                None => x,
            };
            let batch = net.loss_and_grads(&x_in, &y)?;
            if !batch.loss.to_f64().is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, step {}",
                    global_step + 1
                )));
            }

            // The schedule is sampled at the step midpoint, so no step runs
            // at exactly zero learning rate.
            last_lr = match cfg.mode {
                TrainMode::StandardAt => step_decay_lr(epoch - 1, cfg.epochs, cfg.lr_max),
                _ => cyclic_lr(global_step as f64 + 0.5, total_steps, cfg.lr_max),
            };
            sgd_step(net, &batch.param_grads, &mut velocity, last_lr, cfg);

            loss_sum += batch.loss.to_f64();
            adv_correct += argmax_rows(&batch.logits)
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
            global_step += 1;
        }

        net.set_mode(Mode::Eval);
        let natural_train_acc = accuracy(net, train_set, cfg.batch_size)?;
        let holdout_probe = robust_accuracy(net, holdout, &probe, cfg.batch_size, cfg.seed)?;
        history.records.push(EpochRecord {
            epoch,
            lr: last_lr,
            train_loss: loss_sum / steps_per_epoch as f64,
            adv_train_acc: adv_correct as f64 / n as f64,
            natural_train_acc,
            holdout_pgd_acc: holdout_probe.adversarial_accuracy,
            holdout_natural_acc: holdout_probe.natural_accuracy,
        });
    }

    net.set_mode(Mode::Eval);
    Ok(history)
}

fn expect_mode(cfg: &TrainConfig, mode: TrainMode, name: &str) -> Result<()> {
    if cfg.mode != mode {
        return Err(Error::Invalid(format!(
            "{name} requires mode {mode:?}, got {:?}",
            cfg.mode
        )));
    }
    Ok(())
}

/// Single-step adversarial training: random-init FGSM at the training
/// budget with a one-cycle learning rate.
pub fn fast_at<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset<T>,
    holdout: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    expect_mode(cfg, TrainMode::FastAt, "fast_at")?;
    train(net, train_set, holdout, cfg)
}

/// Multi-step adversarial training: PGD inner maximization with
/// `inner_steps` iterations at step size `2ε/steps` and a step-decay schedule.
pub fn standard_at<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset<T>,
    holdout: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    expect_mode(cfg, TrainMode::StandardAt, "standard_at")?;
    train(net, train_set, holdout, cfg)
}

/// Plain training on clean examples under the one-cycle schedule.
pub fn natural<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset<T>,
    holdout: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    expect_mode(cfg, TrainMode::Natural, "natural")?;
    train(net, train_set, holdout, cfg)
}

/// Returns the first (1-indexed) epoch where the holdout PGD accuracy sits
/// more than [`CO_DROP`] below its running maximum while the perturbed
/// training accuracy did not fall — the signature collapse of single-step
/// adversarial training.
pub fn detect_catastrophic_overfitting(history: &TrainHistory) -> Option<usize> {
    let records = &history.records;
    let mut run_max = f64::NEG_INFINITY;
    for i in 0..records.len() {
        if i > 0
            && run_max - records[i].holdout_pgd_acc > CO_DROP
            && records[i].adv_train_acc + 1e-12 >= records[i - 1].adv_train_acc
        {
            return Some(i + 1);
        }
        run_max = run_max.max(records[i].holdout_pgd_acc);
    }
    None
}
