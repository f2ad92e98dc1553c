//! White-box ℓ∞ attacks: FGSM, PGD with restarts, and robust-accuracy
//! evaluation.
//!
//! The threat model is the ε-ball in ℓ∞ around each input intersected with
//! the valid pixel range `[0, 1]`. Every crafted point — including random
//! starts and every intermediate PGD iterate — lies in that feasible set.
//! Attacks are deterministic given (seed, config, model, batch); model
//! normalization is frozen during crafting (networks attack in eval mode).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{Mode, Network};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Tensor};

/// Attack hyperparameters. ε and α are in pixel units on the `[0, 1]` scale
/// (budgets quoted as v/255).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackConfig {
    pub eps: f64,
    /// Step size per iteration.
    pub alpha: f64,
    /// Iteration count K (1 = FGSM-shaped).
    pub steps: usize,
    /// Random restarts; the best final loss wins per sample.
    pub restarts: usize,
    /// Start from a uniform point in the ε-ball instead of the input.
    pub rand_init: bool,
}

impl AttackConfig {
    /// Single-step config with α = ε and no random start.
    pub fn fgsm(eps: f64) -> Self {
        AttackConfig {
            eps,
            alpha: eps.max(f64::MIN_POSITIVE),
            steps: 1,
            restarts: 1,
            rand_init: false,
        }
    }

    /// K-step PGD with the conventional α = 2ε/K and a random start. For
    /// ε = 0 the step size is immaterial (projection pins the iterate), so a
    /// placeholder positive α keeps the config valid.
    pub fn pgd(eps: f64, steps: usize) -> Self {
        AttackConfig {
            eps,
            alpha: if eps > 0.0 {
                2.0 * eps / steps as f64
            } else {
                1.0
            },
            steps,
            restarts: 1,
            rand_init: true,
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps < 0.0 {
            return Err(Error::Invalid(format!("attack eps {} < 0", self.eps)));
        }
        if self.steps >= 1 && self.alpha <= 0.0 {
            return Err(Error::Invalid(format!(
                "attack alpha {} must be positive for {} steps",
                self.alpha, self.steps
            )));
        }
        if self.steps == 0 {
            return Err(Error::Invalid("attack needs at least one step".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Invalid("attack needs at least one restart".into()));
        }
        Ok(())
    }
}

/// Adversarial accuracy at one budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsResult {
    pub eps: f64,
    pub adversarial_accuracy: f64,
}

/// Robustness evaluation over a list of budgets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessResult {
    /// Accuracy on clean inputs.
    pub natural_accuracy: f64,
    /// Worst adversarial accuracy across the evaluated budgets.
    pub adversarial_accuracy: f64,
    /// Per-budget breakdown in input order.
    pub per_eps: Vec<EpsResult>,
}

/// Anything attackable: exposes per-sample losses with the input gradient of
/// the mean loss, and class predictions. Gradients must be taken under fixed
/// normalization (no state updates while crafting).
pub trait AttackModel<T: Scalar> {
    fn batch_loss_and_grad(&mut self, x: &Tensor<T>, y: &[usize])
        -> Result<(Vec<T>, Tensor<T>)>;
    fn predict(&mut self, x: &Tensor<T>) -> Result<Vec<usize>>;
}

impl<T: Scalar> AttackModel<T> for Network<T> {
    fn batch_loss_and_grad(
        &mut self,
        x: &Tensor<T>,
        y: &[usize],
    ) -> Result<(Vec<T>, Tensor<T>)> {
        let saved = self.mode();
        self.set_mode(Mode::Eval);
        let out = self.loss_and_grads(x, y);
        self.set_mode(saved);
        let out = out?;
        Ok((out.per_sample, out.input_grad))
    }

    fn predict(&mut self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Network::predict(self, x)
    }
}

/// Projects `x_adv` onto the ℓ∞ ε-ball around `x` intersected with `[0, 1]`:
/// per element, clamp to `[x − ε, x + ε]`, then clamp to the pixel range.
pub fn project_linf<T: Scalar>(x_adv: &Tensor<T>, x: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if x_adv.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "projection shapes {:?} vs {:?}",
            x_adv.shape(),
            x.shape()
        )));
    }
    let eps_t = T::from_f64(eps);
    Ok(x_adv.zip(x, |v, xv| {
        let v = v.maximum(xv - eps_t).minimum(xv + eps_t);
        v.maximum(T::ZERO).minimum(T::ONE)
    }))
}

/// The attack start point: a uniform draw in the ε-ball (projected into the
/// pixel range) under `rand_init`, else the input itself. ε = 0 draws nothing.
fn init_point<T: Scalar>(
    x: &Tensor<T>,
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    if cfg.rand_init && cfg.eps > 0.0 {
        let data: Vec<T> = x
            .data()
            .iter()
            .map(|v| {
                let d: f64 = rng.gen_range(-cfg.eps..cfg.eps);
                T::from_f64(v.to_f64() + d)
            })
            .collect();
        let noised = Tensor::new(x.shape().to_vec(), data);
        project_linf(&noised, x, cfg.eps)
    } else {
        Ok(x.clone())
    }
}

fn run_one_restart<T: Scalar>(
    model: &mut impl AttackModel<T>,
    x: &Tensor<T>,
    y: &[usize],
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    let alpha = T::from_f64(cfg.alpha);
    let mut cur = init_point(x, cfg, rng)?;
    for _ in 0..cfg.steps {
        let (_, grad) = model.batch_loss_and_grad(&cur, y)?;
        let stepped = cur.zip(&grad, |v, g| v + alpha * g.sgn());
        cur = project_linf(&stepped, x, cfg.eps)?;
    }
    Ok(cur)
}

/// Projected gradient descent (ascent on the loss) with `cfg.steps`
/// iterations, projecting after every step. With multiple restarts, each
/// sample keeps the restart that ends at the highest loss.
pub fn pgd<T: Scalar>(
    model: &mut impl AttackModel<T>,
    x: &Tensor<T>,
    y: &[usize],
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let b = *x
        .shape()
        .first()
        .ok_or_else(|| Error::Shape("attack input needs a batch axis".into()))?;
    if y.len() != b {
        return Err(Error::Shape(format!(
            "batch of {b} samples with {} labels",
            y.len()
        )));
    }
    if cfg.restarts == 1 {
        return run_one_restart(model, x, y, cfg, rng);
    }

    let sample = x.numel() / b;
    let mut best: Option<(Tensor<T>, Vec<T>)> = None;
    for _ in 0..cfg.restarts {
        let cand = run_one_restart(model, x, y, cfg, rng)?;
        let (losses, _) = model.batch_loss_and_grad(&cand, y)?;
        best = Some(match best {
            None => (cand, losses),
            Some((mut bx, mut bl)) => {
                for i in 0..b {
                    if losses[i] > bl[i] {
                        bl[i] = losses[i];
                        let src = cand.data()[i * sample..][..sample].to_vec();
                        bx.data_mut()[i * sample..][..sample].copy_from_slice(&src);
                    }
                }
                (bx, bl)
            }
        });
    }
    Ok(best.expect("at least one restart").0)
}

/// Fast gradient sign method: one signed step of size α from the (optionally
/// randomized) start, projected into the feasible set.
pub fn fgsm<T: Scalar>(
    model: &mut impl AttackModel<T>,
    x: &Tensor<T>,
    y: &[usize],
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    if cfg.steps != 1 {
        return Err(Error::Invalid(format!(
            "fgsm is single-step, got steps = {}",
            cfg.steps
        )));
    }
    pgd(model, x, y, cfg, rng)
}

fn count_correct(preds: &[usize], labels: &[usize]) -> usize {
    preds
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count()
}

/// Evaluates natural and adversarial accuracy over the dataset for each
/// attack budget. Every budget runs from a fresh attack stream of the same
/// seed, so results do not depend on list order.
pub fn robust_accuracy<T: Scalar>(
    model: &mut impl AttackModel<T>,
    dataset: &Dataset<T>,
    cfgs: &[AttackConfig],
    batch_size: usize,
    seed: u64,
) -> Result<RobustnessResult> {
    if dataset.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch_size must be positive".into()));
    }
    let n = dataset.len();
    let batches: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect();

    let mut natural_correct = 0usize;
    for idx in &batches {
        let (x, y) = dataset.gather(idx);
        natural_correct += count_correct(&model.predict(&x)?, &y);
    }
    let natural_accuracy = natural_correct as f64 / n as f64;

    let mut per_eps = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        cfg.validate()?;
        let acc = if cfg.eps == 0.0 {
            natural_accuracy
        } else {
            let mut rng = stream_rng(seed, Stream::Attack);
            let mut correct = 0usize;
            for idx in &batches {
                let (x, y) = dataset.gather(idx);
                let x_adv = pgd(model, &x, &y, cfg, &mut rng)?;
                correct += count_correct(&model.predict(&x_adv)?, &y);
            }
            correct as f64 / n as f64
        };
        per_eps.push(EpsResult {
            eps: cfg.eps,
            adversarial_accuracy: acc,
        });
    }
    let adversarial_accuracy = per_eps
        .iter()
        .map(|e| e.adversarial_accuracy)
        .fold(f64::INFINITY, f64::min);
    Ok(RobustnessResult {
        natural_accuracy,
        adversarial_accuracy: if adversarial_accuracy.is_finite() {
            adversarial_accuracy
        } else {
            natural_accuracy
        },
        per_eps,
    })
}
