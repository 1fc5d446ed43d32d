//! Self-supervised training: L1 regression of observed patches from baseline patches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::Real;
use super::model::SeasonalUNet;
use crate::error::{Error, Result};

/// Samples per gradient work unit. Fixed so the reduction order does not depend
/// on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Mean absolute error; subgradient 0 at 0.
    L1,
    /// Mean squared error.
    L2,
}

impl Loss {
    /// Per-sample mean loss; writes `∂loss/∂pred` into `grad`.
    pub fn eval<T: Real>(&self, pred: &[T], target: &[T], grad: &mut Vec<T>) -> f64 {
        let n = pred.len() as f64;
        let inv_n = T::from_f(1.0 / n);
        grad.clear();
        let mut total = 0.0;
        for (&p, &t) in pred.iter().zip(target) {
            let d = p - t;
            match self {
                Loss::L1 => {
                    total += d.abs().to_f();
                    let s = if d > T::zero() {
                        T::one()
                    } else if d < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    grad.push(s * inv_n);
                }
                Loss::L2 => {
                    total += (d * d).to_f();
                    grad.push(T::from_f(2.0) * d * inv_n);
                }
            }
        }
        total / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        TrainHyperparams {
            epochs: 20,
            batch_size: 32,
            lr_init: 1e-4,
            lr_factor: 0.1,
            lr_patience: 3,
            lr_min: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = self.epochs > 0
            && self.batch_size > 0
            && self.lr_init > 0.0
            && self.lr_factor > 0.0
            && self.lr_patience > 0
            && self.lr_min > 0.0
            && self.eps > 0.0;
        if !positive {
            return Err(Error::InvalidArgument(format!(
                "hyperparameters must be positive: {self:?}"
            )));
        }
        if self.lr_min > self.lr_init {
            return Err(Error::InvalidArgument("lr_min exceeds lr_init".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if self.lr_factor >= 1.0 {
            return Err(Error::InvalidArgument("lr_factor must be below 1".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(n_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2_sqrt = (1.0 - self.beta2.powi(self.step)).sqrt();
        let step_size = (lr / bc1) as f32;
        let (bc2_sqrt, eps) = (bc2_sqrt as f32, self.eps as f32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
        }
    }
}

/// Learning-rate reduction when the monitored loss stops strictly improving.
#[derive(Debug, Clone)]
pub struct ReduceOnPlateau {
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl ReduceOnPlateau {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        ReduceOnPlateau {
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's loss and returns the learning rate for the next epoch.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

/// One training pair; slices are `C × S × S` channel-major.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub baseline: &'a [f32],
    pub target: &'a [f32],
    pub enc: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

/// Mean loss and summed parameter gradient over `batch`.
pub fn batch_gradient<T: Real>(
    model: &SeasonalUNet<T>,
    batch: &[(&[T], &[T], &[T])],
    size: usize,
    loss: Loss,
) -> Result<(f64, Vec<T>)> {
    let n = model.count_parameters();
    let partials: Vec<(f64, Vec<T>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![T::zero(); n];
            let mut total = 0.0;
            let mut d_out = Vec::new();
            for &(base, target, enc) in chunk {
                let trace = model.forward_trace(base, enc, size)?;
                total += loss.eval(&trace.output, target, &mut d_out);
                model.backward(&trace, &d_out, size, &mut g);
            }
            Ok((total, g))
        })
        .collect::<Result<_>>()?;
    let mut iter = partials.into_iter();
    let (mut total, mut grad) = iter.next().unwrap_or((0.0, vec![T::zero(); n]));
    for (l, g) in iter {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Mean per-pixel L1 of the model over `examples`.
pub fn evaluate_l1(model: &SeasonalUNet<f32>, examples: &[Example<'_>], size: usize) -> Result<f64> {
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let pred = model.forward(ex.baseline, &ex.enc, size)?;
            Ok(pred
                .iter()
                .zip(ex.target)
                .map(|(&p, &t)| (p - t).abs() as f64)
                .sum::<f64>()
                / pred.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Trains `model` in place and returns the per-epoch history.
pub fn train(
    model: &mut SeasonalUNet<f32>,
    train_set: &[Example<'_>],
    val_set: &[Example<'_>],
    hp: &TrainHyperparams,
) -> Result<Vec<EpochRecord>> {
    hp.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training or validation set"));
    }
    let size = model.config().patch;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut adam = Adam::new(model.count_parameters(), hp.beta1, hp.beta2, hp.eps);
    let mut sched = ReduceOnPlateau::new(hp.lr_factor, hp.lr_patience, hp.lr_min);
    let mut lr = hp.lr_init;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(hp.batch_size).enumerate() {
            let batch: Vec<(&[f32], &[f32], &[f32])> = idx
                .iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    (ex.baseline, ex.target, ex.enc.as_slice())
                })
                .collect();
            let (loss_sum, mut grad) = batch_gradient(model, &batch, size, Loss::L1)?;
            let inv = 1.0 / idx.len() as f32;
            grad.iter_mut().for_each(|g| *g *= inv);
            if !loss_sum.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(model.params_mut(), &grad, lr);
            epoch_loss += loss_sum;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = evaluate_l1(model, val_set, size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        log::info!(
            "epoch {:>3}  train L1 {:.5}  val L1 {:.5}  lr {:.1e}",
            epoch + 1,
            train_loss,
            val_loss,
            lr
        );
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            lr,
        });
        lr = sched.step(val_loss, lr);
    }
    Ok(history)
}
