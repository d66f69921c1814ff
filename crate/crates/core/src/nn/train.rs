//! Mini-batch Adam training with early stopping on a validation split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{
    assemble, batch_loss_and_gradient, evaluate_loss, Arch, ModelWeights, Params, TrainingMeta,
    TrainingSample,
};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 500,
            dropout_rate: 0.1,
            weight_decay: 1e-5,
            seed: 0,
            patience: 20,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("training.learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("training.dropout_rate", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be >= 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("training.weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

/// Bias-corrected first/second moment optimizer with decoupled weight decay.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(arch: &Arch, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Params::zeros(arch),
            v: Params::zeros(arch),
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let grads = grad.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, (g, _)), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p[i] -= self.lr * (update + self.weight_decay * p[i]);
            }
        }
    }
}

/// Per-epoch record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss.
    pub weights: ModelWeights,
    pub history: Vec<EpochStats>,
}

const MAX_LR_HALVINGS: usize = 3;

/// Train a model of architecture `arch` on `train_set`, selecting the
/// epoch with the lowest loss on `val_set`. Deterministic for fixed inputs
/// and `hp.seed`.
pub fn train(
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    arch: Arch,
    hp: &Hyperparams,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be non-empty".into()));
    }
    let arch = Arch {
        dropout: hp.dropout_rate,
        ..arch
    };
    let mut model = ModelWeights::new(arch, hp.seed)?;
    let val_refs: Vec<&TrainingSample> = val_set.iter().collect();
    // Fail early on K or frame mismatches.
    assemble(&arch, &val_refs)?;

    let mut best = model.clone();
    let mut best_val = evaluate_loss(&model, &val_refs)?;
    let mut since_best = 0usize;
    let mut lr = hp.learning_rate;
    let mut halvings = 0usize;
    let mut opt = Adam::new(&arch, lr, hp.weight_decay);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut epoch = 0usize;
    while epoch < hp.epochs {
        let mut rng = rng::stream(&[tag::TRAIN, hp.seed, epoch as u64, halvings as u64]);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut diverged = false;
        for chunk in order.chunks(hp.batch_size) {
            let refs: Vec<&TrainingSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = assemble(&arch, &refs)?;
            match batch_loss_and_gradient(&model, batch, Some(&mut rng)) {
                Ok((loss, grad)) if grad.is_finite() => {
                    sum += loss * refs.len() as f64;
                    opt.step(&mut model.params, &grad);
                }
                Ok(_) | Err(Error::Divergence) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let val = if diverged || !model.params.is_finite() {
            f64::NAN
        } else {
            evaluate_loss(&model, &val_refs)?
        };
        if !val.is_finite() {
            halvings += 1;
            if halvings > MAX_LR_HALVINGS {
                return Err(Error::Divergence);
            }
            lr *= 0.5;
            log::warn!("training diverged at epoch {epoch}; restarting from best weights with lr {lr:e}");
            model = best.clone();
            opt = Adam::new(&arch, lr, hp.weight_decay);
            continue;
        }
        let train_loss = sum / train_set.len() as f64;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss: val,
            learning_rate: lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val:.6e}");
        if val < best_val {
            best_val = val;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hp.patience {
                epoch += 1;
                break;
            }
        }
        epoch += 1;
    }
    best.meta = TrainingMeta {
        seed: hp.seed,
        epochs_run: epoch,
        final_val_loss: best_val,
    };
    Ok(TrainOutcome {
        weights: best,
        history,
    })
}
