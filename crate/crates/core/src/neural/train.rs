use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::loss::Loss;
use super::matrix::Matrix;
use super::net::{DenseNet, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.001,
            dropout: 0.1,
            seed: 42,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::BadConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::BadConfig("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Supervised targets aligned with input rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Matrix),
    Classes(Vec<usize>),
    /// One scalar target per row, compared against output slot `slots[i]`.
    Slot {
        slots: Vec<usize>,
        values: Vec<f64>,
    },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(m) => m.rows(),
            Targets::Classes(c) => c.len(),
            Targets::Slot { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(m) => Targets::Regression(m.select_rows(idx)),
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Slot { slots, values } => Targets::Slot {
                slots: idx.iter().map(|&i| slots[i]).collect(),
                values: idx.iter().map(|&i| values[i]).collect(),
            },
        }
    }

    pub fn loss(&self) -> Loss<'_> {
        match self {
            Targets::Regression(m) => Loss::SquaredError(m),
            Targets::Classes(c) => Loss::CrossEntropy(c),
            Targets::Slot { slots, values } => Loss::Slot { slots, values },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch with the lowest validation loss (or training loss when
    /// no validation set was given).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }

    fn monitored(&self) -> &[f64] {
        if self.val_loss.is_empty() {
            &self.train_loss
        } else {
            &self.val_loss
        }
    }

    /// First 1-based epoch whose monitored loss is within a relative `tol`
    /// of the best one; 0 for an empty history.
    pub fn converged_epoch(&self, tol: f64) -> usize {
        let losses = self.monitored();
        let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
        losses
            .iter()
            .position(|&l| l <= best + tol * best.abs())
            .map_or(0, |i| i + 1)
    }

    pub fn best_loss(&self) -> f64 {
        let series = if self.val_loss.is_empty() {
            &self.train_loss
        } else {
            &self.val_loss
        };
        series
            .get(self.best_epoch.saturating_sub(1))
            .copied()
            .unwrap_or(f64::NAN)
    }
}

/// Mean loss of `net` over a dataset in eval mode.
pub fn evaluate_loss(net: &DenseNet, inputs: &Matrix, targets: &Targets) -> Result<f64> {
    let out = net.predict(inputs)?;
    Ok(targets.loss().evaluate(&out)?.0)
}

/// Minibatch Adam training with seeded shuffling and dropout. The parameters
/// from the epoch with the lowest monitored loss (validation loss when a
/// validation set is given, mean training loss otherwise) are kept.
pub fn fit(
    net: &mut DenseNet,
    inputs: &Matrix,
    targets: &Targets,
    validation: Option<(&Matrix, &Targets)>,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if inputs.rows() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input rows vs {} targets",
            inputs.rows(),
            targets.len()
        )));
    }
    if inputs.rows() == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    let validation = validation.filter(|(x, _)| x.rows() > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net, cfg.learning_rate);
    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    let mut history = History::default();
    let mut best = f64::INFINITY;
    let mut best_params = net.trainable_params();
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = inputs.select_rows(batch);
            let t = targets.select(batch);
            let loss = t.loss();
            let (out, cache) = net.forward(&x, Mode::Train(&mut rng))?;
            let (l, grad) = loss.evaluate(&out)?;
            total += l * batch.len() as f64;
            let grads = if loss.grad_is_logits() {
                net.backward_logits(&cache, &grad)?
            } else {
                net.backward(&cache, &grad)?
            };
            adam.step(net, &grads)?;
        }
        history.train_loss.push(total / inputs.rows() as f64);

        let monitored = match validation {
            Some((vx, vt)) => {
                let v = evaluate_loss(net, vx, vt)?;
                history.val_loss.push(v);
                v
            }
            None => *history.train_loss.last().unwrap(),
        };
        if monitored < best {
            best = monitored;
            history.best_epoch = epoch;
            since_best = 0;
            best_params = net.trainable_params();
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if history.best_epoch > 0 {
        net.set_trainable_params(&best_params)?;
    }
    Ok(history)
}
