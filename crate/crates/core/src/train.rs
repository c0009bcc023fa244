//! Minibatch training with validation-based early stopping.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Parameterized};
use crate::data::{Dataset, LabelKind};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{Model, Objective};
use crate::optim::{clip_global_norm, AdamConfig, AdamState};

/// Global-norm bound applied to recurrent models only.
pub const RECURRENT_CLIP_NORM: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Validation MAE, lower is better.
    Mae,
    /// Validation accuracy, higher is better.
    Accuracy,
}

impl Selection {
    pub fn for_labels(kind: LabelKind) -> Self {
        match kind {
            LabelKind::Regression => Selection::Mae,
            LabelKind::Classification => Selection::Accuracy,
        }
    }

    pub fn score(&self, report: &MetricReport) -> Result<f64> {
        match self {
            Selection::Mae => Ok(report.mae),
            Selection::Accuracy => report
                .acc_k
                .or(report.acc2)
                .ok_or_else(|| Error::Config("accuracy selection needs classification labels".into())),
        }
    }

    /// Strict improvement of `candidate` over `incumbent`.
    pub fn improves(&self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Selection::Mae => candidate < incumbent,
            Selection::Accuracy => candidate > incumbent,
        }
    }
}

fn default_patience() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Defaults to MAE for regression and accuracy for classification.
    #[serde(default)]
    pub selection: Option<Selection>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based, matching the CSV).
    pub best_epoch: usize,
    pub best_val_metric: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_metric);
        }
        out
    }
}

/// Per-sample loss and gradient for one minibatch, seeded with `1 / batch`.
fn batch_gradients(model: &Model, data: &Dataset, idx: &[usize]) -> Result<Vec<(f64, Gradients)>> {
    let weight = 1.0 / idx.len() as f64;
    idx.par_iter()
        .map(|&i| {
            let s = &data.samples[i];
            model.loss_and_gradients(s, Objective::training_default(&s.label), weight, None)
        })
        .collect()
}

/// Trains `model` and returns the parameters of the best validation epoch.
pub fn train(mut model: Model, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data("training needs non-empty train and validation splits"));
    }
    let selection = cfg
        .selection
        .unwrap_or_else(|| Selection::for_labels(train_set.manifest.label_kind));
    let clip = model.is_recurrent();
    let mut adam = AdamState::new(AdamConfig::new(cfg.learning_rate), &model)?;
    let mut log = TrainLog::default();
    let mut best: Option<(Model, f64)> = None;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let diverged = |log: &TrainLog, message: String| Error::Diverged {
            epoch,
            message,
            log: Box::new(log.clone()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grads();
            for (loss, grads) in batch_gradients(&model, train_set, batch)? {
                if !loss.is_finite() {
                    return Err(diverged(&log, format!("training loss is {loss}")));
                }
                loss_sum += loss;
                grads.accumulate_into(&mut model)?;
            }
            if clip {
                clip_global_norm(&mut model, RECURRENT_CLIP_NORM);
            }
            match adam.step(&mut model) {
                Err(Error::Numeric(m)) => return Err(diverged(&log, m)),
                other => other?,
            }
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_metric = match evaluate(&model, val_set) {
            Ok(r) => selection.score(&r)?,
            Err(Error::Numeric(m)) => return Err(diverged(&log, m)),
            Err(e) => return Err(e),
        };
        if !val_metric.is_finite() {
            return Err(diverged(&log, format!("validation metric is {val_metric}")));
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
        });
        log::debug!("epoch {epoch}: train loss {train_loss:.6}, validation {val_metric:.6}");

        let improved = best.as_ref().is_none_or(|(_, b)| selection.improves(val_metric, *b));
        if improved {
            best = Some((model.clone(), val_metric));
            log.best_epoch = epoch;
            log.best_val_metric = val_metric;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    let (best_model, _) = best.expect("at least one epoch ran");
    Ok((best_model, log))
}
