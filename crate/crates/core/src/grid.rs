//! Exhaustive hyperparameter search over a small Cartesian grid.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::train::{train, Selection, TrainConfig};

/// Candidate values. An empty list keeps the base setting for that axis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub learning_rates: Vec<f64>,
    /// Embedding size applied to every encoder.
    #[serde(default)]
    pub encoder_sizes: Vec<usize>,
    /// Full MRRF rank tuples.
    #[serde(default)]
    pub ranks: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    /// Position in enumeration order (learning rate outermost, ranks innermost).
    pub index: usize,
    pub learning_rate: f64,
    pub encoder_size: Option<usize>,
    pub ranks: Option<Vec<usize>>,
}

impl GridPoint {
    pub fn apply(&self, spec: &ModelSpec, cfg: &TrainConfig) -> (ModelSpec, TrainConfig) {
        let mut spec = spec.clone();
        let mut cfg = cfg.clone();
        cfg.learning_rate = self.learning_rate;
        if let Some(d) = self.encoder_size {
            spec.encoders.iter_mut().for_each(|e| e.out = d);
        }
        if let Some(r) = &self.ranks {
            spec.ranks = Some(r.clone());
        }
        (spec, cfg)
    }
}

impl GridSpec {
    pub fn points(&self, base_lr: f64) -> Vec<GridPoint> {
        let lrs = if self.learning_rates.is_empty() { vec![base_lr] } else { self.learning_rates.clone() };
        let sizes: Vec<Option<usize>> = if self.encoder_sizes.is_empty() {
            vec![None]
        } else {
            self.encoder_sizes.iter().copied().map(Some).collect()
        };
        let ranks: Vec<Option<Vec<usize>>> = if self.ranks.is_empty() {
            vec![None]
        } else {
            self.ranks.iter().cloned().map(Some).collect()
        };
        let mut out = Vec::new();
        for &lr in &lrs {
            for &d in &sizes {
                for r in &ranks {
                    out.push(GridPoint {
                        index: out.len(),
                        learning_rate: lr,
                        encoder_size: d,
                        ranks: r.clone(),
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Trained { val_metric: f64, best_epoch: usize },
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeaderboardEntry {
    pub point: GridPoint,
    pub outcome: Outcome,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    /// Successful points by selection metric, then failures; ties keep enumeration order.
    pub leaderboard: Vec<LeaderboardEntry>,
    pub best: Option<(GridPoint, Model)>,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,index,learning_rate,encoder_size,ranks,status,val_metric,best_epoch,error\n");
        for (pos, e) in self.leaderboard.iter().enumerate() {
            let size = e.point.encoder_size.map(|d| d.to_string()).unwrap_or_default();
            let ranks = e
                .point
                .ranks
                .as_ref()
                .map(|r| r.iter().map(usize::to_string).collect::<Vec<_>>().join(" "))
                .unwrap_or_default();
            let (status, metric, epoch, err) = match &e.outcome {
                Outcome::Trained { val_metric, best_epoch } => ("ok", val_metric.to_string(), best_epoch.to_string(), String::new()),
                Outcome::Failed(m) => ("failed", String::new(), String::new(), m.replace([',', '\n'], ";")),
            };
            let _ = writeln!(
                out,
                "{},{},{},{size},{ranks},{status},{metric},{epoch},{err}",
                pos + 1,
                e.point.index,
                e.point.learning_rate
            );
        }
        out
    }
}

/// Trained model, best validation metric and best epoch, or the failure message.
type RunResult = std::result::Result<(Model, f64, usize), String>;

/// Trains one model per grid point (in parallel) and ranks them on validation.
pub fn grid_search(
    grid: &GridSpec,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    model_seed: u64,
) -> Result<GridResult> {
    let points = grid.points(cfg.learning_rate);
    if points.is_empty() {
        return Err(Error::invalid("grid is empty"));
    }
    let selection = cfg
        .selection
        .unwrap_or_else(|| Selection::for_labels(train_set.manifest.label_kind));
    let runs: Vec<(GridPoint, RunResult)> = points
        .into_par_iter()
        .map(|p| {
            let (s, c) = p.apply(spec, cfg);
            let run = Model::build(&s, &train_set.manifest, model_seed)
                .and_then(|m| train(m, train_set, val_set, &c))
                .map(|(m, log)| (m, log.best_val_metric, log.best_epoch))
                .map_err(|e| e.to_string());
            if let Err(e) = &run {
                log::warn!("grid point {} failed: {e}", p.index);
            }
            (p, run)
        })
        .collect();

    let mut ok: Vec<(GridPoint, Model, f64, usize)> = Vec::new();
    let mut failed = Vec::new();
    for (p, r) in runs {
        match r {
            Ok((m, v, e)) => ok.push((p, m, v, e)),
            Err(msg) => failed.push(LeaderboardEntry {
                point: p,
                outcome: Outcome::Failed(msg),
            }),
        }
    }
    // stable sort keeps enumeration order among equal metrics
    ok.sort_by(|a, b| {
        if selection.improves(a.2, b.2) {
            std::cmp::Ordering::Less
        } else if selection.improves(b.2, a.2) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    let mut leaderboard: Vec<LeaderboardEntry> = ok
        .iter()
        .map(|(p, _, v, e)| LeaderboardEntry {
            point: p.clone(),
            outcome: Outcome::Trained {
                val_metric: *v,
                best_epoch: *e,
            },
        })
        .collect();
    leaderboard.extend(failed);
    let best = ok.into_iter().next().map(|(p, m, _, _)| (p, m));
    Ok(GridResult { leaderboard, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, SyntheticSpec};
    use crate::encoders::EncoderKind;
    use crate::fusion::FusionKind;
    use crate::model::EncoderSpec;

    fn setup() -> (ModelSpec, TrainConfig, Dataset, Dataset) {
        let syn = SyntheticSpec {
            kinds: vec![crate::data::ModalityKind::Vector; 3],
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&syn, 120, 1).unwrap();
        let s = split(&data, [0.6, 0.2, 0.2], 2).unwrap();
        let spec = ModelSpec {
            fusion: FusionKind::Mrrf,
            fusion_dim: 3,
            ranks: None,
            lmf_rank: None,
            encoders: vec![EncoderSpec { kind: EncoderKind::Mlp, hidden: 6, out: 2 }; 3],
        };
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 0.01,
            seed: 1,
            patience: 5,
            selection: None,
        };
        (spec, cfg, s.train, s.validation)
    }

    #[test]
    fn single_point_grid() {
        let (spec, cfg, tr, va) = setup();
        let r = grid_search(&GridSpec::default(), &spec, &cfg, &tr, &va, 3).unwrap();
        assert_eq!(r.leaderboard.len(), 1);
        assert_eq!(r.best.unwrap().0.learning_rate, 0.01);
    }

    #[test]
    fn divergent_point_is_marked_failed() {
        let (spec, cfg, tr, va) = setup();
        let grid = GridSpec {
            learning_rates: vec![1e300, 0.01],
            encoder_sizes: vec![],
            ranks: vec![vec![1, 1, 1], vec![3, 3, 3]],
        };
        let r = grid_search(&grid, &spec, &cfg, &tr, &va, 3).unwrap();
        assert_eq!(r.leaderboard.len(), 4);
        assert_eq!(r.best.as_ref().unwrap().0.learning_rate, 0.01);
        let failed: Vec<_> = r
            .leaderboard
            .iter()
            .filter(|e| matches!(e.outcome, Outcome::Failed(_)))
            .map(|e| e.point.learning_rate)
            .collect();
        assert_eq!(failed, vec![1e300, 1e300]);
        assert_eq!(r.to_csv().lines().count(), 5);
    }

    #[test]
    fn ties_follow_enumeration_order() {
        let (spec, cfg, tr, va) = setup();
        let grid = GridSpec {
            learning_rates: vec![0.01, 0.01, 0.01],
            ..GridSpec::default()
        };
        let r = grid_search(&grid, &spec, &cfg, &tr, &va, 3).unwrap();
        let idx: Vec<usize> = r.leaderboard.iter().map(|e| e.point.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }
}
