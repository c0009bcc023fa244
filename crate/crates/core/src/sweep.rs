//! Compression sweep: retrain from scratch while one modality's rank varies
//! and every other modality stays at full rank.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::Splits;
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionKind};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{Model, ModelSpec};
use crate::train::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub modality: String,
    pub modality_index: usize,
    pub rank: usize,
    /// `rank + 1`, the size of the compressed padded embedding.
    pub embedding_size: usize,
    pub seed: u64,
    /// Fusion-layer parameter count.
    pub param_count: usize,
    /// `None` when training failed; `error` then says why.
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub modality: String,
    pub rank: usize,
    pub runs: usize,
    pub mae_mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub mae_std: f64,
    pub param_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

const HEADER: &str = "modality,modality_index,rank,embedding_size,seed,param_count,status,mae,pearson_corr,acc2,acc7,acc_k,error";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s == "NA" || s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::data(format!("sweep line {line}: bad number {s:?}")))
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{},",
                r.modality, r.modality_index, r.rank, r.embedding_size, r.seed, r.param_count
            );
            match &r.metrics {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "ok,{},{},{},{},{},",
                        m.mae,
                        opt(m.pearson_corr),
                        opt(m.acc2),
                        opt(m.acc7),
                        opt(m.acc_k)
                    );
                }
                None => {
                    let msg = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
                    let _ = writeln!(out, "failed,NA,NA,NA,NA,NA,{msg}");
                }
            }
        }
        out
    }

    /// Parses [`SweepResult::to_csv`] output. Per-class F1 is not part of the table.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::data("sweep table has an unexpected header"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(Error::data(format!("sweep line {n}: expected 13 fields, found {}", f.len())));
            }
            let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::data(format!("sweep line {n}: bad integer {s:?}"))) };
            let ok = f[6] == "ok";
            rows.push(SweepRow {
                modality: f[0].to_string(),
                modality_index: int(f[1])?,
                rank: int(f[2])?,
                embedding_size: int(f[3])?,
                seed: f[4].parse().map_err(|_| Error::data(format!("sweep line {n}: bad seed")))?,
                param_count: int(f[5])?,
                metrics: if ok {
                    Some(MetricReport {
                        count: 0,
                        mae: parse_opt(f[7], n)?.ok_or_else(|| Error::data(format!("sweep line {n}: missing mae")))?,
                        pearson_corr: parse_opt(f[8], n)?,
                        acc2: parse_opt(f[9], n)?,
                        acc7: parse_opt(f[10], n)?,
                        acc_k: parse_opt(f[11], n)?,
                        f1_per_class: BTreeMap::new(),
                    })
                } else {
                    None
                },
                error: (!ok).then(|| f[12].to_string()),
            });
        }
        Ok(SweepResult { rows })
    }

    /// Mean and sample std of test MAE per (modality, rank), failed runs excluded.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(usize, usize), (String, usize, Vec<f64>)> = BTreeMap::new();
        for r in &self.rows {
            let entry = groups
                .entry((r.modality_index, r.rank))
                .or_insert_with(|| (r.modality.clone(), r.param_count, Vec::new()));
            if let Some(m) = &r.metrics {
                entry.2.push(m.mae);
            }
        }
        groups
            .into_iter()
            .map(|((_, rank), (modality, param_count, maes))| {
                let n = maes.len();
                let mean = if n == 0 { f64::NAN } else { maes.iter().sum::<f64>() / n as f64 };
                let std = if n < 2 {
                    0.0
                } else {
                    (maes.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                };
                SummaryRow {
                    modality,
                    rank,
                    runs: n,
                    mae_mean: mean,
                    mae_std: std,
                    param_count,
                }
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("modality,rank,embedding_size,runs,mae_mean,mae_std,param_count\n");
        for s in self.summary() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.modality,
                s.rank,
                s.rank + 1,
                s.runs,
                s.mae_mean,
                s.mae_std,
                s.param_count
            );
        }
        out
    }

    /// Mean test MAE over successful runs at one rank of one modality.
    pub fn mean_mae(&self, modality_index: usize, rank: usize) -> Option<f64> {
        let maes: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.modality_index == modality_index && r.rank == rank)
            .filter_map(|r| r.metrics.as_ref().map(|m| m.mae))
            .collect();
        (!maes.is_empty()).then(|| maes.iter().sum::<f64>() / maes.len() as f64)
    }
}

/// Trains one MRRF model per `(rank, seed)` with modality `k` compressed to
/// `rank` and scores it on the test split.
pub fn sweep_modality(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    splits: &Splits,
    k: usize,
    ranks: &[usize],
    seeds: &[u64],
) -> Result<SweepResult> {
    if spec.fusion != FusionKind::Mrrf {
        return Err(Error::Config(format!("sweeps need mrrf fusion, config uses {}", spec.fusion)));
    }
    let manifest = &splits.train.manifest;
    let names = manifest.names();
    if k >= names.len() {
        return Err(Error::invalid(format!("modality index {k} out of range for {} modalities", names.len())));
    }
    if ranks.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one rank and one seed"));
    }
    if ranks.contains(&0) {
        return Err(Error::invalid("sweep ranks must be at least 1"));
    }
    let padded = spec.padded_dims();
    if padded.len() != names.len() {
        return Err(Error::Config(format!("{} encoders configured for {} modalities", padded.len(), names.len())));
    }
    let jobs: Vec<(usize, u64)> = ranks.iter().flat_map(|&r| seeds.iter().map(move |&s| (r, s))).collect();
    let mut rows: Vec<SweepRow> = jobs
        .into_par_iter()
        .map(|(rank, seed)| {
            let rank = rank.min(padded[k]);
            let mut point = spec.clone();
            let mut ranks = padded.clone();
            ranks[k] = rank;
            point.ranks = Some(ranks);
            let mut train_cfg = cfg.clone();
            train_cfg.seed = seed;
            let built = Model::build(&point, manifest, seed);
            let param_count = built.as_ref().map(|m| m.fusion().param_count()).unwrap_or(0);
            let run = built
                .and_then(|m| train(m, &splits.train, &splits.validation, &train_cfg))
                .and_then(|(m, _)| evaluate(&m, &splits.test));
            let (metrics, error) = match run {
                Ok(r) => (Some(r), None),
                Err(e) => {
                    log::warn!("sweep point rank {rank} seed {seed} failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            SweepRow {
                modality: names[k].clone(),
                modality_index: k,
                rank,
                embedding_size: rank + 1,
                seed,
                param_count,
                metrics,
                error,
            }
        })
        .collect();
    rows.sort_by_key(|r| (r.modality_index, r.rank, r.seed));
    Ok(SweepResult { rows })
}
