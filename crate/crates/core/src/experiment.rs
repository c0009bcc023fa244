//! Command implementations shared by the binary and the tests. Each runner
//! writes its artifacts under an output directory and returns what it wrote.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::json;

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport};
use crate::config::ExperimentConfig;
use crate::data::{self, generate_synthetic, load_dataset, read_checkpoint, save_dataset, write_checkpoint, Checkpoint, Dataset, Splits, SyntheticSpec};
use crate::error::{Error, Result};
use crate::grid::{grid_search, GridResult, GridSpec};
use crate::metrics::{evaluate, MetricReport};
use crate::model::Model;
use crate::sweep::{sweep_modality, SweepResult};
use crate::train::{train, TrainLog};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";
pub const LEADERBOARD_FILE: &str = "leaderboard.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Which part of a dataset to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    All,
    Train,
    Validation,
    Test,
}

impl FromStr for Partition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Partition::All),
            "train" => Ok(Partition::Train),
            "validation" | "val" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(Error::invalid(format!("unknown partition {other:?}"))),
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::All => "all",
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        })
    }
}

/// Generates a synthetic dataset and saves it to `out`.
pub fn gen_data(spec: &SyntheticSpec, samples: usize, seed: u64, out: &Path) -> Result<Dataset> {
    let data = generate_synthetic(spec, samples, seed)?;
    save_dataset(&data, out)?;
    Ok(data)
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(p), _) => load_dataset(p),
        (None, Some(s)) => generate_synthetic(&s.spec, s.samples, s.seed),
        (None, None) => Err(Error::Config("no data source configured".into())),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Splits> {
    let data = load_data(cfg)?;
    data::split(&data, cfg.split.ratios, cfg.split.seed)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
    pub checkpoint: PathBuf,
    pub log_csv: PathBuf,
}

/// Trains per `cfg`, then writes the checkpoint and the per-epoch log.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    let splits = prepare(cfg)?;
    ensure_dir(out)?;
    let model = Model::build(&cfg.model, &splits.train.manifest, cfg.model_seed())?;
    let log_csv = out.join(TRAIN_LOG_FILE);
    let (model, log) = match train(model, &splits.train, &splits.validation, &cfg.train) {
        Ok(r) => r,
        Err(e) => {
            if let Error::Diverged { log, .. } = &e {
                write(&log_csv, &log.to_csv())?;
            }
            return Err(e);
        }
    };
    write(&log_csv, &log.to_csv())?;
    let mut extra = BTreeMap::new();
    extra.insert("split_ratios".into(), json!(cfg.split.ratios));
    extra.insert("split_seed".into(), json!(cfg.split.seed));
    extra.insert("best_epoch".into(), json!(log.best_epoch));
    extra.insert("best_val_metric".into(), json!(log.best_val_metric));
    let checkpoint = out.join(CHECKPOINT_FILE);
    write_checkpoint(&Checkpoint::from_model(&model, &splits.train.manifest, extra), &checkpoint)?;
    Ok(TrainOutcome {
        model,
        log,
        checkpoint,
        log_csv,
    })
}

/// Scores a checkpoint on one partition of a dataset. Train/validation/test use
/// the split stored in the checkpoint.
pub fn run_eval(checkpoint: &Path, data_path: &Path, partition: Partition, out: &Path) -> Result<MetricReport> {
    let ck = read_checkpoint(checkpoint)?;
    let model = ck.to_model()?;
    let data = load_dataset(data_path)?;
    if data.manifest.modalities != ck.header.dataset.modalities || data.manifest.label_kind != ck.header.dataset.label_kind {
        return Err(Error::data(format!(
            "dataset at {} does not match the checkpoint's modalities or labels",
            data_path.display()
        )));
    }
    let subset = if partition == Partition::All {
        data
    } else {
        let ratios: [f64; 3] = ck
            .header
            .extra
            .get("split_ratios")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| Error::data("checkpoint does not record its split ratios"))?;
        let seed = ck
            .header
            .extra
            .get("split_seed")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::data("checkpoint does not record its split seed"))?;
        let s = data::split(&data, ratios, seed)?;
        match partition {
            Partition::Train => s.train,
            Partition::Validation => s.validation,
            _ => s.test,
        }
    };
    let report = evaluate(&model, &subset)?;
    ensure_dir(out)?;
    write(&out.join(METRICS_FILE), &report.to_csv())?;
    Ok(report)
}

/// Sweeps modality `k` and writes per-run and summary tables.
pub fn run_sweep(cfg: &ExperimentConfig, k: usize, ranks: &[usize], seeds: &[u64], out: &Path) -> Result<SweepResult> {
    let splits = prepare(cfg)?;
    let result = sweep_modality(&cfg.model, &cfg.train, &splits, k, ranks, seeds)?;
    ensure_dir(out)?;
    write(&out.join(SWEEP_FILE), &result.to_csv())?;
    write(&out.join(SWEEP_SUMMARY_FILE), &result.summary_csv())?;
    Ok(result)
}

/// Grid search; writes the leaderboard and the winning checkpoint.
pub fn run_grid(cfg: &ExperimentConfig, grid: &GridSpec, out: &Path) -> Result<GridResult> {
    let splits = prepare(cfg)?;
    let result = grid_search(grid, &cfg.model, &cfg.train, &splits.train, &splits.validation, cfg.model_seed())?;
    ensure_dir(out)?;
    write(&out.join(LEADERBOARD_FILE), &result.to_csv())?;
    if let Some((point, model)) = &result.best {
        let mut extra = BTreeMap::new();
        extra.insert("split_ratios".into(), json!(cfg.split.ratios));
        extra.insert("split_seed".into(), json!(cfg.split.seed));
        extra.insert("grid_index".into(), json!(point.index));
        write_checkpoint(&Checkpoint::from_model(model, &splits.train.manifest, extra), out.join(CHECKPOINT_FILE))?;
    }
    Ok(result)
}

pub fn load_grid(path: &Path) -> Result<GridSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Gradient check of a freshly initialized model on the first `samples`
/// training samples. `fault` sign-flips one op's adjoint.
pub fn run_gradcheck(cfg: &ExperimentConfig, samples: usize, fault: Option<&str>, out: &Path) -> Result<Vec<GradCheckReport>> {
    let splits = prepare(cfg)?;
    let model = Model::build(&cfg.model, &splits.train.manifest, cfg.model_seed())?;
    let opts = GradCheckOptions {
        fault: fault.map(str::to_string),
        ..GradCheckOptions::default()
    };
    let reports = splits
        .train
        .samples
        .iter()
        .take(samples.max(1))
        .map(|s| grad_check(&model, s, &opts))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("sample,parameter,max_rel_err,passed\n");
    for (s, r) in splits.train.samples.iter().zip(&reports) {
        for p in &r.params {
            csv.push_str(&format!("{},{},{},{}\n", s.id, p.name, p.max_rel_err, p.passed));
        }
    }
    ensure_dir(out)?;
    write(&out.join(GRADCHECK_FILE), &csv)?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ModalityKind;
    use crate::encoders::EncoderKind;
    use crate::fusion::FusionKind;
    use crate::model::{EncoderSpec, ModelSpec};
    use crate::train::TrainConfig;

    fn cfg(data: &Path) -> ExperimentConfig {
        ExperimentConfig {
            data: crate::config::DataSource { path: Some(data.to_path_buf()), synthetic: None },
            split: Default::default(),
            model: ModelSpec {
                fusion: FusionKind::Mrrf,
                fusion_dim: 3,
                ranks: Some(vec![2, 2, 2]),
                lmf_rank: None,
                encoders: vec![
                    EncoderSpec { kind: EncoderKind::Mlp, hidden: 4, out: 2 },
                    EncoderSpec { kind: EncoderKind::Mlp, hidden: 4, out: 2 },
                    EncoderSpec { kind: EncoderKind::Meanpool, hidden: 4, out: 2 },
                ],
            },
            train: TrainConfig {
                epochs: 4,
                batch_size: 8,
                learning_rate: 0.01,
                seed: 2,
                patience: 4,
                selection: None,
            },
            model_seed: None,
            output_dir: None,
        }
    }

    #[test]
    fn eval_reproduces_logged_validation_metric() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        let spec = SyntheticSpec::default();
        assert_eq!(spec.kinds[2], ModalityKind::Sequence);
        gen_data(&spec, 100, 5, &data_dir).unwrap();
        let c = cfg(&data_dir);
        let trained = run_train(&c, &dir.path().join("run")).unwrap();
        let report = run_eval(&trained.checkpoint, &data_dir, Partition::Validation, &dir.path().join("eval")).unwrap();
        assert_eq!(report.mae, trained.log.best_val_metric);
        let text = fs::read_to_string(dir.path().join("eval").join(METRICS_FILE)).unwrap();
        assert_eq!(MetricReport::from_csv(&text).unwrap(), report);
    }

    #[test]
    fn gradcheck_runner_flags_fault() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        gen_data(&SyntheticSpec::default(), 30, 5, &data_dir).unwrap();
        let c = cfg(&data_dir);
        let ok = run_gradcheck(&c, 1, None, dir.path()).unwrap();
        assert!(ok.iter().all(|r| r.passed()));
        let bad = run_gradcheck(&c, 1, Some("outer"), dir.path()).unwrap();
        assert!(bad.iter().any(|r| !r.passed()));
    }
}
