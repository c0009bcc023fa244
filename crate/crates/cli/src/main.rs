use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrrf_core::config::ExperimentConfig;
use mrrf_core::data::{ModalityKind, SyntheticSpec, TaskKind};
use mrrf_core::experiment::{self, Partition};
use mrrf_core::selftest::run_selftest;
use mrrf_core::Error;

const EXIT_USER: u8 = 1;
const EXIT_NUMERIC: u8 = 2;

#[derive(Parser)]
#[command(name = "mrrf", version, about = "Multimodal fusion with per-modality Tucker compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a model from a config file; writes checkpoint.txt and train_log.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint; writes metrics.csv.
    ///
    /// Acc-2 counts a zero prediction as positive and ignores samples whose
    /// label is exactly zero. Acc-7 rounds half away from zero and clamps to [-3, 3].
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory or manifest.
        #[arg(long)]
        data: PathBuf,
        /// all, train, validation or test (split recorded in the checkpoint).
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain at several ranks of one modality; writes sweep.csv and sweep_summary.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// 1-based modality index or modality name.
        #[arg(long)]
        modality: String,
        #[arg(long, value_delimiter = ',', required = true)]
        ranks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search over a TOML grid file; writes leaderboard.csv.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare taped gradients with finite differences; exits 2 on mismatch.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Debug: flip the sign of one primitive's adjoint (e.g. outer, matvec_t, kmode:0).
        #[arg(long, value_name = "OP")]
        break_adjoint: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Selftest,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with synthetic data settings; the flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<ModalityKind>>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Shared-signal fraction per modality, in [0, 1].
    #[arg(long, value_delimiter = ',')]
    redundancy: Option<Vec<f64>>,
    #[arg(long)]
    interaction: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// regression or classification
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    structure_seed: Option<u64>,
    #[arg(long)]
    group_size: Option<usize>,
}

fn synthetic_spec(a: &GenDataArgs) -> Result<SyntheticSpec, Error> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.latent_dim {
        spec.latent_dim = v;
    }
    if let Some(v) = &a.kinds {
        spec.kinds = v.clone();
    }
    if let Some(v) = &a.widths {
        spec.widths = v.clone();
    }
    if let Some(v) = &a.redundancy {
        spec.redundancy = v.clone();
    }
    if let Some(v) = a.interaction {
        spec.interaction = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(t) = &a.task {
        spec.task = match t.as_str() {
            "regression" => TaskKind::Regression,
            "classification" => TaskKind::Classification,
            other => return Err(Error::Config(format!("unknown task {other:?}"))),
        };
    }
    if let Some(v) = a.classes {
        spec.classes = v;
    }
    if let Some(v) = a.structure_seed {
        spec.structure_seed = v;
    }
    if let Some(v) = a.group_size {
        spec.group_size = v;
    }
    Ok(spec)
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    flag.or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir in the config".into()))
}

fn modality_index(arg: &str, cfg: &ExperimentConfig) -> Result<usize, Error> {
    if let Ok(i) = arg.parse::<usize>() {
        return if i >= 1 { Ok(i - 1) } else { Err(Error::InvalidArgument("modality indices start at 1".into())) };
    }
    let names = experiment::load_data(cfg)?.manifest.names();
    names
        .iter()
        .position(|n| n == arg)
        .ok_or_else(|| Error::InvalidArgument(format!("no modality named {arg:?}; have {names:?}")))
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

/// Runs one command; `Ok(false)` means a check failed without an error.
fn run(cmd: Command) -> Result<bool, Error> {
    match cmd {
        Command::GenData(a) => {
            let spec = synthetic_spec(&a)?;
            let data = experiment::gen_data(&spec, a.samples, a.seed, &a.out)?;
            println!("wrote {} samples to {}", data.len(), show(&a.out));
            Ok(true)
        }
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_dir(out, &cfg)?;
            let r = experiment::run_train(&cfg, &out)?;
            println!(
                "best epoch {} of {}, validation metric {}",
                r.log.best_epoch,
                r.log.epochs.len(),
                r.log.best_val_metric
            );
            println!("checkpoint {}", show(&r.checkpoint));
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => {
            let partition: Partition = split.parse()?;
            let report = experiment::run_eval(&checkpoint, &data, partition, &out)?;
            print!("{}", report.to_csv());
            Ok(true)
        }
        Command::Sweep {
            config,
            modality,
            ranks,
            seeds,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_dir(out, &cfg)?;
            let k = modality_index(&modality, &cfg)?;
            let r = experiment::run_sweep(&cfg, k, &ranks, &seeds, &out)?;
            print!("{}", r.summary_csv());
            Ok(r.rows.iter().all(|row| row.metrics.is_some()))
        }
        Command::Grid { config, grid, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_dir(out, &cfg)?;
            let grid = experiment::load_grid(&grid)?;
            let r = experiment::run_grid(&cfg, &grid, &out)?;
            print!("{}", r.to_csv());
            Ok(r.best.is_some())
        }
        Command::Gradcheck {
            config,
            samples,
            break_adjoint,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_dir(out, &cfg)?;
            let reports = experiment::run_gradcheck(&cfg, samples, break_adjoint.as_deref(), &out)?;
            let mut ok = true;
            for (i, r) in reports.iter().enumerate() {
                for p in &r.params {
                    if !p.passed {
                        println!("sample {i}: {} FAILED (rel err {:e})", p.name, p.max_rel_err);
                    }
                }
                ok &= r.passed();
                println!("sample {i}: worst rel err {:e} ({})", r.worst(), if r.passed() { "pass" } else { "fail" });
            }
            Ok(ok)
        }
        Command::Selftest => {
            let r = run_selftest();
            for c in &r.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(r.passed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NUMERIC),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { EXIT_NUMERIC } else { EXIT_USER })
        }
    }
}
