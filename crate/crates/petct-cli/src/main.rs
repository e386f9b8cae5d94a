//! `petct` — drive the CT/PET segmentation + survival pipeline from the shell.
//!
//! Every subcommand reads a TOML config (all keys optional), writes its
//! artifacts under `--out`, and leaves a `<command>.manifest.json` recording
//! inputs, outputs, seed, and the config hash. Exit codes: 0 success,
//! 2 configuration error, 1 runtime error.

mod config;
mod manifest;
mod stages;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use petct_core::features::Approach;
use petct_core::seg::SegArch;

use crate::config::Config;
use crate::manifest::Tracker;
use crate::stages::Env;

#[derive(thiserror::Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<petct_core::Error> for CliError {
    fn from(e: petct_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "petct",
    version,
    about = "Multimodal CT/PET tumor segmentation and survival analysis pipeline"
)]
struct Cli {
    /// TOML configuration file; built-in defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory that receives all artifacts and manifests
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Master seed (overrides the config file)
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages (overrides the config file)
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic CT/PET/mask cohort plus clinical table
    Phantom,
    /// Resample phantom volumes onto the configured grid spacing
    Resample,
    /// Train one segmentation architecture and save its checkpoint
    TrainSeg {
        /// Architecture: 1 (CT only), 2 (early fusion), 3 (late fusion)
        #[arg(long)]
        arch: String,
    },
    /// Predict masks for every patient with a trained checkpoint
    PredictSeg {
        #[arg(long)]
        arch: String,
    },
    /// Score trained architectures on the held-out patients
    EvalSeg,
    /// Build survival feature tables (approaches 1-3; all when omitted)
    Features {
        #[arg(long)]
        approach: Option<String>,
    },
    /// Cross-validate the survival model per approach
    Cv {
        #[arg(long)]
        approach: Option<String>,
    },
    /// Fit the survival model on the full feature table
    TrainSurv {
        #[arg(long, default_value = "3")]
        approach: String,
    },
    /// Predict recurrence-free survival for every patient
    PredictSurv {
        #[arg(long, default_value = "3")]
        approach: String,
    },
    /// SHAP attribution summary and feature/target correlations
    Explain {
        #[arg(long, default_value = "3")]
        approach: String,
    },
    /// Whole-cohort survival metrics report
    EvalSurv,
    /// Run every stage end to end
    RunAll,
}

fn parse_arch(s: &str) -> Result<SegArch, CliError> {
    s.parse::<SegArch>()
        .map_err(|_| CliError::Config(format!("--arch must be 1, 2, or 3 (got {s:?})")))
}

fn parse_approach(s: &str) -> Result<Approach, CliError> {
    s.parse::<Approach>()
        .map_err(|_| CliError::Config(format!("--approach must be 1, 2, or 3 (got {s:?})")))
}

fn init_workers(n: usize) {
    #[cfg(feature = "parallel")]
    if n > 0 {
        // ignore "already initialized" from repeated calls in-process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    init_workers(cfg.workers);
    let config_hash = cfg.content_hash();
    let env = Env {
        config: &cfg,
        seed: cfg.seed,
    };

    match cli.command {
        Command::RunAll => run_all(&env, &cli.out, &config_hash),
        other => {
            let (name, runner) = single_stage(other)?;
            let mut t = Tracker::new(&cli.out);
            runner(&env, &mut t)?;
            t.to_manifest(&name, env.seed, &config_hash).save(&cli.out)?;
            Ok(())
        }
    }
}

type StageFn = Box<dyn Fn(&Env, &mut Tracker) -> Result<(), CliError>>;

/// Manifest name and runner for one non-composite subcommand.
fn single_stage(cmd: Command) -> Result<(String, StageFn), CliError> {
    Ok(match cmd {
        Command::Phantom => ("phantom".into(), Box::new(stages::phantom) as StageFn),
        Command::Resample => ("resample".into(), Box::new(stages::resample_stage)),
        Command::TrainSeg { arch } => {
            let a = parse_arch(&arch)?;
            (
                format!("train-seg-{}", a.label()),
                Box::new(move |e: &Env, t: &mut Tracker| stages::train_seg(e, t, a)),
            )
        }
        Command::PredictSeg { arch } => {
            let a = parse_arch(&arch)?;
            (
                format!("predict-seg-{}", a.label()),
                Box::new(move |e: &Env, t: &mut Tracker| stages::predict_seg(e, t, a)),
            )
        }
        Command::EvalSeg => ("eval-seg".into(), Box::new(stages::eval_seg)),
        Command::Features { approach } => {
            let a = approach.as_deref().map(parse_approach).transpose()?;
            let name = a.map_or("features".to_string(), |a| {
                format!("features-{}", a.label())
            });
            (
                name,
                Box::new(move |e: &Env, t: &mut Tracker| stages::features(e, t, a)),
            )
        }
        Command::Cv { approach } => {
            let a = approach.as_deref().map(parse_approach).transpose()?;
            let name = a.map_or("cv".to_string(), |a| format!("cv-{}", a.label()));
            (
                name,
                Box::new(move |e: &Env, t: &mut Tracker| stages::cv(e, t, a)),
            )
        }
        Command::TrainSurv { approach } => {
            let a = parse_approach(&approach)?;
            (
                format!("train-surv-{}", a.label()),
                Box::new(move |e: &Env, t: &mut Tracker| stages::train_surv(e, t, a)),
            )
        }
        Command::PredictSurv { approach } => {
            let a = parse_approach(&approach)?;
            (
                format!("predict-surv-{}", a.label()),
                Box::new(move |e: &Env, t: &mut Tracker| stages::predict_surv(e, t, a)),
            )
        }
        Command::Explain { approach } => {
            let a = parse_approach(&approach)?;
            (
                format!("explain-{}", a.label()),
                Box::new(move |e: &Env, t: &mut Tracker| stages::explain(e, t, a)),
            )
        }
        Command::EvalSurv => ("eval-surv".into(), Box::new(stages::eval_surv)),
        Command::RunAll => unreachable!("run-all is dispatched separately"),
    })
}

/// Run every stage in dependency order. Each stage writes the same manifest
/// it would when invoked standalone; the `run-all` manifest aggregates all
/// artifacts including those stage manifests.
fn run_all(env: &Env, out: &Path, config_hash: &str) -> Result<(), CliError> {
    let mut master = Tracker::new(out);
    let mut stage = |name: String,
                     f: &dyn Fn(&Env, &mut Tracker) -> Result<(), CliError>|
     -> Result<(), CliError> {
        eprintln!("=== {name} ===");
        let mut t = Tracker::new(out);
        f(env, &mut t)?;
        let m = t.to_manifest(&name, env.seed, config_hash);
        master.write(
            &out.join(format!("{name}.manifest.json")),
            m.to_json().as_bytes(),
        )?;
        master.absorb(t);
        Ok(())
    };

    stage("phantom".into(), &stages::phantom)?;
    for arch in [SegArch::CtOnly, SegArch::EarlyFusion, SegArch::LateFusion] {
        stage(format!("train-seg-{}", arch.label()), &move |e: &Env,
                                                            t: &mut Tracker| {
            stages::train_seg(e, t, arch)
        })?;
        stage(format!("predict-seg-{}", arch.label()), &move |e: &Env,
                                                              t: &mut Tracker| {
            stages::predict_seg(e, t, arch)
        })?;
    }
    stage("eval-seg".into(), &stages::eval_seg)?;
    stage("features".into(), &|e: &Env, t: &mut Tracker| {
        stages::features(e, t, None)
    })?;
    stage("cv".into(), &|e: &Env, t: &mut Tracker| {
        stages::cv(e, t, None)
    })?;
    let surv_approach = Approach::WithImageEgfr;
    stage(
        format!("train-surv-{}", surv_approach.label()),
        &move |e: &Env, t: &mut Tracker| stages::train_surv(e, t, surv_approach),
    )?;
    stage(
        format!("predict-surv-{}", surv_approach.label()),
        &move |e: &Env, t: &mut Tracker| stages::predict_surv(e, t, surv_approach),
    )?;
    stage(
        format!("explain-{}", surv_approach.label()),
        &move |e: &Env, t: &mut Tracker| stages::explain(e, t, surv_approach),
    )?;
    stage("eval-surv".into(), &stages::eval_surv)?;

    master
        .to_manifest("run-all", env.seed, config_hash)
        .save(out)?;
    eprintln!("=== run-all complete ===");
    Ok(())
}
