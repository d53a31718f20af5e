use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cita::affinity::cita;
use cita::datagen::{flip_treatments, load_dataset, save_dataset};
use cita::metrics::{check_shalit_sandwich, check_thm1, check_thm2_l1_heat, check_transfer_bounds, save_bound_reports};
use cita::tarnet::{train, TarNetModel};
use cita_pipeline::config::{FamilyConfig, TrainSettings};
use cita_pipeline::{runners, tasks, ExperimentConfig, ExperimentKind, FamilyKind, PipelineError, RunOutput};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cita", version, about = "Causal inference task affinity and ITE transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Heat,
    Movement,
    Rkhs,
    Ihdp,
}

impl From<FamilyArg> for FamilyKind {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Heat => FamilyKind::Heat,
            FamilyArg::Movement => FamilyKind::Movement,
            FamilyArg::Rkhs => FamilyKind::Rkhs,
            FamilyArg::Ihdp => FamilyKind::Ihdp,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration (JSON, see schema/experiment.schema.json).
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for result tables and summaries.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one task of a synthetic family as CSV plus a metadata sidecar.
    Generate {
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Setting index within the family.
        #[arg(long, default_value_t = 0)]
        setting: usize,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flip binary treatment labels with this probability.
        #[arg(long)]
        flip: Option<f64>,
        /// Real IHDP covariate CSV.
        #[arg(long)]
        covariates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a TARNet model on a dataset CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training settings JSON (the `train` block of an experiment config).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// CITA distance from a source task (model + data) to a target dataset.
    Affinity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select the closest source by CITA and fine-tune it on the target, from a config.
    Transfer(RunArgs),
    /// Evaluate the bounds for one model, or run the sweep given a config.
    VerifyBounds {
        #[arg(long, conflicts_with_all = ["model", "data"])]
        config: Option<PathBuf>,
        #[arg(long, requires = "data")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Target task for the transfer bounds; defaults to the source data.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a named experiment; exits with 3 when one of its checks fails.
    Experiment {
        name: String,
        #[command(flatten)]
        args: RunArgs,
    },
}

enum Failure {
    Error(PipelineError),
    Checks(Vec<String>),
}

impl<E: Into<PipelineError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Error(e.into())
    }
}

fn load_experiment(args: &RunArgs, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(k) = kind {
        if cfg.experiment != k {
            return Err(PipelineError::config(format!(
                "config describes `{}`, not `{}`",
                cfg.experiment.name(),
                k.name()
            ))
            .into());
        }
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &args.out {
        cfg.paths.out = o.clone();
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(out: &RunOutput, dir: &Path) -> Result<(), Failure> {
    for path in out.write(dir)? {
        println!("wrote {}", path.display());
    }
    for c in &out.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate {
            family,
            setting,
            n,
            seed,
            flip,
            covariates,
            out,
        } => {
            let mut fc = FamilyConfig::of(family.into());
            fc.data_seed = seed;
            fc.covariates = covariates;
            let rows = n.unwrap_or(fc.family.default_n());
            let (mut ds, label) = tasks::generate(&fc, setting, rows, None)?;
            if let Some(p) = flip {
                ds = flip_treatments(&ds, p, seed)?;
            }
            save_dataset(&ds, &out)?;
            println!("{label}: {} rows -> {} ({})", ds.len(), out.display(), ds.id());
        }
        Command::Train {
            data,
            config,
            alpha,
            seed,
            out,
        } => {
            let settings: TrainSettings = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)?;
                    serde_json::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", p.display())))?
                }
                None => TrainSettings::default(),
            };
            let cfg = settings.config(alpha, seed);
            cfg.validate().map_err(|e| PipelineError::config(e.to_string()))?;
            let ds = load_dataset(&data)?;
            let (model, trace) = train(&ds, &settings.architecture, &cfg)?;
            model.save(&out)?;
            let last = trace.epochs.last().map(|e| e.total).unwrap_or(f64::NAN);
            println!(
                "trained {} epochs, objective {last:.6e}, training loss {:.6e} -> {}",
                cfg.epochs,
                model.meta.train_loss.unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Affinity {
            model,
            source,
            target,
            out,
        } => {
            let m = TarNetModel::load(&model)?;
            let r = cita(&m, &load_dataset(&source)?, &load_dataset(&target)?)?;
            for (perm, d) in &r.d_per_perm {
                println!("d[{perm}] = {d:.6e}");
            }
            println!("d_sym = {:.6e} (permutation {:?})", r.d_sym, r.best_perm);
            if let Some(p) = out {
                r.save(p)?;
            }
        }
        Command::Transfer(args) => {
            let cfg = load_experiment(&args, Some(ExperimentKind::Transfer))?;
            let out = runners::run_transfer(&cfg)?;
            report(&out, &cfg.paths.out)?;
        }
        Command::VerifyBounds {
            config,
            model,
            data,
            target,
            out,
            workers,
        } => {
            if let Some(config) = config {
                let args = RunArgs {
                    config,
                    seed: None,
                    out,
                    workers,
                };
                let cfg = load_experiment(&args, Some(ExperimentKind::VerifyBounds))?;
                let res = runners::run_verify_bounds(&cfg)?;
                report(&res, &cfg.paths.out)?;
            } else {
                let (Some(model), Some(data)) = (model, data) else {
                    return Err(PipelineError::config("verify-bounds needs --config or --model with --data").into());
                };
                let m = TarNetModel::load(&model)?;
                let src = load_dataset(&data)?;
                let tgt = match target {
                    Some(t) => load_dataset(&t)?,
                    None => src.clone(),
                };
                let mut reports = vec![check_thm1(&m, &src)?, check_shalit_sandwich(&m, &src)?];
                reports.extend(check_transfer_bounds(&m, &src, &tgt)?);
                if let Ok(q) = check_thm2_l1_heat(&src, &tgt, &m) {
                    reports.extend(q);
                }
                for r in &reports {
                    println!(
                        "{} {}: lhs {:.6e} rhs {:.6e}",
                        if r.holds { "holds" } else { "VIOLATED" },
                        runners::bound_name(r),
                        r.lhs,
                        r.rhs
                    );
                }
                if let Some(p) = out {
                    save_bound_reports(&reports, p)?;
                }
            }
        }
        Command::Experiment { name, args } => {
            let kind = ExperimentKind::parse(&name)
                .ok_or_else(|| PipelineError::config(format!("unknown experiment `{name}`")))?;
            let cfg = load_experiment(&args, Some(kind))?;
            let out = runners::run(&cfg)?;
            report(&out, &cfg.paths.out)?;
            let failed: Vec<String> = out.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
            if !failed.is_empty() {
                return Err(Failure::Checks(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks(names)) => {
            eprintln!("failed checks: {}", names.join(", "));
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
