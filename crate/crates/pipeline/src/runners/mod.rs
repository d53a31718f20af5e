//! Experiment runners. Each returns a [`RunOutput`] with a result table, plot
//! curves, a JSON summary and the named property checks for that study.

mod bounds;
mod bundling;
mod correlation;
mod symmetry;
mod transfer;

pub use bounds::{bound_name, run_verify_bounds};
pub use bundling::run_bundling;
pub use correlation::{rank_agreement, run_correlation};
pub use symmetry::{run_symmetry, symmetry_checks};
pub use transfer::{data_gain, run_efficiency, run_transfer};

use cita::affinity::{argmin_first, FisherSignature, SourceSignature, TaskDistanceReport};
use cita::datagen::CausalDataset;
use cita::metrics::{losses, pehe};
use cita::tarnet::{fine_tune, train, TarNetModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Result, StageExt};
use crate::job_seed;
use crate::pool::Pool;
use crate::results::RunOutput;
use crate::tasks::{build_tasks, find, Task};
use crate::workdir::Workdir;

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.experiment {
        ExperimentKind::Transfer => run_transfer(cfg),
        ExperimentKind::Symmetry => run_symmetry(cfg),
        ExperimentKind::Correlation => run_correlation(cfg),
        ExperimentKind::Efficiency => run_efficiency(cfg),
        ExperimentKind::Bundling => run_bundling(cfg),
        ExperimentKind::VerifyBounds => run_verify_bounds(cfg),
    }
}

pub(crate) struct Context {
    pub cfg: ExperimentConfig,
    pub pool: Pool,
    pub workdir: Workdir,
    pub tasks: Vec<Task>,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let workdir = Workdir::create(&cfg.paths.workdir).stage("workdir")?;
        let tasks = build_tasks(&cfg.family).stage("generate")?;
        for t in &tasks {
            workdir.put_dataset(&t.train).stage("persist datasets")?;
        }
        Ok(Context {
            cfg: cfg.clone(),
            pool: Pool::new(cfg.workers)?,
            workdir,
            tasks,
        })
    }

    pub fn task(&self, index: usize) -> Result<&Task> {
        find(&self.tasks, index)
    }

    /// Configured sources, or every task except `exclude`.
    pub fn source_indices(&self, exclude: usize) -> Result<Vec<usize>> {
        let idx = match &self.cfg.source_indices {
            Some(v) => v.clone(),
            None => self.tasks.iter().map(|t| t.index).filter(|&i| i != exclude).collect(),
        };
        if idx.is_empty() {
            return Err(crate::PipelineError::config("no source tasks"));
        }
        for &i in &idx {
            self.task(i)?;
        }
        Ok(idx)
    }

    pub fn output(&self) -> RunOutput {
        RunOutput::new(self.cfg.experiment, self.cfg.hash())
    }
}

pub(crate) fn train_model(ctx: &Context, ds: &CausalDataset, alpha: f64, seed: u64) -> Result<TarNetModel> {
    let (model, _) = train(ds, &ctx.cfg.train.architecture, &ctx.cfg.train.config(alpha, seed))?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub(crate) struct Eval {
    pub pehe: f64,
    pub factual: f64,
    pub cf: f64,
}

pub(crate) fn evaluate(model: &TarNetModel, test: &CausalDataset) -> Result<Eval> {
    let l = losses(model, test)?;
    Ok(Eval {
        pehe: pehe(model, test)?,
        factual: l.factual,
        cf: l.counterfactual.unwrap_or(f64::NAN),
    })
}

/// A model chosen from an α sweep.
#[derive(Debug, Clone)]
pub(crate) struct Fitted {
    pub alpha: f64,
    pub model: TarNetModel,
    pub eval: Eval,
}

/// "Practice" selection uses the training loss, "ideal" the test PEHE.
pub(crate) struct Sweep {
    pub practice: Fitted,
    pub ideal: Fitted,
}

fn pick(fits: Vec<Fitted>) -> Sweep {
    let p = argmin_first(fits.iter().map(|f| f.model.meta.train_loss.unwrap_or(f64::INFINITY)));
    let i = argmin_first(fits.iter().map(|f| f.eval.pehe));
    Sweep {
        practice: fits[p].clone(),
        ideal: fits[i].clone(),
    }
}

pub(crate) fn scratch(ctx: &Context, subset: &CausalDataset, test: &CausalDataset, seed: u64) -> Result<Sweep> {
    let mut fits = Vec::new();
    for &alpha in &ctx.cfg.alpha_grid {
        let model = train_model(ctx, subset, alpha, seed)?;
        fits.push(Fitted {
            alpha,
            eval: evaluate(&model, test)?,
            model,
        });
    }
    Ok(pick(fits))
}

/// Rows of a seeded shuffle; prefixes give nested training subsets.
pub(crate) fn nested_order(n: usize, seed: u64) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    rows
}

pub(crate) fn nested_subset(ds: &CausalDataset, seed: u64, size: usize) -> Result<CausalDataset> {
    let rows = nested_order(ds.len(), job_seed(seed, "subset"));
    Ok(ds.subset(&rows[..size])?)
}

pub(crate) struct Source {
    pub index: usize,
    pub label: String,
    pub dataset_id: String,
    pub model: TarNetModel,
    pub fisher: FisherSignature,
    pub model_path: std::path::PathBuf,
}

impl Source {
    pub fn signature(&self) -> SourceSignature<'_> {
        SourceSignature {
            model: &self.model,
            source_id: self.dataset_id.clone(),
            fisher: self.fisher.clone(),
        }
    }
}

/// Trains and persists one model per source task on its full training split.
pub(crate) fn build_sources(ctx: &Context, indices: &[usize]) -> Result<Vec<Source>> {
    let alpha = ctx.cfg.source_alpha();
    let seed = job_seed(ctx.cfg.seeds[0], "source");
    ctx.pool.map(indices, |&i| {
        let task = ctx.task(i)?;
        let stage = format!("train source {}", task.label);
        let model = train_model(ctx, &task.train, alpha, seed).stage(&stage)?;
        let sig = SourceSignature::new(&model, &task.train).stage(&stage)?;
        let fisher = sig.fisher;
        let model_path = ctx.workdir.put_model(&model).stage(&stage)?;
        Ok(Source {
            index: i,
            label: task.label.clone(),
            dataset_id: task.train.id(),
            model,
            fisher,
            model_path,
        })
    })
}

pub(crate) struct Transferred {
    pub selected: usize,
    pub reports: Vec<TaskDistanceReport>,
    pub sweep: Sweep,
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (a, &p) in perm.iter().enumerate() {
        inv[p] = a;
    }
    inv
}

/// Task-aware transfer on one target subset: CITA to every source, pick the closest,
/// relabel its heads by the minimizing permutation and fine-tune per α.
pub(crate) fn transfer_to(
    ctx: &Context,
    sources: &[Source],
    subset: &CausalDataset,
    test: &CausalDataset,
    seed: u64,
) -> Result<Transferred> {
    let reports = sources
        .iter()
        .map(|s| s.signature().distance_to(subset))
        .collect::<std::result::Result<Vec<_>, _>>()
        .stage("affinity")?;
    let selected = argmin_first(reports.iter().map(|r| r.d_sym));
    let perm = &reports[selected].best_perm;
    let base = if perm.iter().enumerate().all(|(a, &p)| a == p) {
        sources[selected].model.clone()
    } else {
        sources[selected].model.permute_heads(&inverse(perm)).stage("relabel")?
    };
    let mut fits = Vec::new();
    for &alpha in &ctx.cfg.alpha_grid {
        let cfg = cita::tarnet::TrainConfig {
            epochs: ctx.cfg.train.fine_tune_epochs(),
            ..ctx.cfg.train.config(alpha, job_seed(seed, "fine-tune"))
        };
        let (model, _) = fine_tune(&base, subset, &cfg).stage("fine-tune")?;
        fits.push(Fitted {
            alpha,
            eval: evaluate(&model, test).stage("evaluate")?,
            model,
        });
    }
    Ok(Transferred {
        selected,
        reports,
        sweep: pick(fits),
    })
}

pub(crate) fn median_of(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    cita::metrics::median(&v)
}
