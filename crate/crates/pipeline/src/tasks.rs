use cita::datagen::{
    gen_heat, gen_ihdp, gen_movement, gen_rkhs, gen_surrogate, heat_k_grid, ihdp_settings, load_covariates,
    movement_settings, CausalDataset, Covariates,
};

use crate::config::{FamilyConfig, FamilyKind};
use crate::error::{PipelineError, Result, StageExt};

/// One member of a task family with a held-out split from the same generator.
#[derive(Debug, Clone)]
pub struct Task {
    /// Setting index within the family.
    pub index: usize,
    pub label: String,
    pub train: CausalDataset,
    pub test: CausalDataset,
}

pub fn family_size(fc: &FamilyConfig) -> usize {
    match fc.family {
        FamilyKind::Heat => heat_k_grid().len(),
        FamilyKind::Movement => movement_settings().len(),
        FamilyKind::Rkhs => fc.rkhs_tasks,
        FamilyKind::Ihdp => ihdp_settings().len(),
    }
}

pub fn selected_indices(fc: &FamilyConfig) -> Result<Vec<usize>> {
    let size = family_size(fc);
    let idx = fc.tasks.clone().unwrap_or_else(|| (0..size).collect());
    if let Some(&bad) = idx.iter().find(|&&i| i >= size) {
        return Err(PipelineError::config(format!("task index {bad} outside the {size}-task family")));
    }
    Ok(idx)
}

fn split(full: CausalDataset, n: usize, index: usize, label: String) -> Result<Task> {
    let rows: Vec<usize> = (0..full.len()).collect();
    let train = full.subset(&rows[..n])?;
    let test = full.subset(&rows[n..])?;
    if !train.has_overlap() || !test.has_overlap() {
        return Err(PipelineError::config(format!("{label}: a split lacks one treatment group")));
    }
    Ok(Task {
        index,
        label,
        train,
        test,
    })
}

pub fn ihdp_covariates(fc: &FamilyConfig, total: usize) -> Result<Covariates> {
    match &fc.covariates {
        Some(path) => {
            let mut cov = load_covariates(path)?;
            if cov.x.len() < total {
                return Err(PipelineError::config(format!(
                    "{} has {} rows, n + test_n needs {total}",
                    path.display(),
                    cov.x.len()
                )));
            }
            cov.x.truncate(total);
            if let Some(a) = cov.a.as_mut() {
                a.truncate(total);
            }
            Ok(cov)
        }
        None => Ok(gen_surrogate(total, fc.data_seed)?),
    }
}

/// Setting `index` of the family with `rows` rows, and its label.
pub fn generate(fc: &FamilyConfig, index: usize, rows: usize, covariates: Option<&Covariates>) -> Result<(CausalDataset, String)> {
    let size = family_size(fc);
    if index >= size {
        return Err(PipelineError::config(format!("task index {index} outside the {size}-task family")));
    }
    let (ds, label) = match fc.family {
        FamilyKind::Heat => {
            let k = heat_k_grid()[index];
            (gen_heat(k, rows, fc.data_seed), format!("heat-{index:02}-k{k:.3}"))
        }
        FamilyKind::Movement => {
            let (m, k) = movement_settings()[index];
            (gen_movement(m, k, rows, fc.data_seed), format!("movement-{index:02}-m{m}-k{k}"))
        }
        FamilyKind::Rkhs => (
            gen_rkhs(rows, fc.rkhs_bandwidth, fc.data_seed.wrapping_add(index as u64)),
            format!("rkhs-{index:02}"),
        ),
        FamilyKind::Ihdp => {
            let (mu, omega) = ihdp_settings()[index];
            let owned;
            let cov = match covariates {
                Some(c) => c,
                None => {
                    owned = ihdp_covariates(fc, rows)?;
                    &owned
                }
            };
            (
                gen_ihdp(cov, &mu, omega, fc.data_seed.wrapping_add(1 + index as u64)),
                format!("ihdp-{index:02}"),
            )
        }
    };
    let ds = ds.stage(format!("generate {label}"))?;
    Ok((ds, label))
}

/// Builds the selected tasks of a family. Heat and Movement tasks share one
/// covariate draw; each RKHS task is an independent draw.
pub fn build_tasks(fc: &FamilyConfig) -> Result<Vec<Task>> {
    let n = fc.train_n();
    let total = n + fc.test_n;
    if matches!(fc.family, FamilyKind::Heat | FamilyKind::Movement) && total % 2 != 0 {
        return Err(PipelineError::config("Heat and Movement need an even n + test_n"));
    }
    let indices = selected_indices(fc)?;
    let covariates = match fc.family {
        FamilyKind::Ihdp => Some(ihdp_covariates(fc, total)?),
        _ => None,
    };
    indices
        .into_iter()
        .map(|i| {
            let (full, label) = generate(fc, i, total, covariates.as_ref())?;
            split(full, n, i, label)
        })
        .collect()
}

pub fn find<'a>(tasks: &'a [Task], index: usize) -> Result<&'a Task> {
    tasks
        .iter()
        .find(|t| t.index == index)
        .ok_or_else(|| PipelineError::config(format!("task {index} is not among the built tasks")))
}
