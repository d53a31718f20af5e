//! Diagonal Fisher signatures and the label-invariant task distance (CITA).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{perm_to_string, CausalDataset};
use crate::error::{Error, Result};
use crate::tarnet::TarNetModel;

/// Largest label count for which all `(M+1)!` relabelings are enumerated.
pub const MAX_ARMS: usize = 6;
const TRACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherSignature {
    pub diag: Vec<f64>,
    pub trace_normalized: bool,
    pub model_id: String,
    pub dataset_id: String,
}

impl FisherSignature {
    pub fn is_zero(&self) -> bool {
        self.diag.iter().all(|&v| v == 0.0)
    }
}

/// `diag[j] = (1/n) Σ_i (∂L_i/∂θ_j)²` over all representation and head
/// parameters, with `L_i` the per-sample negative log-likelihood; scaled to unit
/// trace unless every gradient vanishes.
pub fn empirical_fisher_diag(model: &TarNetModel, ds: &CausalDataset) -> Result<FisherSignature> {
    let mut sig = raw_fisher_diag(model, ds)?;
    sig.model_id = model.id();
    sig.dataset_id = ds.id();
    Ok(sig)
}

fn raw_fisher_diag(model: &TarNetModel, ds: &CausalDataset) -> Result<FisherSignature> {
    if ds.is_empty() {
        return Err(Error::invalid("Fisher signature of an empty dataset"));
    }
    if ds.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: ds.dim(),
            context: "covariate width",
        });
    }
    if ds.num_arms() != model.num_arms() {
        return Err(Error::DimensionMismatch {
            expected: model.num_arms(),
            got: ds.num_arms(),
            context: "treatment arms",
        });
    }
    let mut diag = vec![0.0; model.param_len()];
    for i in 0..ds.len() {
        let (_, g) = model.sample_nll_gradient(&ds.x[i], ds.a[i], ds.y[i])?;
        for (d, v) in diag.iter_mut().zip(&g) {
            *d += v * v;
        }
    }
    let n = ds.len() as f64;
    diag.iter_mut().for_each(|d| *d /= n);
    let trace: f64 = diag.iter().sum();
    let trace_normalized = trace > 0.0;
    if trace_normalized {
        diag.iter_mut().for_each(|d| *d /= trace);
    }
    Ok(FisherSignature {
        diag,
        trace_normalized,
        model_id: String::new(),
        dataset_id: String::new(),
    })
}

/// `(1/√2) ‖√f1 − √f2‖₂` between unit-trace diagonal signatures.
pub fn frechet_distance(f1: &FisherSignature, f2: &FisherSignature) -> Result<f64> {
    if f1.diag.len() != f2.diag.len() {
        return Err(Error::DimensionMismatch {
            expected: f1.diag.len(),
            got: f2.diag.len(),
            context: "Fisher signature length",
        });
    }
    for f in [f1, f2] {
        let trace: f64 = f.diag.iter().sum();
        if !f.trace_normalized || (trace - 1.0).abs() > TRACE_TOL || f.diag.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("Fréchet distance needs unit-trace nonnegative signatures"));
        }
    }
    Ok(sqrt_distance(&f1.diag, &f2.diag))
}

fn sqrt_distance(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.sqrt() - y.sqrt();
            d * d
        })
        .sum();
    (s / 2.0).sqrt().min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistanceReport {
    pub source_id: String,
    pub target_id: String,
    /// Keyed by the permutation written as a digit string, e.g. `"10"` for the flip.
    pub d_per_perm: BTreeMap<String, f64>,
    pub d_sym: f64,
    pub best_perm: Vec<usize>,
}

impl TaskDistanceReport {
    /// Distance under the identity relabeling (the non-symmetrized affinity).
    pub fn d_identity(&self) -> f64 {
        let id: Vec<usize> = (0..self.best_perm.len()).collect();
        self.d_per_perm[&perm_to_string(&id)]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// All permutations of `0..n` in lexicographic order (identity first).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..n).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

/// Source-side state reused across targets: the model and `F_{s,s}`.
#[derive(Debug, Clone)]
pub struct SourceSignature<'a> {
    pub model: &'a TarNetModel,
    pub source_id: String,
    pub fisher: FisherSignature,
}

impl<'a> SourceSignature<'a> {
    pub fn new(model: &'a TarNetModel, source_ds: &CausalDataset) -> Result<Self> {
        let fisher = empirical_fisher_diag(model, source_ds)?;
        Ok(SourceSignature {
            model,
            source_id: source_ds.id(),
            fisher,
        })
    }

    /// `d_σ` for every relabeling σ of the target, and their minimum.
    pub fn distance_to(&self, target: &CausalDataset) -> Result<TaskDistanceReport> {
        let arms = self.model.num_arms();
        if target.num_arms() != arms {
            return Err(Error::invalid("source and target differ in treatment count"));
        }
        if target.dim() != self.model.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.input_dim(),
                got: target.dim(),
                context: "target covariate width",
            });
        }
        if arms > MAX_ARMS {
            return Err(Error::SizeOverCap {
                size: arms,
                cap: MAX_ARMS,
            });
        }
        if !self.fisher.trace_normalized {
            return Err(Error::invalid("source signature is identically zero"));
        }
        let mut d_per_perm = BTreeMap::new();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in permutations(arms) {
            let relabeled = target.permute_labels(&perm)?;
            let f = raw_fisher_diag(self.model, &relabeled)?;
            let d = if f.trace_normalized {
                sqrt_distance(&self.fisher.diag, &f.diag)
            } else {
                // A zero signature is at distance 1/√2 from any unit-trace one.
                std::f64::consts::FRAC_1_SQRT_2
            };
            if best.as_ref().is_none_or(|(b, _)| d < *b) {
                best = Some((d, perm.clone()));
            }
            d_per_perm.insert(perm_to_string(&perm), d);
        }
        let (d_sym, best_perm) = best.expect("at least the identity");
        Ok(TaskDistanceReport {
            source_id: self.source_id.clone(),
            target_id: target.id(),
            d_per_perm,
            d_sym,
            best_perm,
        })
    }
}

/// CITA distance from the source task `(source_model, source_ds)` to `target_ds`.
pub fn cita(source_model: &TarNetModel, source_ds: &CausalDataset, target_ds: &CausalDataset) -> Result<TaskDistanceReport> {
    if source_ds.dim() != target_ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: source_ds.dim(),
            got: target_ds.dim(),
            context: "source/target covariate width",
        });
    }
    if source_ds.meta.m != target_ds.meta.m {
        return Err(Error::invalid("source and target differ in treatment count"));
    }
    SourceSignature::new(source_model, source_ds)?.distance_to(target_ds)
}

/// Optional ε-approximation gate on source models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AffinityConfig {
    /// When set, a source whose recorded training loss exceeds this value is
    /// rejected with an error instead of being compared.
    #[serde(default)]
    pub max_source_train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub reports: Vec<TaskDistanceReport>,
}

/// Source with the smallest `d_sym`; ties go to the lowest index.
pub fn select_closest(
    sources: &[(&TarNetModel, &CausalDataset)],
    target: &CausalDataset,
    config: &AffinityConfig,
) -> Result<Selection> {
    if sources.is_empty() {
        return Err(Error::invalid("no source tasks to select from"));
    }
    let mut reports = Vec::with_capacity(sources.len());
    for (i, (model, ds)) in sources.iter().enumerate() {
        if let Some(limit) = config.max_source_train_loss {
            let loss = model.meta.train_loss.unwrap_or(f64::INFINITY);
            if !(loss <= limit) {
                return Err(Error::invalid(format!(
                    "source {i} fails the approximation gate: training loss {loss} > {limit}"
                )));
            }
        }
        reports.push(cita(model, ds, target)?);
    }
    Ok(Selection {
        index: argmin_first(reports.iter().map(|r| r.d_sym)),
        reports,
    })
}

pub fn argmin_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(diag: Vec<f64>) -> FisherSignature {
        FisherSignature {
            diag,
            trace_normalized: true,
            model_id: String::new(),
            dataset_id: String::new(),
        }
    }

    #[test]
    fn frechet_hand_values() {
        let a = sig(vec![0.5, 0.5]);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        let e1 = sig(vec![1.0, 0.0, 0.0]);
        let e2 = sig(vec![0.0, 1.0, 0.0]);
        assert!((frechet_distance(&e1, &e2).unwrap() - 1.0).abs() < 1e-15);
        let b = sig(vec![0.25, 0.75]);
        let hand = ((0.5f64.sqrt() - 0.5).powi(2) + (0.5f64.sqrt() - 0.75f64.sqrt()).powi(2)).sqrt()
            / 2f64.sqrt();
        let got = frechet_distance(&a, &b).unwrap();
        assert!((got - hand).abs() < 1e-15);
        assert!((got - 0.18462).abs() < 1e-4);
    }

    #[test]
    fn frechet_rejects_bad_inputs() {
        let a = sig(vec![0.5, 0.5]);
        assert!(frechet_distance(&a, &sig(vec![1.0])).is_err());
        assert!(frechet_distance(&a, &sig(vec![0.5, 0.7])).is_err());
        let mut z = sig(vec![0.0, 0.0]);
        z.trace_normalized = false;
        assert!(frechet_distance(&a, &z).is_err());
    }

    #[test]
    fn permutation_enumeration() {
        assert_eq!(permutations(1), vec![vec![0]]);
        assert_eq!(permutations(2), vec![vec![0, 1], vec![1, 0]]);
        let p3 = permutations(3);
        assert_eq!(p3.len(), 6);
        assert_eq!(p3[0], vec![0, 1, 2]);
        assert_eq!(p3[5], vec![2, 1, 0]);
        assert_eq!(permutations(5).len(), 120);
    }

    #[test]
    fn argmin_ties_go_low() {
        assert_eq!(argmin_first([0.3, 0.1, 0.1].into_iter()), 1);
        assert_eq!(argmin_first([0.0].into_iter()), 0);
    }
}
