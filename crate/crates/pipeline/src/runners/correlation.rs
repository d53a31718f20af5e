use cita::affinity::SourceSignature;
use cita::error::Error;
use cita::metrics::{losses, pearson, spearman};

use super::{train_model, Context};
use crate::config::ExperimentConfig;
use crate::error::{Result, StageExt};
use crate::job_seed;
use crate::results::{Check, CurvePoint, ResultRow, RunOutput};

struct Point {
    target: usize,
    d_sym: f64,
    d_identity: f64,
    d_sym_cf: f64,
    cf: f64,
    factual: f64,
}

/// Base-task models per α; for each target, CITA to the target and the base
/// model's counterfactual loss there. Distances between the counterfactual
/// views are recorded for the order-preservation check.
pub fn run_correlation(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ctx = Context::new(cfg)?;
    let base = ctx.task(cfg.base_index)?;
    if base.train.potential.is_none() {
        return Err(Error::MissingPotentials).stage("correlation");
    }
    let base_cf = base.train.counterfactual_view().stage("counterfactual view")?;
    let targets: Vec<_> = ctx
        .tasks
        .iter()
        .map(|t| Ok((t, t.train.counterfactual_view()?)))
        .collect::<std::result::Result<_, Error>>()
        .stage("counterfactual view")?;
    let jobs: Vec<(f64, u64)> = cfg.alpha_grid.iter().flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let per_job = ctx.pool.map(&jobs, |&(alpha, seed)| {
        let stage = format!("alpha {alpha} seed {seed}");
        let model = train_model(&ctx, &base.train, alpha, job_seed(seed, "correlation")).stage(&stage)?;
        let sig = SourceSignature::new(&model, &base.train).stage(&stage)?;
        let sig_cf = SourceSignature::new(&model, &base_cf).stage(&stage)?;
        targets
            .iter()
            .enumerate()
            .map(|(i, (t, t_cf))| {
                let r = sig.distance_to(&t.train)?;
                let rc = sig_cf.distance_to(t_cf)?;
                let l = losses(&model, &t.test)?;
                Ok(Point {
                    target: i,
                    d_sym: r.d_sym,
                    d_identity: r.d_identity(),
                    d_sym_cf: rc.d_sym,
                    cf: l.counterfactual.ok_or(Error::MissingPotentials)?,
                    factual: l.factual,
                })
            })
            .collect::<std::result::Result<Vec<_>, Error>>()
            .stage(&stage)
    })?;

    let mut out = ctx.output();
    for ((alpha, seed), points) in jobs.iter().zip(&per_job) {
        for p in points {
            let t = targets[p.target].0;
            let mut row = ResultRow::new(cfg.experiment, &t.label, "base_model", *seed, *alpha);
            row.source_id = base.train.id();
            row.target_id = t.train.id();
            row.d_sym = Some(p.d_sym);
            row.d_identity = Some(p.d_identity);
            row.d_sym_cf = Some(p.d_sym_cf);
            row.cf_loss = Some(p.cf);
            row.factual_loss = Some(p.factual);
            row.n_train = base.train.len();
            out.table.rows.push(row);
        }
    }

    // Seed-averaged values per (α, target).
    let nt = targets.len();
    let mut by_alpha = Vec::new();
    for &alpha in &cfg.alpha_grid {
        let mut d = vec![0.0; nt];
        let mut dc = vec![0.0; nt];
        let mut cf = vec![0.0; nt];
        let mut count = 0.0;
        for ((a, _), points) in jobs.iter().zip(&per_job) {
            if *a != alpha {
                continue;
            }
            count += 1.0;
            for p in points {
                d[p.target] += p.d_sym;
                dc[p.target] += p.d_sym_cf;
                cf[p.target] += p.cf;
            }
        }
        for v in [&mut d, &mut dc, &mut cf] {
            v.iter_mut().for_each(|x| *x /= count);
        }
        by_alpha.push((alpha, d, dc, cf));
    }

    let mut coefficients = Vec::new();
    for (alpha, d, dc, cf) in &by_alpha {
        let label = format!("alpha={alpha}");
        for i in 0..nt {
            out.curves.push(CurvePoint::median(cfg.experiment, &label, d[i], cf[i], Some(*alpha)));
        }
        let rho = spearman(d, cf);
        let r = pearson(d, cf);
        let rho_order = spearman(d, dc);
        out.checks.push(Check::new(
            format!("spearman_{label}"),
            rho >= 0.5,
            format!("Spearman(d_sym, cf loss) {rho:.3}, Pearson {r:.3} (threshold 0.5)"),
        ));
        out.checks.push(Check::new(
            format!("order_preservation_{label}"),
            rho_order >= 0.5,
            format!("Spearman(factual d_sym, counterfactual d_sym) {rho_order:.3} (threshold 0.5)"),
        ));
        coefficients.push(serde_json::json!({
            "alpha": alpha, "spearman": rho, "pearson": r, "order_spearman": rho_order,
        }));
    }
    if by_alpha.len() > 1 {
        let ds: Vec<&[f64]> = by_alpha.iter().map(|(_, d, _, _)| d.as_slice()).collect();
        let stability = rank_agreement(&ds);
        out.summarize("rank_stability", stability);
        out.checks.push(Check::new(
            "rank_stability",
            stability >= 0.8,
            format!("share of target pairs ordered alike across alpha {stability:.3} (threshold 0.8)"),
        ));
    }
    out.summarize("base", &base.label);
    out.summarize("targets", targets.iter().map(|(t, _)| t.label.clone()).collect::<Vec<_>>());
    out.summarize("coefficients", coefficients);
    Ok(out)
}

/// Fraction of (curve pair, target pair) combinations that order the two
/// targets the same way.
pub fn rank_agreement(curves: &[&[f64]]) -> f64 {
    let (mut agree, mut total) = (0usize, 0usize);
    for a in 0..curves.len() {
        for b in a + 1..curves.len() {
            let (x, y) = (curves[a], curves[b]);
            for i in 0..x.len() {
                for j in i + 1..x.len() {
                    total += 1;
                    if x[i].total_cmp(&x[j]) == y[i].total_cmp(&y[j]) {
                        agree += 1;
                    }
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}
