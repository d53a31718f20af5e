use cita::datagen::{concat, CausalDataset};

use super::{build_sources, median_of, nested_subset, scratch, transfer_to, Context};
use crate::config::ExperimentConfig;
use crate::error::{PipelineError, Result, StageExt};
use crate::job_seed;
use crate::results::{Check, CurvePoint, ResultRow, RunOutput};

/// Data bundling baseline: one model trained on the target subset plus the
/// closest `k` source datasets, against CITA transfer on the same subset.
pub fn run_bundling(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ctx = Context::new(cfg)?;
    let target = ctx.task(cfg.target_index)?;
    let sources = build_sources(&ctx, &ctx.source_indices(target.index)?)?;
    let counts = cfg.bundle_counts.clone().unwrap_or_else(|| vec![sources.len()]);
    if counts.is_empty() || counts.iter().any(|&k| k > sources.len()) {
        return Err(PipelineError::config(format!("bundle_counts must lie in 0..={}", sources.len())));
    }
    let jobs: Vec<(u64, usize)> = cfg.seeds.iter().flat_map(|&s| cfg.sizes.iter().map(move |&n| (s, n))).collect();
    let cells = ctx.pool.map(&jobs, |&(seed, size)| {
        let stage = format!("seed {seed} size {size}");
        let subset = nested_subset(&target.train, seed, size).stage(&stage)?;
        let t = transfer_to(&ctx, &sources, &subset, &target.test, seed).stage(&stage)?;
        let mut order: Vec<usize> = (0..sources.len()).collect();
        order.sort_by(|&a, &b| t.reports[a].d_sym.total_cmp(&t.reports[b].d_sym));
        let mut bundles = Vec::new();
        for &k in &counts {
            let mut parts: Vec<&CausalDataset> = vec![&subset];
            for &j in &order[..k] {
                parts.push(&ctx.task(sources[j].index)?.train);
            }
            let bundle = concat(&parts).stage(format!("{stage} bundle {k}"))?;
            let s = scratch(&ctx, &bundle, &target.test, job_seed(seed, "bundle")).stage(format!("{stage} bundle {k}"))?;
            bundles.push((k, bundle.len(), s.practice));
        }
        Ok((seed, size, t, bundles))
    })?;

    let mut out = ctx.output();
    for (seed, size, t, bundles) in &cells {
        let pr = &t.sweep.practice;
        let mut row = ResultRow::new(cfg.experiment, format!("n={size}"), "transfer", *seed, pr.alpha);
        row.source_id = t.reports[t.selected].source_id.clone();
        row.target_id = target.train.id();
        row.d_sym = Some(t.reports[t.selected].d_sym);
        row.pehe = Some(pr.eval.pehe);
        row.factual_loss = Some(pr.eval.factual);
        row.cf_loss = Some(pr.eval.cf);
        row.n_train = *size;
        out.table.rows.push(row);
        for (k, rows, f) in bundles {
            let mut row = ResultRow::new(cfg.experiment, format!("n={size},k={k}"), "bundling", *seed, f.alpha);
            row.target_id = target.train.id();
            row.pehe = Some(f.eval.pehe);
            row.factual_loss = Some(f.eval.factual);
            row.cf_loss = Some(f.eval.cf);
            row.n_train = *rows;
            out.table.rows.push(row);
        }
    }

    let size = cfg.sizes[0];
    let transfer = median_of(cells.iter().filter(|c| c.1 == size).map(|c| c.2.sweep.practice.eval.pehe));
    let curve: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            (k, median_of(cells.iter().filter(|c| c.1 == size).map(|c| c.3[i].2.eval.pehe)))
        })
        .collect();
    for &(k, y) in &curve {
        out.curves.push(CurvePoint::median(cfg.experiment, "bundling", k as f64, y, None));
        out.curves.push(CurvePoint::median(cfg.experiment, "transfer", k as f64, transfer, None));
    }
    let (k_max, bundled) = curve.iter().copied().max_by_key(|(k, _)| *k).expect("nonempty counts");
    out.checks.push(Check::new(
        "transfer_beats_bundling",
        transfer <= bundled,
        format!("median transfer PEHE {transfer:.4e} vs bundling with {k_max} sources {bundled:.4e} at n={size}"),
    ));
    if curve.len() >= 3 {
        let half = &curve[curve.len() / 2..];
        let (first, last) = (half[0].1, half[half.len() - 1].1);
        out.checks.push(Check::new(
            "bundling_plateau",
            last <= 1.1 * first,
            format!("bundling PEHE {first:.4e} -> {last:.4e} over the last half of the curve"),
        ));
    }
    out.summarize("target", &target.label);
    out.summarize("median_transfer_pehe", transfer);
    out.summarize("median_bundling_pehe", &curve);
    Ok(out)
}
