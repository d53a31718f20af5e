use std::collections::BTreeMap;

use cita::datagen::Family;
use cita::metrics::{check_shalit_sandwich, check_thm1, check_thm2_l1_heat, check_transfer_bounds, BoundReport};

use super::{evaluate, train_model, Context};
use crate::config::ExperimentConfig;
use crate::error::{Result, StageExt};
use crate::job_seed;
use crate::results::{BoundRow, Check, ResultRow, RunOutput};

/// Every bound on every `(task, model)` pair of a family. Model `j` uses seed
/// `seeds[j]` and `alpha_grid[j mod |grid|]`; transfer bounds go from each
/// task to the next one in the family (cyclically), all on held-out splits.
pub fn run_verify_bounds(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ctx = Context::new(cfg)?;
    let nt = ctx.tasks.len();
    let jobs: Vec<(usize, usize)> = (0..nt).flat_map(|t| (0..cfg.seeds.len()).map(move |j| (t, j))).collect();
    let results = ctx.pool.map(&jobs, |&(ti, j)| {
        let src = &ctx.tasks[ti];
        let tgt = &ctx.tasks[(ti + 1) % nt];
        let seed = cfg.seeds[j];
        let alpha = cfg.alpha_grid[j % cfg.alpha_grid.len()];
        let stage = format!("{} model {j}", src.label);
        let model = train_model(&ctx, &src.train, alpha, job_seed(seed, "bounds")).stage(&stage)?;
        let mut reports = vec![
            check_thm1(&model, &src.test).stage(&stage)?,
            check_shalit_sandwich(&model, &src.test).stage(&stage)?,
        ];
        reports.extend(check_transfer_bounds(&model, &src.test, &tgt.test).stage(&stage)?);
        if src.test.meta.family == Family::Heat {
            reports.extend(check_thm2_l1_heat(&src.test, &tgt.test, &model).stage(&stage)?);
        }
        let eval = evaluate(&model, &src.test).stage(&stage)?;
        ctx.workdir
            .put_report(&format!("bounds-{}-{j}", src.label), &reports)
            .stage(&stage)?;
        Ok((ti, (ti + 1) % nt, seed, alpha, eval, reports))
    })?;

    let mut out = ctx.output();
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for (ti, tj, seed, alpha, eval, reports) in &results {
        let (src, tgt) = (&ctx.tasks[*ti], &ctx.tasks[*tj]);
        let mut row = ResultRow::new(cfg.experiment, &src.label, "model", *seed, *alpha);
        row.source_id = src.train.id();
        row.target_id = tgt.test.id();
        row.pehe = Some(eval.pehe);
        row.factual_loss = Some(eval.factual);
        row.cf_loss = Some(eval.cf);
        row.n_train = src.train.len();
        out.table.rows.push(row);
        for r in reports {
            let name = bound_name(r);
            let e = tally.entry(name.clone()).or_default();
            e.1 += 1;
            if r.holds {
                e.0 += 1;
            }
            let ratio = r.lhs / r.rhs.max(f64::MIN_POSITIVE);
            let w = worst.entry(name.clone()).or_insert(0.0);
            *w = w.max(ratio);
            out.bounds.push(BoundRow {
                source: src.label.clone(),
                target: tgt.label.clone(),
                seed: *seed,
                alpha: *alpha,
                bound: name,
                lhs: r.lhs,
                rhs: r.rhs,
                slack: r.slack,
                holds: r.holds,
            });
        }
    }
    for (name, (held, total)) in &tally {
        out.checks.push(Check::new(
            format!("holds_{name}"),
            held == total,
            format!("{held}/{total} hold; worst lhs/rhs {:.3}", worst[name]),
        ));
    }
    out.summarize(
        "holds",
        tally.iter().map(|(k, (h, t))| (k.clone(), format!("{h}/{t}"))).collect::<BTreeMap<_, _>>(),
    );
    out.summarize("worst_lhs_over_rhs", &worst);
    Ok(out)
}

pub fn bound_name(r: &BoundReport) -> String {
    serde_json::to_value(r.name)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}
