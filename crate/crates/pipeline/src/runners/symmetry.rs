use cita::affinity::cita;
use cita::datagen::flip_treatments;
use cita::error::Error;
use cita::metrics::spearman;

use super::{median_of, train_model, Context};
use crate::config::ExperimentConfig;
use crate::error::{Result, StageExt};
use crate::job_seed;
use crate::results::{Check, CurvePoint, ResultRow, RunOutput};

const GRID_TOL: f64 = 1e-9;

/// CITA and the identity-only distance from the base task (with its trained
/// model) to each flipped copy, over the flip probability grid.
pub fn run_symmetry(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ctx = Context::new(cfg)?;
    let base_task = ctx.task(cfg.base_index)?;
    let base = &base_task.train;
    if base.meta.m != 1 {
        return Err(Error::Unsupported("symmetry study needs a binary task".into())).stage("symmetry");
    }
    let alpha = cfg.source_alpha();
    let models = ctx.pool.map(&cfg.seeds, |&seed| {
        train_model(&ctx, base, alpha, job_seed(seed, "symmetry")).stage(&format!("seed {seed}"))
    })?;
    let jobs: Vec<(usize, f64)> =
        (0..cfg.seeds.len()).flat_map(|s| cfg.p_grid.iter().map(move |&p| (s, p))).collect();
    let reports = ctx.pool.map(&jobs, |&(s, p)| {
        let seed = cfg.seeds[s];
        let stage = format!("seed {seed} p {p}");
        let flipped = if p == 0.0 {
            base.clone()
        } else {
            flip_treatments(base, p, job_seed(seed, "flip")).stage(&stage)?
        };
        let r = cita(&models[s], base, &flipped).stage(&stage)?;
        Ok((seed, p, r))
    })?;

    let mut out = ctx.output();
    for (seed, p, r) in &reports {
        let mut row = ResultRow::new(cfg.experiment, format!("p={p}"), "cita", *seed, alpha);
        row.source_id = r.source_id.clone();
        row.target_id = r.target_id.clone();
        row.d_sym = Some(r.d_sym);
        row.d_identity = Some(r.d_identity());
        row.n_train = base.len();
        out.table.rows.push(row);
    }
    let curve = |f: &dyn Fn(&cita::affinity::TaskDistanceReport) -> f64| -> Vec<f64> {
        cfg.p_grid
            .iter()
            .map(|&p| median_of(reports.iter().filter(|(_, q, _)| *q == p).map(|(_, _, r)| f(r))))
            .collect()
    };
    let sym = curve(&|r| r.d_sym);
    let ident = curve(&|r| r.d_identity());
    for (i, &p) in cfg.p_grid.iter().enumerate() {
        out.curves.push(CurvePoint::median(cfg.experiment, "d_sym", p, sym[i], Some(alpha)));
        out.curves.push(CurvePoint::median(cfg.experiment, "d_identity", p, ident[i], Some(alpha)));
    }
    out.checks = symmetry_checks(&cfg.p_grid, &sym, &ident);
    out.summarize("base", &base_task.label);
    out.summarize("p_grid", &cfg.p_grid);
    out.summarize("d_sym", &sym);
    out.summarize("d_identity", &ident);
    out.summarize("identity_spearman", spearman(&cfg.p_grid, &ident));
    Ok(out)
}

fn grid_pos(grid: &[f64], p: f64) -> Option<usize> {
    grid.iter().position(|&q| (q - p).abs() < GRID_TOL)
}

/// Shape checks on the median curves: zero-flip and full-flip are the closest
/// tasks, p = 0.5 the furthest, the curve is mirror-symmetric within 20% of its
/// range, and the identity-only distance trends upward in p.
pub fn symmetry_checks(grid: &[f64], sym: &[f64], ident: &[f64]) -> Vec<Check> {
    let mut checks = Vec::new();
    let (lo, hi) = (grid_pos(grid, 0.0), grid_pos(grid, 1.0));
    match (lo, hi) {
        (Some(a), Some(b)) => {
            let end = sym[a].max(sym[b]);
            let rest = (0..grid.len()).filter(|&i| i != a && i != b).map(|i| sym[i]).fold(f64::INFINITY, f64::min);
            checks.push(Check::new(
                "endpoints_smallest",
                end <= rest,
                format!("d(0) {:.4e}, d(1) {:.4e}, smallest interior {rest:.4e}", sym[a], sym[b]),
            ));
        }
        _ => checks.push(Check::new("endpoints_smallest", false, "grid lacks p = 0 or p = 1")),
    }
    match grid_pos(grid, 0.5) {
        Some(m) => {
            let max = sym.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check::new(
                "max_at_half",
                sym[m] >= max,
                format!("d(0.5) {:.4e}, curve max {max:.4e}", sym[m]),
            ));
        }
        None => checks.push(Check::new("max_at_half", false, "grid lacks p = 0.5")),
    }
    let range = sym.iter().copied().fold(f64::NEG_INFINITY, f64::max) - sym.iter().copied().fold(f64::INFINITY, f64::min);
    let mut worst = 0.0f64;
    let mut mirrored = true;
    for (i, &p) in grid.iter().enumerate() {
        match grid_pos(grid, 1.0 - p) {
            Some(j) => worst = worst.max((sym[i] - sym[j]).abs()),
            None => mirrored = false,
        }
    }
    checks.push(Check::new(
        "mirror_symmetric",
        mirrored && worst <= 0.2 * range,
        format!("max |d(p) - d(1-p)| {worst:.4e}, 0.2 x range {:.4e}", 0.2 * range),
    ));
    let rho = spearman(grid, ident);
    checks.push(Check::new(
        "identity_increasing",
        rho >= 0.8,
        format!("Spearman(p, d_identity) {rho:.3} (threshold 0.8)"),
    ));
    checks
}
