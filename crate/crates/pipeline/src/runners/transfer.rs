use std::collections::BTreeMap;

use cita::affinity::TaskDistanceReport;
use cita::tarnet::TarNetModel;

use super::{build_sources, median_of, nested_subset, scratch, transfer_to, Context, Eval, Source};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Result, StageExt};
use crate::results::{Check, CurvePoint, ResultRow, RunOutput};

pub(crate) struct CellResult {
    pub seed: u64,
    pub size: usize,
    /// `(arm, alpha, eval, training loss)`.
    pub arms: Vec<(&'static str, f64, Eval, f64)>,
    pub selected: usize,
    pub reports: Vec<TaskDistanceReport>,
}

pub(crate) const ARMS: [&str; 4] = ["scratch_practice", "scratch_ideal", "transfer", "transfer_ideal"];

fn arm_entry(name: &'static str, f: &super::Fitted) -> (&'static str, f64, Eval, f64) {
    (name, f.alpha, f.eval, f.model.meta.train_loss.unwrap_or(f64::NAN))
}

pub(crate) struct Sweep {
    pub target_label: String,
    pub target_id: String,
    pub sources: Vec<Source>,
    pub cells: Vec<CellResult>,
}

/// Scratch and transfer arms at every `(seed, size)` on the target task.
pub(crate) fn sweep(ctx: &Context) -> Result<Sweep> {
    let target = ctx.task(ctx.cfg.target_index)?;
    let sources = build_sources(ctx, &ctx.source_indices(target.index)?)?;
    let jobs: Vec<(u64, usize)> = ctx
        .cfg
        .seeds
        .iter()
        .flat_map(|&s| ctx.cfg.sizes.iter().map(move |&n| (s, n)))
        .collect();
    let cells = ctx.pool.map(&jobs, |&(seed, size)| {
        let stage = format!("seed {seed} size {size}");
        let subset = nested_subset(&target.train, seed, size).stage(&stage)?;
        let s = scratch(ctx, &subset, &target.test, crate::job_seed(seed, "scratch")).stage(&stage)?;
        let t = transfer_to(ctx, &sources, &subset, &target.test, seed).stage(&stage)?;
        Ok(CellResult {
            seed,
            size,
            arms: vec![
                arm_entry(ARMS[0], &s.practice),
                arm_entry(ARMS[1], &s.ideal),
                arm_entry(ARMS[2], &t.sweep.practice),
                arm_entry(ARMS[3], &t.sweep.ideal),
            ],
            selected: t.selected,
            reports: t.reports,
        })
    })?;
    Ok(Sweep {
        target_label: target.label.clone(),
        target_id: target.train.id(),
        sources,
        cells,
    })
}

impl Sweep {
    /// Median PEHE over seeds for one arm, keyed by size.
    pub fn medians(&self, arm: &str) -> BTreeMap<usize, f64> {
        let mut by_size: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for c in &self.cells {
            for (name, _, e, _) in &c.arms {
                if *name == arm {
                    by_size.entry(c.size).or_default().push(e.pehe);
                }
            }
        }
        by_size
            .into_iter()
            .map(|(n, v)| (n, median_of(v.into_iter())))
            .collect()
    }

    fn fill(&self, out: &mut RunOutput, kind: ExperimentKind, source_alpha: f64) {
        for c in &self.cells {
            let cell = format!("n={}", c.size);
            for (arm, alpha, e, _) in &c.arms {
                let mut row = ResultRow::new(kind, &cell, *arm, c.seed, *alpha);
                row.target_id = self.target_id.clone();
                if arm.starts_with("transfer") {
                    let r = &c.reports[c.selected];
                    row.source_id = r.source_id.clone();
                    row.d_sym = Some(r.d_sym);
                    row.d_identity = Some(r.d_identity());
                }
                row.pehe = Some(e.pehe);
                row.factual_loss = Some(e.factual);
                row.cf_loss = Some(e.cf);
                row.n_train = c.size;
                out.table.rows.push(row);
            }
            for r in &c.reports {
                let mut row = ResultRow::new(kind, &cell, "distance", c.seed, source_alpha);
                row.source_id = r.source_id.clone();
                row.target_id = r.target_id.clone();
                row.d_sym = Some(r.d_sym);
                row.d_identity = Some(r.d_identity());
                row.n_train = c.size;
                out.table.rows.push(row);
            }
        }
        for arm in ARMS {
            for (n, y) in self.medians(arm) {
                out.curves.push(CurvePoint::median(kind, arm, n as f64, y, None));
            }
        }
        let mut picks: BTreeMap<String, usize> = BTreeMap::new();
        for c in &self.cells {
            *picks.entry(self.sources[c.selected].label.clone()).or_default() += 1;
        }
        out.summarize("target", &self.target_label);
        out.summarize("selected_sources", picks);
        let medians: BTreeMap<&str, BTreeMap<usize, f64>> = ARMS.iter().map(|a| (*a, self.medians(a))).collect();
        out.summarize("median_pehe", medians);
    }
}

fn sources_unchanged(sources: &[Source]) -> Check {
    let mut bad = Vec::new();
    for s in sources {
        match TarNetModel::load(&s.model_path) {
            Ok(m) if m == s.model && m.id() == s.model.id() => {}
            _ => bad.push(s.label.clone()),
        }
    }
    Check::new(
        "sources_unchanged",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} persisted source models match their hashes", sources.len())
        } else {
            format!("modified: {}", bad.join(", "))
        },
    )
}

fn le_check(name: &str, lhs_name: &str, lhs: f64, rhs_name: &str, rhs: f64, factor: f64) -> Check {
    Check::new(
        name,
        lhs <= factor * rhs,
        format!("{lhs_name} {lhs:.4e} vs {rhs_name} {rhs:.4e}{}", if factor != 1.0 { format!(" (x{factor})") } else { String::new() }),
    )
}

/// Task-aware transfer: sources trained once, closest source by CITA, fine-tuned on
/// nested target subsets, compared with training from scratch.
pub fn run_transfer(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ctx = Context::new(cfg)?;
    let sw = sweep(&ctx)?;
    let mut out = ctx.output();
    out.summarize("source_alpha", cfg.source_alpha());
    sw.fill(&mut out, cfg.experiment, cfg.source_alpha());
    let (first, last) = (cfg.sizes[0], *cfg.sizes.last().expect("validated"));
    let t = sw.medians("transfer");
    let s = sw.medians("scratch_practice");
    out.checks.push(sources_unchanged(&sw.sources));
    out.checks.push(le_check(
        "transfer_beats_scratch",
        &format!("transfer@{first}"),
        t[&first],
        &format!("scratch_practice@{first}"),
        s[&first],
        1.0,
    ));
    out.checks.push(le_check(
        "small_transfer_beats_full_scratch",
        &format!("transfer@{first}"),
        t[&first],
        &format!("scratch_practice@{last}"),
        s[&last],
        1.0,
    ));
    let reports: Vec<&TaskDistanceReport> = sw.cells.iter().flat_map(|c| c.reports.iter()).collect();
    ctx.workdir.put_report("transfer-distances", &reports).stage("persist reports")?;
    Ok(out)
}

/// Smallest transfer size reaching the best scratch PEHE, as a saving relative to `full`.
pub fn data_gain(transfer: &BTreeMap<usize, f64>, scratch: &BTreeMap<usize, f64>, full: usize) -> f64 {
    let best = scratch.values().copied().fold(f64::INFINITY, f64::min);
    transfer
        .iter()
        .find(|(_, &v)| v <= best)
        .map(|(&n, _)| 1.0 - n as f64 / full as f64)
        .unwrap_or(0.0)
}

/// PEHE-vs-size curves for both arms, with the data gain.
pub fn run_efficiency(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ctx = Context::new(cfg)?;
    let sw = sweep(&ctx)?;
    let mut out = ctx.output();
    out.summarize("source_alpha", cfg.source_alpha());
    sw.fill(&mut out, cfg.experiment, cfg.source_alpha());
    let t = sw.medians("transfer");
    let s = sw.medians("scratch_practice");
    let last = *cfg.sizes.last().expect("validated");
    let full = cfg.family.train_n();
    let gain = data_gain(&t, &s, full);
    let best_s = s.values().copied().fold(f64::INFINITY, f64::min);
    let best_t = t.values().copied().fold(f64::INFINITY, f64::min);
    out.summarize("data_gain", gain);
    out.summarize("perf_gain", 1.0 - best_t / best_s);
    out.checks.push(le_check(
        "no_harm_at_saturation",
        &format!("transfer@{last}"),
        t[&last],
        &format!("scratch_practice@{last}"),
        s[&last],
        1.1,
    ));
    out.checks.push(Check::new("data_gain", gain >= 0.5, format!("data gain {gain:.3} (threshold 0.5)")));
    let curve: Vec<f64> = s.values().copied().collect();
    let monotone = curve.windows(2).all(|w| w[1] <= 1.25 * w[0]);
    out.checks.push(Check::new(
        "scratch_monotone",
        monotone,
        format!("median scratch PEHE by size {} (25% noise allowance)", fmt_list(&curve)),
    ));
    Ok(out)
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", items.join(", "))
}
