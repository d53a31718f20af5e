//! One PASS/FAIL line per acceptance criterion.
//!
//! Runs as part of `cargo test`; the process fails only when a criterion cannot
//! be evaluated at all. Set `CITA_ACCEPTANCE_STRICT=1` to also fail on any FAIL
//! verdict, and `CITA_ACCEPTANCE_ONLY=5,7` to run a subset.

use std::cell::OnceCell;
use std::path::Path;
use std::time::Instant;

use cita::affinity::{cita, empirical_fisher_diag};
use cita::balance::{exact_w1, sinkhorn_w1_value, PointCloud};
use cita::datagen::{flip_treatments, gen_heat, CausalDataset, DatasetMeta, Family, FamilyParams};
use cita::nnkernel::{evaluate_with_gradient, init_params, Activation, MlpSpec};
use cita::tarnet::{objective, objective_on_rows, Architecture, IpmConfig, TarNetModel, TrainConfig};
use cita_pipeline::results::RunOutput;
use cita_pipeline::{runners, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OBJECTIVE_FD_TOL: f64 = 1e-3;
const KERNEL_FD_TOL: f64 = 1e-4;
const SINKHORN_REL_TOL: f64 = 0.02;
const FISHER_TOL: f64 = 1e-12;
const INVARIANCE_TOL: f64 = 1e-12;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }
}

type Outcome = Result<Verdict, String>;

fn random_task(rng: &mut ChaCha8Rng, n: usize, d: usize) -> CausalDataset {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    let mut a: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    a[0] = 0;
    a[1] = 1;
    let y = x.iter().map(|r| r.iter().sum::<f64>() + rng.random::<f64>()).collect();
    CausalDataset::new(x, a, y, None, DatasetMeta::new(Family::External, FamilyParams::None, 0, 1)).unwrap()
}

fn relative(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn c1_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    let mut worst_obj = 0.0f64;
    for case in 0..20 {
        let d = rng.random_range(1..4);
        let ds = random_task(&mut rng, 10, d);
        let arch = Architecture {
            phi_hidden: vec![rng.random_range(2..5)],
            latent: rng.random_range(2..4),
            head_hidden: vec![rng.random_range(2..4)],
            activation: Activation::Elu,
        };
        let model = TarNetModel::new(d, 1, &arch, case).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            alpha: rng.random_range(0.1..2.0),
            standardize: false,
            ipm: IpmConfig { eps: 0.1, iters: 20 },
            ..TrainConfig::default()
        };
        let rows: Vec<usize> = (0..ds.len()).collect();
        let (_, g) = objective_on_rows(&model, &ds, &rows, &cfg, true).map_err(|e| e.to_string())?;
        let g = g.ok_or("objective returned no gradient")?;
        let base = model.flat_params();
        for j in 0..base.len() {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[j] += delta;
                let mut m = model.clone();
                m.set_flat_params(&p).unwrap();
                objective(&m, &ds, &cfg).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst_obj = worst_obj.max(relative(fd, g[j], 1e-4));
        }
    }
    let mut worst_kernel = 0.0f64;
    for case in 0..20u64 {
        let widths = vec![rng.random_range(1..5), rng.random_range(2..6), rng.random_range(2..5), rng.random_range(1..3)];
        let act = [Activation::Elu, Activation::Relu, Activation::Identity][case as usize % 3];
        let spec = MlpSpec::new(widths.clone(), act, case).map_err(|e| e.to_string())?;
        // Zero initial biases can put ReLU pre-activations exactly on the kink.
        let mut params = init_params(&spec).map_err(|e| e.to_string())?;
        params.values.iter_mut().for_each(|v| *v += 0.1 * (rng.random::<f64>() - 0.5));
        let x: Vec<f64> = (0..widths[0]).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let target: Vec<f64> = (0..*widths.last().unwrap()).map(|_| rng.random::<f64>()).collect();
        let loss = |out: &[f64]| {
            let r: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
            (0.5 * r.iter().map(|v| v * v).sum::<f64>(), r)
        };
        let g = evaluate_with_gradient(&spec, &params, &x, loss).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for j in 0..params.len() {
            let mut plus = params.clone();
            plus.values[j] += h;
            let mut minus = params.clone();
            minus.values[j] -= h;
            let lp = evaluate_with_gradient(&spec, &plus, &x, loss).unwrap().loss;
            let lm = evaluate_with_gradient(&spec, &minus, &x, loss).unwrap().loss;
            worst_kernel = worst_kernel.max(relative((lp - lm) / (2.0 * h), g.grad[j], 1e-6));
        }
    }
    Ok(Verdict::new(
        worst_obj < OBJECTIVE_FD_TOL && worst_kernel < KERNEL_FD_TOL,
        format!("objective worst rel err {worst_obj:.2e} (< {OBJECTIVE_FD_TOL:e}), nnkernel {worst_kernel:.2e} (< {KERNEL_FD_TOL:e})"),
    ))
}

fn c2_transport() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(1..5);
        let shift = rng.random_range(0.0..1.0);
        let (n, m) = (rng.random_range(8..=64), rng.random_range(8..=64));
        let mut cloud = |n: usize, s: f64| {
            PointCloud::uniform((0..n).map(|_| (0..d).map(|_| rng.random::<f64>() + s).collect()).collect()).unwrap()
        };
        let p = cloud(n, 0.0);
        let q = cloud(m, shift);
        let exact = exact_w1(&p, &q).map_err(|e| e.to_string())?.cost;
        let approx = sinkhorn_w1_value(&p, &q, 0.01, 500).map_err(|e| e.to_string())?.cost;
        worst = worst.max((approx - exact).abs() / exact);
    }
    Ok(Verdict::new(
        worst <= SINKHORN_REL_TOL,
        format!("worst relative error {worst:.3e} over 50 pairs (<= {SINKHORN_REL_TOL})"),
    ))
}

fn c3_fisher() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let ds = random_task(&mut rng, 10, 3);
        let model = TarNetModel::new(3, 1, &Architecture::default(), case).map_err(|e| e.to_string())?;
        let sig = empirical_fisher_diag(&model, &ds).map_err(|e| e.to_string())?;
        let mut brute = vec![0.0; model.param_len()];
        for i in 0..ds.len() {
            let (_, g) = model.sample_nll_gradient(&ds.x[i], ds.a[i], ds.y[i]).map_err(|e| e.to_string())?;
            for (b, v) in brute.iter_mut().zip(&g) {
                *b += v * v / ds.len() as f64;
            }
        }
        let trace: f64 = brute.iter().sum();
        for (s, b) in sig.diag.iter().zip(&brute) {
            worst = worst.max((s - b / trace).abs());
        }
    }
    Ok(Verdict::new(worst <= FISHER_TOL, format!("max abs deviation {worst:.2e} on 10 datasets of 10 rows")))
}

fn c4_invariances() -> Outcome {
    let mut worst_zero = 0.0f64;
    let mut worst_perm = 0.0f64;
    let mut range_ok = true;
    for seed in 0..5u64 {
        let src = gen_heat(0.5 + 0.3 * seed as f64, 200, seed).map_err(|e| e.to_string())?;
        let model = TarNetModel::new(1, 1, &Architecture::default(), seed).map_err(|e| e.to_string())?;
        let self_d = cita(&model, &src, &src).map_err(|e| e.to_string())?;
        let flip = cita(&model, &src, &src.permute_labels(&[1, 0]).unwrap()).map_err(|e| e.to_string())?;
        worst_zero = worst_zero.max(self_d.d_sym).max(flip.d_sym);
        let tgt = flip_treatments(&gen_heat(1.7, 200, seed + 50).unwrap(), 0.3, seed).map_err(|e| e.to_string())?;
        let a = cita(&model, &src, &tgt).map_err(|e| e.to_string())?;
        let b = cita(&model, &src, &tgt.permute_labels(&[1, 0]).unwrap()).map_err(|e| e.to_string())?;
        worst_perm = worst_perm.max((a.d_sym - b.d_sym).abs());
        range_ok &= [&self_d, &flip, &a, &b]
            .iter()
            .all(|r| r.d_per_perm.values().all(|&d| (0.0..=1.0).contains(&d)));
    }
    Ok(Verdict::new(
        worst_zero <= INVARIANCE_TOL && worst_perm <= INVARIANCE_TOL && range_ok,
        format!("self/relabel d_sym max {worst_zero:.1e}, relabel invariance max {worst_perm:.1e}, all d in [0,1]: {range_ok}"),
    ))
}

fn run_config(name: &str, scratch: &Path) -> Result<RunOutput, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    let mut cfg = ExperimentConfig::load(&path).map_err(|e| format!("{name}: {e}"))?;
    let stem = name.trim_end_matches(".json");
    cfg.paths.workdir = scratch.join(stem).join("work");
    cfg.paths.out = scratch.join(stem).join("results");
    let out = runners::run(&cfg).map_err(|e| format!("{name}: {e}"))?;
    out.write(&cfg.paths.out).map_err(|e| format!("{name}: {e}"))?;
    Ok(out)
}

fn summarize(outs: &[&RunOutput], pick: impl Fn(&str) -> bool) -> Verdict {
    let checks: Vec<_> = outs.iter().flat_map(|o| o.checks.iter()).filter(|c| pick(&c.name)).collect();
    let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
    let detail = checks
        .iter()
        .map(|c| format!("{} {}: {}", if c.passed { "ok" } else { "FAILED" }, c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    Verdict::new(passed, if detail.is_empty() { "no checks produced".into() } else { detail })
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("CITA_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let strict = std::env::var("CITA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let scratch = tempfile::tempdir().expect("scratch directory");
    let dir = scratch.path();

    let correlation = OnceCell::new();
    let corr = || correlation.get_or_init(|| run_config("correlation-heat.json", dir)).clone();

    let criteria: Vec<(usize, &str, Box<dyn FnMut() -> Outcome + '_>)> = vec![
        (1, "gradient correctness", Box::new(c1_gradients)),
        (2, "sinkhorn vs exact transport", Box::new(c2_transport)),
        (3, "Fisher brute-force oracle", Box::new(c3_fisher)),
        (4, "CITA exact invariances", Box::new(c4_invariances)),
        (
            5,
            "symmetry curve on Heat",
            Box::new(|| Ok(summarize(&[&run_config("symmetry-heat.json", dir)?], |_| true))),
        ),
        (
            6,
            "CITA vs counterfactual loss on Heat",
            Box::new(|| Ok(summarize(&[&corr()?], |n| n.starts_with("spearman_alpha=")))),
        ),
        (
            7,
            "bound suite on Heat and Movement",
            Box::new(|| {
                let heat = run_config("bounds-heat.json", dir)?;
                let movement = run_config("bounds-movement.json", dir)?;
                Ok(summarize(&[&heat, &movement], |n| n.starts_with("holds_")))
            }),
        ),
        (
            8,
            "transfer gain on Heat and RKHS",
            Box::new(|| {
                let heat = run_config("transfer-heat.json", dir)?;
                let rkhs = run_config("transfer-rkhs.json", dir)?;
                Ok(summarize(&[&heat, &rkhs], |n| n == "small_transfer_beats_full_scratch"))
            }),
        ),
        (
            9,
            "transfer vs bundling on Movement",
            Box::new(|| Ok(summarize(&[&run_config("bundling-movement.json", dir)?], |n| n == "transfer_beats_bundling"))),
        ),
        (
            10,
            "counterfactual order preservation on Heat",
            Box::new(|| Ok(summarize(&[&corr()?], |n| n.starts_with("order_preservation_alpha=")))),
        ),
    ];

    let mut failed = 0;
    let mut broken = 0;
    for (i, name, mut f) in criteria {
        if !wanted(i) {
            continue;
        }
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(v) => {
                failed += usize::from(!v.passed);
                println!("{} C{i} {name} [{secs:.1}s]: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
            }
            Err(e) => {
                broken += 1;
                println!("FAIL C{i} {name} [{secs:.1}s]: error: {e}");
            }
        }
    }
    println!("acceptance: {failed} criteria failed, {broken} could not be evaluated");
    if broken > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
