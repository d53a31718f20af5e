use cita::affinity::{cita, empirical_fisher_diag, frechet_distance, select_closest, AffinityConfig, FisherSignature};
use cita::datagen::{flip_treatments, gen_heat, CausalDataset, DatasetMeta, Family, FamilyParams};
use cita::nnkernel::{Activation, MlpSpec};
use cita::tarnet::{Architecture, LossKind, TarNetModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Forward-mode derivative oracle: (value, d/dθ_j) carried through the network.
#[derive(Clone, Copy)]
struct Dual(f64, f64);

fn mlp_dual(spec: &MlpSpec, params: &[f64], seed_at: Option<usize>, x: &[Dual]) -> Vec<Dual> {
    let w = &spec.layer_widths;
    let mut h = x.to_vec();
    let mut off = 0;
    for l in 0..w.len() - 1 {
        let (ni, no) = (w[l], w[l + 1]);
        let p = |k: usize| Dual(params[k], if seed_at == Some(k) { 1.0 } else { 0.0 });
        let mut out = Vec::with_capacity(no);
        for o in 0..no {
            let b = p(off + no * ni + o);
            let mut z = b;
            for i in 0..ni {
                let wv = p(off + o * ni + i);
                z = Dual(z.0 + wv.0 * h[i].0, z.1 + wv.1 * h[i].0 + wv.0 * h[i].1);
            }
            if l + 2 < w.len() {
                z = match spec.activation {
                    Activation::Elu if z.0 <= 0.0 => Dual(z.0.exp() - 1.0, z.0.exp() * z.1),
                    Activation::Relu if z.0 <= 0.0 => Dual(0.0, 0.0),
                    _ => z,
                };
            }
            out.push(z);
        }
        off += no * ni + no;
        h = out;
    }
    h
}

// dNLL/dθ_j for one sample, one coordinate at a time.
fn oracle_grad(model: &TarNetModel, x: &[f64], a: usize, y: f64) -> Vec<f64> {
    let np = model.phi_params.len();
    let xs: Vec<Dual> = model.standardizer.x(x).into_iter().map(|v| Dual(v, 0.0)).collect();
    let t = match model.meta.loss_kind {
        LossKind::SquaredError => model.standardizer.y(y),
        LossKind::BernoulliNll => y,
    };
    (0..model.param_len())
        .map(|j| {
            let (phi_seed, head_seed) = if j < np {
                (Some(j), None)
            } else {
                let off = model.head_offset(a);
                let hl = model.head_params[a].len();
                if j < off || j >= off + hl {
                    return 0.0;
                }
                (None, Some(j - off))
            };
            let z = mlp_dual(&model.phi_spec, model.phi_params.as_slice(), phi_seed, &xs);
            let h = mlp_dual(&model.head_specs[a], model.head_params[a].as_slice(), head_seed, &z)[0];
            let dl = match model.meta.loss_kind {
                LossKind::SquaredError => h.0 - t,
                LossKind::BernoulliNll => 1.0 / (1.0 + (-h.0).exp()) - t,
            };
            dl * h.1
        })
        .collect()
}

fn brute_force_fisher(model: &TarNetModel, ds: &CausalDataset) -> Vec<f64> {
    let mut diag = vec![0.0; model.param_len()];
    for i in 0..ds.len() {
        for (d, g) in diag.iter_mut().zip(oracle_grad(model, &ds.x[i], ds.a[i], ds.y[i])) {
            *d += g * g;
        }
    }
    let trace: f64 = diag.iter().sum();
    diag.iter().map(|v| v / trace).collect()
}

fn random_task(seed: u64, n: usize, d: usize, binary: bool) -> CausalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
    let mut a: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    a[0] = 0;
    if n > 1 {
        a[1] = 1;
    }
    let y = x
        .iter()
        .map(|r| {
            let s = r.iter().sum::<f64>() + rng.random::<f64>();
            if binary { (s > 0.5) as u8 as f64 } else { s }
        })
        .collect();
    CausalDataset::new(x, a, y, None, DatasetMeta::new(Family::External, FamilyParams::None, seed, 1)).unwrap()
}

fn small_arch() -> Architecture {
    Architecture {
        phi_hidden: vec![5],
        latent: 3,
        head_hidden: vec![4],
        activation: Activation::Elu,
    }
}

#[test]
fn fisher_matches_forward_mode_oracle() {
    for (seed, binary) in [(1, false), (2, false), (3, true)] {
        let ds = random_task(seed, 10, 3, binary);
        let mut model = TarNetModel::new(3, 1, &small_arch(), seed).unwrap();
        if binary {
            model.meta.loss_kind = LossKind::BernoulliNll;
        }
        let sig = empirical_fisher_diag(&model, &ds).unwrap();
        let oracle = brute_force_fisher(&model, &ds);
        assert!(sig.trace_normalized);
        for (j, (g, o)) in sig.diag.iter().zip(&oracle).enumerate() {
            assert!((g - o).abs() <= 1e-12, "seed {seed} coord {j}: {g} vs {o}");
        }
    }
}

#[test]
fn fisher_matches_oracle_with_default_architecture() {
    let ds = gen_heat(0.8, 10, 4).unwrap();
    let mut model = TarNetModel::new(1, 1, &Architecture::default(), 9).unwrap();
    model.standardizer = cita::tarnet::Standardizer::fit(&ds, true);
    let sig = empirical_fisher_diag(&model, &ds).unwrap();
    let oracle = brute_force_fisher(&model, &ds);
    let worst = sig.diag.iter().zip(&oracle).map(|(g, o)| (g - o).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn single_sample_signature_is_one_squared_gradient() {
    let ds = random_task(4, 10, 2, false).prefix(1).unwrap();
    let model = TarNetModel::new(2, 1, &small_arch(), 4).unwrap();
    let sig = empirical_fisher_diag(&model, &ds).unwrap();
    let (_, g) = model.sample_nll_gradient(&ds.x[0], ds.a[0], ds.y[0]).unwrap();
    let norm: f64 = g.iter().map(|v| v * v).sum();
    for (s, v) in sig.diag.iter().zip(&g) {
        assert!((s - v * v / norm).abs() < 1e-15);
    }
    // Only the factual head carries gradient.
    let off = model.head_offset(1 - ds.a[0]);
    assert!(sig.diag[off..off + model.head_params[0].len()].iter().all(|&v| v == 0.0));
}

#[test]
fn fisher_is_invariant_to_row_order() {
    let ds = random_task(5, 30, 2, false);
    let model = TarNetModel::new(2, 1, &small_arch(), 5).unwrap();
    let mut rows: Vec<usize> = (0..ds.len()).collect();
    rows.reverse();
    rows.swap(3, 17);
    let a = empirical_fisher_diag(&model, &ds).unwrap();
    let b = empirical_fisher_diag(&model, &ds.subset(&rows).unwrap()).unwrap();
    for (x, y) in a.diag.iter().zip(&b.diag) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn cita_invariances() {
    let ds = gen_heat(0.7, 60, 2).unwrap();
    let other = gen_heat(1.6, 60, 2).unwrap();
    let model = TarNetModel::new(1, 1, &Architecture::default(), 3).unwrap();
    let own = cita(&model, &ds, &ds).unwrap();
    assert_eq!(own.d_sym, 0.0);
    assert_eq!(own.best_perm, vec![0, 1]);

    let flipped = flip_treatments(&ds, 1.0, 8).unwrap();
    let r = cita(&model, &ds, &flipped).unwrap();
    assert!(r.d_sym <= 1e-12, "{}", r.d_sym);
    assert_eq!(r.best_perm, vec![1, 0]);
    assert!(r.d_identity() > 0.0);

    let base = cita(&model, &ds, &other).unwrap();
    let relabeled = cita(&model, &ds, &other.permute_labels(&[1, 0]).unwrap()).unwrap();
    assert!((base.d_sym - relabeled.d_sym).abs() <= 1e-12);
    for d in base.d_per_perm.values() {
        assert!((0.0..=1.0).contains(d));
    }
}

#[test]
fn selection_picks_the_matching_source_and_enforces_the_gate() {
    let target = gen_heat(0.9, 50, 6).unwrap();
    let near = gen_heat(0.9, 50, 6).unwrap();
    let far = gen_heat(2.0, 50, 7).unwrap();
    let model = TarNetModel::new(1, 1, &Architecture::default(), 2).unwrap();
    let sel = select_closest(&[(&model, &far), (&model, &near)], &target, &AffinityConfig::default()).unwrap();
    assert_eq!(sel.index, 1);
    assert_eq!(sel.reports.len(), 2);
    let gate = AffinityConfig { max_source_train_loss: Some(0.1) };
    assert!(select_closest(&[(&model, &near)], &target, &gate).is_err());
}

#[test]
fn mismatched_tasks_are_rejected() {
    let model = TarNetModel::new(1, 1, &Architecture::default(), 2).unwrap();
    let heat = gen_heat(0.9, 20, 6).unwrap();
    let wide = random_task(1, 20, 3, false);
    assert!(empirical_fisher_diag(&model, &wide).is_err());
    assert!(cita(&model, &heat, &wide).is_err());
}

fn signature() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 6).prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-3)
}

fn normalized(v: Vec<f64>) -> FisherSignature {
    let t: f64 = v.iter().sum();
    FisherSignature {
        diag: v.iter().map(|x| x / t).collect(),
        trace_normalized: true,
        model_id: String::new(),
        dataset_id: String::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frechet_is_a_bounded_metric(a in signature(), b in signature(), c in signature()) {
        let (a, b, c) = (normalized(a), normalized(b), normalized(c));
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        let bc = frechet_distance(&b, &c).unwrap();
        let ac = frechet_distance(&a, &c).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ba);
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
    }
}
