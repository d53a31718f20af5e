use cita::datagen::{gen_heat, gen_rkhs, CausalDataset};
use cita::metrics::{
    check_shalit_sandwich, check_thm1, check_thm2_l1_heat, check_transfer_bounds, losses, pehe, BoundName,
};
use cita::tarnet::{train, Architecture, IpmConfig, TarNetModel, TrainConfig};
use proptest::prelude::*;

fn quick_model(ds: &CausalDataset, seed: u64) -> TarNetModel {
    let cfg = TrainConfig {
        alpha: 0.5,
        epochs: 15,
        batch_size: 64,
        seed,
        ipm: IpmConfig { eps: 0.1, iters: 20 },
        ..TrainConfig::default()
    };
    train(ds, &Architecture::default(), &cfg).unwrap().0
}

// Direct row loops, independent of the report plumbing.
fn reference_decomposition(model: &TarNetModel, ds: &CausalDataset) -> (f64, f64, f64, f64) {
    let pot = ds.potential.as_ref().unwrap();
    let n = ds.len() as f64;
    let (mut e1, mut e0, mut cross, mut cf0) = (0.0, 0.0, 0.0, 0.0);
    let mut treated = 0.0;
    for i in 0..ds.len() {
        let out = model.predict_outcomes(&ds.x[i]).unwrap();
        let d0 = out[0] - pot[i][0];
        let d1 = out[1] - pot[i][1];
        e0 += d0 * d0 / n;
        e1 += d1 * d1 / n;
        cross += d0 * d1 / n;
        if ds.a[i] == 1 {
            treated += 1.0;
            cf0 += d0 * d0;
        }
    }
    (e1, e0, cross, cf0 / treated)
}

#[test]
fn loss_report_matches_direct_loops() {
    let ds = gen_heat(0.9, 200, 1).unwrap();
    let model = quick_model(&ds, 1);
    let l = losses(&model, &ds).unwrap();
    let (e1, e0, cross, cf0) = reference_decomposition(&model, &ds);
    let p = pehe(&model, &ds).unwrap();
    assert!((p - (e1 + e0 - 2.0 * cross)).abs() < 1e-12);
    assert!((l.factual + l.counterfactual.unwrap() - (e1 + e0)).abs() < 1e-12);
    assert!((l.counterfactual_by_group.unwrap().0 - cf0).abs() < 1e-12);
    assert!((l.u - ds.treated_fraction()).abs() < 1e-15);
}

#[test]
fn constant_treatment_is_rejected() {
    let ds = gen_heat(0.9, 40, 1).unwrap();
    let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.a[i] == 0).collect();
    let controls = ds.subset(&rows).unwrap();
    let model = TarNetModel::new(1, 1, &Architecture::default(), 0).unwrap();
    assert!(losses(&model, &controls).is_err());
}

// With equal heads τ̂ = 0, PEHE is the mean squared true effect, while the factual
// loss is whatever the shared head gets wrong; the lower bound is then violated.
#[test]
fn thm1_lower_bound_fails_when_head_errors_are_correlated() {
    let ds = gen_heat(0.5, 200, 2).unwrap();
    let mut model = TarNetModel::new(1, 1, &Architecture::default(), 3).unwrap();
    model.head_params[1] = model.head_params[0].clone();
    let r = check_thm1(&model, &ds).unwrap();
    assert_eq!(r.name, BoundName::Thm1Lower);
    assert!(!r.holds, "lhs {} rhs {}", r.lhs, r.rhs);
    let (_, _, cross, _) = reference_decomposition(&model, &ds);
    assert!(cross > 0.0);
}

#[test]
fn sandwich_holds_on_trained_models() {
    for seed in 0..3 {
        let ds = gen_heat(0.5 + 0.5 * seed as f64, 200, seed).unwrap();
        let model = quick_model(&ds, seed);
        let r = check_shalit_sandwich(&model, &ds).unwrap();
        assert!(r.holds && r.slack >= 0.0, "{r:?}");
    }
}

#[test]
fn transfer_components_sum_and_self_transfer_has_no_shift_terms() {
    let ds = gen_heat(0.8, 150, 3).unwrap();
    let model = quick_model(&ds, 3);
    let own = check_transfer_bounds(&model, &ds, &ds).unwrap();
    assert_eq!(own.len(), 4);
    for r in &own {
        let s: f64 = r.components.iter().map(|(_, v)| v).sum();
        assert!((s - r.rhs).abs() < 1e-12);
        assert!((r.slack - (r.rhs - r.lhs)).abs() < 1e-15);
        for (name, v) in &r.components {
            if name.contains("f_source_f_target") || name.contains("t1_s1") || name.contains("t0_s0") || name.contains("gamma") {
                assert_eq!(*v, 0.0, "{name}");
            }
        }
    }
    assert!(own[2].assumptions.iter().any(|a| a.starts_with("A1")));
}

#[test]
fn neighbouring_heat_tasks_share_the_factual_cloud() {
    let s = gen_heat(0.8, 150, 3).unwrap();
    let t = gen_heat(0.9, 150, 3).unwrap();
    let model = quick_model(&s, 3);
    let reports = check_transfer_bounds(&model, &s, &t).unwrap();
    let thm3 = &reports[0];
    let ipm = thm3.components.iter().find(|(k, _)| k == "ipm_f_target_f_source").unwrap().1;
    assert_eq!(ipm, 0.0);
    let shift = thm3.components.iter().find(|(k, _)| k == "mean_abs_f_source_f_target").unwrap().1;
    assert!(shift > 0.0);
}

#[test]
fn heat_quadrature_tracks_sample_averages() {
    let s = gen_heat(0.6, 4000, 11).unwrap();
    let t = gen_heat(0.7, 4000, 11).unwrap();
    let model = quick_model(&s.prefix(300).unwrap(), 5);
    let q = check_thm2_l1_heat(&s, &t, &model).unwrap();
    let sample_factual = losses(&model, &s).unwrap().factual;
    let quad_factual = q[0].components[0].1;
    assert!((quad_factual - sample_factual).abs() < 0.1 * sample_factual + 1e-3, "{quad_factual} vs {sample_factual}");
    let sample_pehe = pehe(&model, &t).unwrap();
    let quad_pehe = q[1].lhs;
    assert!((quad_pehe - sample_pehe).abs() < 0.1 * sample_pehe + 1e-3, "{quad_pehe} vs {sample_pehe}");
}

#[test]
fn bounds_need_closed_forms_and_the_heat_family() {
    let rkhs = gen_rkhs(60, 5.0, 1).unwrap();
    let model = TarNetModel::new(rkhs.dim(), 1, &Architecture::default(), 0).unwrap();
    assert!(check_thm2_l1_heat(&rkhs, &rkhs, &model).is_err());
    let mut bare = rkhs.clone();
    bare.meta.params = cita::datagen::FamilyParams::None;
    assert!(check_transfer_bounds(&model, &bare, &rkhs).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // (e1 − e0)² ≤ 2e1² + 2e0² pointwise, so the sandwich holds for every network.
    #[test]
    fn sandwich_holds_for_untrained_networks(seed in 0u64..500, k in 0.5f64..2.0) {
        let ds = gen_heat(k, 40, seed).unwrap();
        let model = TarNetModel::new(1, 1, &Architecture::default(), seed).unwrap();
        let r = check_shalit_sandwich(&model, &ds).unwrap();
        prop_assert!(r.lhs <= r.rhs);
    }
}
