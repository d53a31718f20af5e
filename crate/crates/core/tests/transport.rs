use cita::balance::{exact_w1, sinkhorn_w1, sinkhorn_w1_value, PointCloud};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> PointCloud {
    PointCloud::uniform(
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>() + shift).collect())
            .collect(),
    )
    .unwrap()
}

// Equal-size 1-D uniform clouds: optimal transport matches sorted order.
fn sorted_matching(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

// General 1-D uniform clouds: ∫ |F(t) − G(t)| dt over the merged breakpoints.
fn cdf_area(a: &[f64], b: &[f64]) -> f64 {
    let mut pts: Vec<f64> = a.iter().chain(b).copied().collect();
    pts.sort_by(f64::total_cmp);
    let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    pts.windows(2)
        .map(|w| (cdf(a, w[0]) - cdf(b, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

#[test]
fn exact_matches_sorted_matching_in_one_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [1, 2, 9, 40] {
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 + 0.5).collect();
        let p = PointCloud::uniform(a.iter().map(|&v| vec![v]).collect()).unwrap();
        let q = PointCloud::uniform(b.iter().map(|&v| vec![v]).collect()).unwrap();
        let got = exact_w1(&p, &q).unwrap().cost;
        assert!((got - sorted_matching(&a, &b)).abs() < 1e-12, "n={n}");
    }
}

#[test]
fn exact_matches_cdf_area_for_unequal_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (n, m) in [(3, 7), (10, 4), (33, 50)] {
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 1.5).collect();
        let p = PointCloud::uniform(a.iter().map(|&v| vec![v]).collect()).unwrap();
        let q = PointCloud::uniform(b.iter().map(|&v| vec![v]).collect()).unwrap();
        let got = exact_w1(&p, &q).unwrap().cost;
        assert!((got - cdf_area(&a, &b)).abs() < 1e-12, "{n}x{m}");
    }
}

#[test]
fn sinkhorn_tracks_exact_on_moderate_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let p = random_cloud(&mut rng, 32, 3, 0.0);
        let q = random_cloud(&mut rng, 32, 3, 0.4);
        let exact = exact_w1(&p, &q).unwrap().cost;
        let approx = sinkhorn_w1_value(&p, &q, 0.01, 500).unwrap().cost;
        assert!((approx - exact).abs() / exact < 0.02, "{approx} vs {exact}");
    }
}

#[test]
fn sinkhorn_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_cloud(&mut rng, 6, 2, 0.0);
    let q = random_cloud(&mut rng, 5, 2, 0.3);
    let (eps, iters) = (0.05, 40);
    let r = sinkhorn_w1(&p, &q, eps, iters).unwrap();
    let gp = r.grad_p.unwrap();
    let gq = r.grad_q.unwrap();
    let h = 1e-6;
    let fd = |p: &PointCloud, q: &PointCloud| sinkhorn_w1_value(p, q, eps, iters).unwrap().cost;
    for i in 0..p.len() {
        for d in 0..2 {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi.points[i][d] += h;
            lo.points[i][d] -= h;
            let num = (fd(&hi, &q) - fd(&lo, &q)) / (2.0 * h);
            let rel = (num - gp[i][d]).abs() / num.abs().max(1e-6);
            assert!(rel < 1e-3, "p[{i}][{d}]: {num} vs {}", gp[i][d]);
        }
    }
    for j in 0..q.len() {
        for d in 0..2 {
            let mut hi = q.clone();
            let mut lo = q.clone();
            hi.points[j][d] += h;
            lo.points[j][d] -= h;
            let num = (fd(&p, &hi) - fd(&p, &lo)) / (2.0 * h);
            let rel = (num - gq[j][d]).abs() / num.abs().max(1e-6);
            assert!(rel < 1e-3, "q[{j}][{d}]: {num} vs {}", gq[j][d]);
        }
    }
}

// Starting from g = 0 the first plan is nearly greedy, so the primal cost
// climbs towards its limit; block-coordinate ascent makes the dual monotone.
#[test]
fn sinkhorn_dual_is_monotone_and_cost_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_cloud(&mut rng, 24, 2, 0.0);
    let q = random_cloud(&mut rng, 20, 2, 0.5);
    let runs: Vec<_> = [1, 2, 5, 10, 50, 200, 500, 1000]
        .iter()
        .map(|&it| sinkhorn_w1_value(&p, &q, 0.01, it).unwrap())
        .collect();
    for w in runs.windows(2) {
        assert!(w[1].dual >= w[0].dual - 1e-12);
    }
    let exact = exact_w1(&p, &q).unwrap().cost;
    let last = runs.last().unwrap();
    assert!(last.cost >= exact - 1e-6);
    assert!((last.cost - runs[runs.len() - 2].cost).abs() < 1e-6);
}

fn cloud_strategy(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..max_n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_w1_is_a_metric(a in cloud_strategy(12), b in cloud_strategy(12), c in cloud_strategy(12)) {
        let (p, q, r) = (
            PointCloud::uniform(a).unwrap(),
            PointCloud::uniform(b).unwrap(),
            PointCloud::uniform(c).unwrap(),
        );
        let pq = exact_w1(&p, &q).unwrap().cost;
        let qp = exact_w1(&q, &p).unwrap().cost;
        let qr = exact_w1(&q, &r).unwrap().cost;
        let pr = exact_w1(&p, &r).unwrap().cost;
        prop_assert!(pq >= 0.0);
        prop_assert!((pq - qp).abs() < 1e-9);
        prop_assert!(pr <= pq + qr + 1e-9);
    }

    #[test]
    fn exact_w1_is_translation_invariant(a in cloud_strategy(10), b in cloud_strategy(10), cx in -5.0f64..5.0, cy in -5.0f64..5.0) {
        let p = PointCloud::uniform(a).unwrap();
        let q = PointCloud::uniform(b).unwrap();
        let base = exact_w1(&p, &q).unwrap().cost;
        let moved = exact_w1(&p.translated(&[cx, cy]), &q.translated(&[cx, cy])).unwrap().cost;
        prop_assert!((base - moved).abs() < 1e-9);
    }
}
