//! 1-Wasserstein distance between weighted point clouds: a log-domain Sinkhorn
//! approximation with unrolled gradients, and an exact min-cost-flow solver.

use crate::error::{Error, Result};

pub const EXACT_CAP: usize = 256;
const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud needs at least one point"));
        }
        let l = points[0].len();
        if points.iter().any(|p| p.len() != l) {
            return Err(Error::invalid("points differ in dimension"));
        }
        if weights.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
                context: "cloud weights",
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid("weights must sum to 1"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(PointCloud { points, weights })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let m = points.len().max(1);
        PointCloud::new(points, vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| (x - w).abs() <= 1e-15)
    }

    pub fn translated(&self, c: &[f64]) -> Self {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| p.iter().zip(c).map(|(a, b)| a + b).collect())
                .collect(),
            weights: self.weights.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub cost: f64,
    /// Entropic dual objective `⟨a, f⟩ + ⟨b, g⟩` (Sinkhorn only; equals `cost` for
    /// the exact solver).
    pub dual: f64,
    pub plan: Option<Vec<Vec<f64>>>,
    pub grad_p: Option<Vec<Vec<f64>>>,
    pub grad_q: Option<Vec<Vec<f64>>>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn cost_matrix(p: &PointCloud, q: &PointCloud) -> Result<Vec<Vec<f64>>> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
            context: "latent dimension",
        });
    }
    Ok(p.points
        .iter()
        .map(|a| q.points.iter().map(|b| euclidean(a, b)).collect())
        .collect())
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn ln_weight(w: f64) -> f64 {
    if w > 0.0 {
        w.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Entropic W1 estimate with gradients wrt every point coordinate.
pub fn sinkhorn_w1(p: &PointCloud, q: &PointCloud, eps: f64, iters: usize) -> Result<TransportResult> {
    sinkhorn(p, q, eps, iters, true)
}

/// As [`sinkhorn_w1`] without the backward pass.
pub fn sinkhorn_w1_value(p: &PointCloud, q: &PointCloud, eps: f64, iters: usize) -> Result<TransportResult> {
    sinkhorn(p, q, eps, iters, false)
}

fn sinkhorn(p: &PointCloud, q: &PointCloud, eps: f64, iters: usize, want_grad: bool) -> Result<TransportResult> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid("sinkhorn eps must be positive"));
    }
    if iters == 0 {
        return Err(Error::invalid("sinkhorn needs at least one iteration"));
    }
    let c = cost_matrix(p, q)?;
    let (m, k) = (p.len(), q.len());
    let mut scale = 0.0;
    let mut argmax = (0, 0);
    for (i, row) in c.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > scale {
                scale = v;
                argmax = (i, j);
            }
        }
    }
    if scale == 0.0 {
        let plan = p
            .weights
            .iter()
            .map(|a| q.weights.iter().map(|b| a * b).collect())
            .collect();
        let zeros = |cl: &PointCloud| Some(vec![vec![0.0; cl.dim()]; cl.len()]);
        return Ok(TransportResult {
            cost: 0.0,
            dual: 0.0,
            plan: Some(plan),
            grad_p: if want_grad { zeros(p) } else { None },
            grad_q: if want_grad { zeros(q) } else { None },
        });
    }
    let ct: Vec<Vec<f64>> = c
        .iter()
        .map(|r| r.iter().map(|v| v / scale).collect())
        .collect();
    let la: Vec<f64> = p.weights.iter().map(|&w| ln_weight(w)).collect();
    let lb: Vec<f64> = q.weights.iter().map(|&w| ln_weight(w)).collect();

    // f_hist[t] = f^{t+1}, g_hist[t] = g^t (g^0 = 0).
    let mut f_hist: Vec<Vec<f64>> = Vec::with_capacity(if want_grad { iters } else { 1 });
    let mut g_hist: Vec<Vec<f64>> = Vec::with_capacity(if want_grad { iters + 1 } else { 1 });
    let mut g = vec![0.0; k];
    let mut f = vec![0.0; m];
    if want_grad {
        g_hist.push(g.clone());
    }
    for _ in 0..iters {
        for i in 0..m {
            let row = &ct[i];
            f[i] = -eps * log_sum_exp((0..k).map(|j| lb[j] + (g[j] - row[j]) / eps));
        }
        for j in 0..k {
            g[j] = -eps * log_sum_exp((0..m).map(|i| la[i] + (f[i] - ct[i][j]) / eps));
        }
        if want_grad {
            f_hist.push(f.clone());
            g_hist.push(g.clone());
        }
    }
    let mut plan = vec![vec![0.0; k]; m];
    let mut cost_n = 0.0;
    for i in 0..m {
        for j in 0..k {
            let v = (la[i] + lb[j] + (f[i] + g[j] - ct[i][j]) / eps).exp();
            plan[i][j] = v;
            cost_n += v * ct[i][j];
        }
    }
    let cost = scale * cost_n;
    if !cost.is_finite() {
        return Err(Error::NonFinite("sinkhorn cost"));
    }
    let dual = scale
        * (p.weights.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>()
            + q.weights.iter().zip(&g).map(|(w, v)| w * v).sum::<f64>());
    if !want_grad {
        return Ok(TransportResult {
            cost,
            dual,
            plan: Some(plan),
            grad_p: None,
            grad_q: None,
        });
    }

    // Reverse pass. cbar accumulates dL/dC̃ with C̃ = C / scale.
    let mut cbar = vec![vec![0.0; k]; m];
    let mut fbar = vec![0.0; m];
    let mut gbar = vec![0.0; k];
    for i in 0..m {
        for j in 0..k {
            let pc = plan[i][j] * ct[i][j];
            fbar[i] += scale * pc / eps;
            gbar[j] += scale * pc / eps;
            cbar[i][j] += scale * (plan[i][j] - pc / eps);
        }
    }
    for t in (0..iters).rev() {
        let ft = &f_hist[t];
        let gt = &g_hist[t + 1];
        let gprev = &g_hist[t];
        // g^t_j = -eps LSE_i(la_i + (f^t_i - C̃_ij)/eps)
        for i in 0..m {
            for j in 0..k {
                if gbar[j] == 0.0 {
                    continue;
                }
                let beta = (la[i] + (ft[i] - ct[i][j] + gt[j]) / eps).exp();
                fbar[i] -= gbar[j] * beta;
                cbar[i][j] += gbar[j] * beta;
            }
        }
        // f^t_i = -eps LSE_j(lb_j + (g^{t-1}_j - C̃_ij)/eps)
        let mut gnext = vec![0.0; k];
        for i in 0..m {
            if fbar[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                let alpha = (lb[j] + (gprev[j] - ct[i][j] + ft[i]) / eps).exp();
                gnext[j] -= fbar[i] * alpha;
                cbar[i][j] += fbar[i] * alpha;
            }
        }
        fbar.iter_mut().for_each(|v| *v = 0.0);
        gbar = gnext;
    }
    // C̃ = C / s with s = max C: dL/dC = cbar / s, plus the path through s.
    let mut dscale = cost_n;
    for i in 0..m {
        for j in 0..k {
            dscale -= cbar[i][j] * c[i][j] / (scale * scale);
        }
    }
    let mut dc: Vec<Vec<f64>> = cbar
        .iter()
        .map(|r| r.iter().map(|v| v / scale).collect())
        .collect();
    dc[argmax.0][argmax.1] += dscale;

    let l = p.dim();
    let mut grad_p = vec![vec![0.0; l]; m];
    let mut grad_q = vec![vec![0.0; l]; k];
    for i in 0..m {
        for j in 0..k {
            if c[i][j] == 0.0 || dc[i][j] == 0.0 {
                continue;
            }
            let w = dc[i][j] / c[i][j];
            for d in 0..l {
                let diff = p.points[i][d] - q.points[j][d];
                grad_p[i][d] += w * diff;
                grad_q[j][d] -= w * diff;
            }
        }
    }
    if grad_p.iter().chain(&grad_q).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn gradient"));
    }
    Ok(TransportResult {
        cost,
        dual,
        plan: Some(plan),
        grad_p: Some(grad_p),
        grad_q: Some(grad_q),
    })
}

/// Exact discrete W1 by successive shortest paths on the transport network.
/// Uniform clouds are solved on integer masses (`m'` per source, `m` per sink),
/// so the flow, and a zero cost for identical clouds, are exact.
pub fn exact_w1(p: &PointCloud, q: &PointCloud) -> Result<TransportResult> {
    for cl in [p, q] {
        if cl.len() > EXACT_CAP {
            return Err(Error::SizeOverCap {
                size: cl.len(),
                cap: EXACT_CAP,
            });
        }
    }
    let c = cost_matrix(p, q)?;
    let (m, k) = (p.len(), q.len());
    let (supply, demand, total, tol) = if p.is_uniform() && q.is_uniform() {
        (vec![k as f64; m], vec![m as f64; k], (m * k) as f64, 0.0)
    } else {
        (p.weights.clone(), q.weights.clone(), 1.0, 1e-13)
    };
    let flow = min_cost_flow(&c, &supply, &demand, tol);
    let mut cost = 0.0;
    let mut plan = vec![vec![0.0; k]; m];
    for i in 0..m {
        for j in 0..k {
            if flow[i][j] > 0.0 {
                cost += flow[i][j] * c[i][j];
                plan[i][j] = flow[i][j] / total;
            }
        }
    }
    Ok(TransportResult {
        cost: cost / total,
        dual: cost / total,
        plan: Some(plan),
        grad_p: None,
        grad_q: None,
    })
}

// Nodes: 0 = super source, 1..=m sources, m+1..=m+k sinks, m+k+1 = super sink.
fn min_cost_flow(c: &[Vec<f64>], supply: &[f64], demand: &[f64], tol: f64) -> Vec<Vec<f64>> {
    let (m, k) = (supply.len(), demand.len());
    let n = m + k + 2;
    let (src, snk) = (0, m + k + 1);
    let mut flow = vec![vec![0.0; k]; m];
    let mut out = vec![0.0; m];
    let mut inn = vec![0.0; k];
    let mut pot = vec![0.0; n];
    let target: f64 = supply.iter().sum::<f64>().min(demand.iter().sum());
    let mut sent = 0.0;
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    while target - sent > tol.max(0.0) && target - sent > 0.0 {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[src] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..n {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            let du = dist[u];
            let relax = |v: usize, cost: f64, dist: &mut [f64], prev: &mut [usize]| {
                if done[v] {
                    return;
                }
                let nd = du + cost + pot[u] - pot[v];
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                }
            };
            if u == src {
                for i in 0..m {
                    if supply[i] - out[i] > tol {
                        relax(1 + i, 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u <= m {
                let i = u - 1;
                if out[i] > tol {
                    relax(src, 0.0, &mut dist, &mut prev);
                }
                for j in 0..k {
                    relax(1 + m + j, c[i][j], &mut dist, &mut prev);
                }
            } else if u < snk {
                let j = u - 1 - m;
                for i in 0..m {
                    if flow[i][j] > tol {
                        relax(1 + i, -c[i][j], &mut dist, &mut prev);
                    }
                }
                if demand[j] - inn[j] > tol {
                    relax(snk, 0.0, &mut dist, &mut prev);
                }
            } else {
                for j in 0..k {
                    if inn[j] > tol {
                        relax(1 + m + j, 0.0, &mut dist, &mut prev);
                    }
                }
            }
        }
        if !dist[snk].is_finite() {
            break;
        }
        let dmax = dist[snk];
        for v in 0..n {
            pot[v] += dist[v].min(dmax);
        }
        // Bottleneck along the path.
        let mut bottleneck = f64::INFINITY;
        let mut v = snk;
        while v != src {
            let u = prev[v];
            let cap = residual(u, v, m, supply, demand, &out, &inn, &flow);
            bottleneck = bottleneck.min(cap);
            v = u;
        }
        bottleneck = bottleneck.min(target - sent);
        let mut v = snk;
        while v != src {
            let u = prev[v];
            if u == src {
                out[v - 1] += bottleneck;
            } else if v == src {
                out[u - 1] -= bottleneck;
            } else if v == snk {
                inn[u - 1 - m] += bottleneck;
            } else if u == snk {
                inn[v - 1 - m] -= bottleneck;
            } else if u <= m {
                flow[u - 1][v - 1 - m] += bottleneck;
            } else {
                flow[v - 1][u - 1 - m] -= bottleneck;
            }
            v = u;
        }
        sent += bottleneck;
    }
    flow
}

#[allow(clippy::too_many_arguments)]
fn residual(
    u: usize,
    v: usize,
    m: usize,
    supply: &[f64],
    demand: &[f64],
    out: &[f64],
    inn: &[f64],
    flow: &[Vec<f64>],
) -> f64 {
    let snk = m + demand.len() + 1;
    if u == 0 {
        supply[v - 1] - out[v - 1]
    } else if v == 0 {
        out[u - 1]
    } else if v == snk {
        demand[u - 1 - m] - inn[u - 1 - m]
    } else if u == snk {
        inn[v - 1 - m]
    } else if u <= m {
        f64::INFINITY
    } else {
        flow[v - 1][u - 1 - m]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> PointCloud {
        PointCloud::uniform(
            (0..n)
                .map(|_| (0..d).map(|_| rng.random::<f64>() + shift).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn singleton_transport_is_the_distance() {
        let p = PointCloud::uniform(vec![vec![0.0, 0.0]]).unwrap();
        let q = PointCloud::uniform(vec![vec![3.0, 4.0]]).unwrap();
        let s = sinkhorn_w1(&p, &q, 0.01, 50).unwrap();
        assert!((s.cost - 5.0).abs() < 0.05);
        let e = exact_w1(&p, &q).unwrap();
        assert_eq!(e.cost, 5.0);
        let g = s.grad_p.unwrap();
        assert!((g[0][0] + 0.6).abs() < 1e-9 && (g[0][1] + 0.8).abs() < 1e-9);
    }

    #[test]
    fn self_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cloud(&mut rng, 32, 3, 0.0);
        assert_eq!(exact_w1(&p, &p).unwrap().cost, 0.0);
        assert!(sinkhorn_w1(&p, &p, 0.01, 500).unwrap().cost <= 0.05);
    }

    #[test]
    fn sinkhorn_plan_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = cloud(&mut rng, 20, 2, 0.0);
        let q = cloud(&mut rng, 30, 2, 0.5);
        let r = sinkhorn_w1_value(&p, &q, 0.05, 300).unwrap();
        let plan = r.plan.unwrap();
        for (row, w) in plan.iter().zip(&p.weights) {
            assert!((row.iter().sum::<f64>() - w).abs() < 1e-6);
        }
        for j in 0..30 {
            let col: f64 = plan.iter().map(|r| r[j]).sum();
            assert!((col - q.weights[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn exact_plan_is_a_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = cloud(&mut rng, 7, 2, 0.0);
        let q = cloud(&mut rng, 5, 2, 0.3);
        let plan = exact_w1(&p, &q).unwrap().plan.unwrap();
        for row in &plan {
            assert!((row.iter().sum::<f64>() - 1.0 / 7.0).abs() < 1e-12);
        }
        for j in 0..5 {
            let col: f64 = plan.iter().map(|r| r[j]).sum();
            assert!((col - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn nonuniform_weights() {
        let p = PointCloud::new(vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).unwrap();
        let q = PointCloud::uniform(vec![vec![0.0]]).unwrap();
        assert!((exact_w1(&p, &q).unwrap().cost - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = PointCloud::uniform(vec![vec![0.0]]).unwrap();
        let q = PointCloud::uniform(vec![vec![0.0, 1.0]]).unwrap();
        assert!(sinkhorn_w1(&p, &q, 0.01, 10).is_err());
        assert!(sinkhorn_w1(&p, &p, 0.0, 10).is_err());
        assert!(PointCloud::new(vec![vec![0.0]], vec![0.5]).is_err());
        let big = PointCloud::uniform(vec![vec![0.0]; 257]).unwrap();
        assert!(matches!(exact_w1(&big, &p), Err(Error::SizeOverCap { .. })));
    }
}
