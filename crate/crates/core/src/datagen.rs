//! Synthetic causal task families with known potential outcomes, treatment-flip
//! families, and the on-disk dataset format (CSV rows plus a JSON sidecar).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::{Bernoulli, Distribution};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::sig17;

/// Share of treated units in the original IHDP study (139 of 747).
pub const IHDP_TREATED_FRACTION: f64 = 139.0 / 747.0;
pub const IHDP_WIDTH: usize = 25;
const IHDP_SUPPORT: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
const IHDP_SHIFT: f64 = 0.5;
const GRAVITY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ihdp,
    Rkhs,
    Heat,
    Movement,
    Surrogate,
    External,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::Ihdp => "ihdp",
            Family::Rkhs => "rkhs",
            Family::Heat => "heat",
            Family::Movement => "movement",
            Family::Surrogate => "surrogate",
            Family::External => "external",
        };
        f.write_str(s)
    }
}

/// Generator parameters, including everything needed to re-evaluate the
/// noiseless outcome surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyParams {
    Ihdp {
        mu: Vec<f64>,
        omega: f64,
        beta: Vec<f64>,
    },
    Rkhs {
        bandwidth: f64,
        lambda: u64,
        mu0: Vec<f64>,
        mu1: Vec<f64>,
        gamma0: Vec<f64>,
        gamma1: Vec<f64>,
        centers0: Vec<Vec<f64>>,
        centers1: Vec<Vec<f64>>,
    },
    Heat {
        k: f64,
    },
    Movement {
        m: f64,
        k: f64,
    },
    None,
}

impl FamilyParams {
    /// Noiseless expected outcome `f(x, a)` of the generating mechanism.
    pub fn outcome_mean(&self, x: &[f64], a: usize) -> Option<f64> {
        match self {
            FamilyParams::Ihdp { omega, beta, .. } => {
                let lin: f64 = beta.iter().zip(x).map(|(b, v)| b * (v + IHDP_SHIFT)).sum();
                Some(if a == 0 { lin.exp() } else { lin - omega })
            }
            FamilyParams::Rkhs {
                bandwidth,
                centers0,
                centers1,
                ..
            } => {
                let centers = if a == 0 { centers0 } else { centers1 };
                Some(rbf_sum(centers, x, *bandwidth))
            }
            FamilyParams::Heat { k } => Some(if a == 0 {
                heat_control(*k, x[0])
            } else {
                heat_treated(*k, x[0])
            }),
            FamilyParams::Movement { m, k } => Some(if a == 0 {
                movement_velocity(1.0, x[0])
            } else {
                movement_velocity(k / m, x[0])
            }),
            FamilyParams::None => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub p: f64,
    pub seed: u64,
}

/// Sidecar metadata. Serialized as `<path>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub family: Family,
    pub params: FamilyParams,
    pub seed: u64,
    /// Largest treatment label; labels range over `0..=m`.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub d: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flips: Vec<FlipRecord>,
    /// Row-level provenance such as `"subset"`, `"bundle"` or `"counterfactual"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub derivation: Vec<String>,
}

impl DatasetMeta {
    pub fn new(family: Family, params: FamilyParams, seed: u64, m: usize) -> Self {
        DatasetMeta {
            family,
            params,
            seed,
            m,
            n: 0,
            d: 0,
            flips: Vec::new(),
            derivation: Vec::new(),
        }
    }
}

/// Covariates, treatment labels, factual outcomes and (for synthetic tasks)
/// the full potential-outcome table.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalDataset {
    pub x: Vec<Vec<f64>>,
    pub a: Vec<usize>,
    pub y: Vec<f64>,
    pub potential: Option<Vec<Vec<f64>>>,
    pub meta: DatasetMeta,
}

impl CausalDataset {
    pub fn new(
        x: Vec<Vec<f64>>,
        a: Vec<usize>,
        y: Vec<f64>,
        potential: Option<Vec<Vec<f64>>>,
        mut meta: DatasetMeta,
    ) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("ragged covariate matrix"));
        }
        if a.len() != n || y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.len().min(y.len()),
                context: "labels/outcomes",
            });
        }
        if let Some(&bad) = a.iter().find(|&&l| l > meta.m) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                max: meta.m,
            });
        }
        if let Some(pot) = &potential {
            if pot.len() != n || pot.iter().any(|r| r.len() != meta.m + 1) {
                return Err(Error::invalid("potential table must be n × (M+1)"));
            }
        }
        meta.n = n;
        meta.d = d;
        Ok(CausalDataset {
            x,
            a,
            y,
            potential,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    pub fn num_arms(&self) -> usize {
        self.meta.m + 1
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_arms()];
        for &l in &self.a {
            c[l] += 1;
        }
        c
    }

    /// True when every treatment arm has at least one unit.
    pub fn has_overlap(&self) -> bool {
        self.group_counts().iter().all(|&c| c > 0)
    }

    pub fn treated_fraction(&self) -> f64 {
        self.a.iter().filter(|&&l| l == 1).count() as f64 / self.len() as f64
    }

    /// Short content hash over metadata and rows.
    pub fn id(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.meta).unwrap_or_default();
        for (row, (&a, &y)) in self.x.iter().zip(self.a.iter().zip(&self.y)) {
            for v in row {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            bytes.extend_from_slice(&(a as u64).to_le_bytes());
            bytes.extend_from_slice(&y.to_bits().to_le_bytes());
        }
        crate::content_hash(&bytes)[..16].to_string()
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("row index {bad} out of range")));
        }
        let mut meta = self.meta.clone();
        meta.derivation.push(format!("subset:{}", indices.len()));
        CausalDataset::new(
            indices.iter().map(|&i| self.x[i].clone()).collect(),
            indices.iter().map(|&i| self.a[i]).collect(),
            indices.iter().map(|&i| self.y[i]).collect(),
            self.potential
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i].clone()).collect()),
            meta,
        )
    }

    /// The first `n` rows. Nested prefixes give nested training sets.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::invalid(format!(
                "prefix size {n} outside 1..={}",
                self.len()
            )));
        }
        let idx: Vec<usize> = (0..n).collect();
        self.subset(&idx)
    }

    /// Relabels treatments by `perm` (`a -> perm[a]`). Outcomes and the
    /// potential table are left untouched.
    pub fn permute_labels(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_arms())?;
        let mut out = self.clone();
        for l in &mut out.a {
            *l = perm[*l];
        }
        out.meta
            .derivation
            .push(format!("relabel:{}", perm_to_string(perm)));
        Ok(out)
    }

    /// The same units observed under the flipped assignment, with their
    /// counterfactual outcomes as factual ones. Binary tasks only.
    pub fn counterfactual_view(&self) -> Result<Self> {
        if self.meta.m != 1 {
            return Err(Error::Unsupported(
                "counterfactual view needs a binary task".into(),
            ));
        }
        let pot = self.potential.as_ref().ok_or(Error::MissingPotentials)?;
        let a: Vec<usize> = self.a.iter().map(|&l| 1 - l).collect();
        let y = a.iter().zip(pot).map(|(&l, row)| row[l]).collect();
        let mut meta = self.meta.clone();
        meta.derivation.push("counterfactual".into());
        CausalDataset::new(self.x.clone(), a, y, Some(pot.clone()), meta)
    }

    /// Treatment effect `Y_1 - Y_0` per row, from the potential table.
    pub fn true_ite(&self) -> Result<Vec<f64>> {
        let pot = self.potential.as_ref().ok_or(Error::MissingPotentials)?;
        if self.meta.m < 1 {
            return Err(Error::invalid("ITE needs at least two arms"));
        }
        Ok(pot.iter().map(|r| r[1] - r[0]).collect())
    }
}

pub fn check_permutation(perm: &[usize], arms: usize) -> Result<()> {
    if perm.len() != arms {
        return Err(Error::DimensionMismatch {
            expected: arms,
            got: perm.len(),
            context: "label permutation",
        });
    }
    let mut seen = vec![false; arms];
    for &p in perm {
        if p >= arms || seen[p] {
            return Err(Error::invalid(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn perm_to_string(perm: &[usize]) -> String {
    perm.iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join("")
}

/// Concatenates datasets with identical covariate width and arm count.
pub fn concat(parts: &[&CausalDataset]) -> Result<CausalDataset> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
    let (d, m) = (first.dim(), first.meta.m);
    let keep_potential = parts.iter().all(|p| p.potential.is_some());
    let mut x = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut pot = Vec::new();
    for p in parts {
        if p.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.dim(),
                context: "bundled covariate width",
            });
        }
        if p.meta.m != m {
            return Err(Error::invalid("bundled datasets differ in arm count"));
        }
        x.extend(p.x.iter().cloned());
        a.extend_from_slice(&p.a);
        y.extend_from_slice(&p.y);
        if keep_potential {
            pot.extend(p.potential.as_ref().unwrap().iter().cloned());
        }
    }
    let mut meta = first.meta.clone();
    meta.derivation.push(format!("bundle:{}", parts.len()));
    CausalDataset::new(x, a, y, keep_potential.then_some(pot), meta)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// χ² draw with integer degrees of freedom, as a sum of squared standard normals.
fn chi_squared(rng: &mut ChaCha8Rng, dof: usize) -> f64 {
    (0..dof)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * z
        })
        .sum()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, mean: &[f64]) -> Vec<f64> {
    mean.iter()
        .map(|m| m + rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Surrogate covariate block standing in for the IHDP covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub x: Vec<Vec<f64>>,
    /// Treatment labels shipped with the covariates, when known.
    pub a: Option<Vec<usize>>,
    /// Loaded from a real covariate file rather than drawn by [`gen_surrogate`].
    pub external: bool,
}

/// `n × 25` standard-normal covariates with Bernoulli(139/747) assignment.
/// Redraws the assignment until both groups are non-empty.
pub fn gen_surrogate(n: usize, seed: u64) -> Result<Covariates> {
    if n < 2 {
        return Err(Error::invalid("surrogate covariates need n >= 2"));
    }
    let mut rng = rng_for(seed);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..IHDP_WIDTH).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let a = bernoulli_assignment(&mut rng, n, IHDP_TREATED_FRACTION);
    Ok(Covariates {
        x,
        a: Some(a),
        external: false,
    })
}

fn bernoulli_assignment(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<usize> {
    let dist = Bernoulli::new(p).expect("probability in [0, 1]");
    loop {
        let a: Vec<usize> = (0..n).map(|_| dist.sample(rng) as usize).collect();
        let treated = a.iter().sum::<usize>();
        if treated > 0 && treated < n {
            return a;
        }
    }
}

fn validate_mu(mu: &[f64]) -> Result<()> {
    if mu.len() != IHDP_SUPPORT.len() {
        return Err(Error::invalid("mu must have 5 entries"));
    }
    if mu.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::invalid("mu entries must lie in [0, 1]"));
    }
    if (mu.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("mu must sum to 1"));
    }
    Ok(())
}

/// The ten IHDP settings `(mu, omega)`, base setting first.
pub fn ihdp_settings() -> Vec<([f64; 5], f64)> {
    (0..10)
        .map(|i| {
            let s = i as f64 * 0.01;
            ([0.6 + s, 0.1 - s, 0.1, 0.1, 0.1], 4.0 + i as f64 * 0.1)
        })
        .collect()
}

/// IHDP-style outcome simulator:
/// `Y0 ~ N(exp(β·(x + 0.5)), 1)`, `Y1 ~ N(β·(x + 0.5) − ω, 1)`, with the
/// coefficients `β_j` drawn from `{0, .1, .2, .3, .4}` with probabilities `mu`.
pub fn gen_ihdp(covariates: &Covariates, mu: &[f64], omega: f64, seed: u64) -> Result<CausalDataset> {
    validate_mu(mu)?;
    let n = covariates.x.len();
    if n == 0 {
        return Err(Error::invalid("empty covariate block"));
    }
    if let Some(bad) = covariates.x.iter().find(|r| r.len() != IHDP_WIDTH) {
        return Err(Error::DimensionMismatch {
            expected: IHDP_WIDTH,
            got: bad.len(),
            context: "IHDP covariate width",
        });
    }
    let mut rng = rng_for(seed);
    let mut cdf = [0.0; 5];
    let mut acc = 0.0;
    for (c, p) in cdf.iter_mut().zip(mu) {
        acc += p;
        *c = acc;
    }
    let beta: Vec<f64> = (0..IHDP_WIDTH)
        .map(|_| {
            let u: f64 = rng.random();
            let idx = cdf.iter().position(|&c| u < c).unwrap_or(4);
            IHDP_SUPPORT[idx]
        })
        .collect();
    let a = match &covariates.a {
        Some(a) => {
            if a.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: a.len(),
                    context: "IHDP treatment column",
                });
            }
            a.clone()
        }
        None => bernoulli_assignment(&mut rng, n, IHDP_TREATED_FRACTION),
    };
    let params = FamilyParams::Ihdp {
        mu: mu.to_vec(),
        omega,
        beta,
    };
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut potential = Vec::with_capacity(n);
    for x in &covariates.x {
        let f0 = params.outcome_mean(x, 0).expect("ihdp mean");
        let f1 = params.outcome_mean(x, 1).expect("ihdp mean");
        potential.push(vec![f0 + noise.sample(&mut rng), f1 + noise.sample(&mut rng)]);
    }
    let y = a.iter().zip(&potential).map(|(&l, p)| p[l]).collect();
    let family = if covariates.external {
        Family::Ihdp
    } else {
        Family::Surrogate
    };
    let meta = DatasetMeta::new(family, params, seed, 1);
    CausalDataset::new(covariates.x.clone(), a, y, Some(potential), meta)
}

/// Isotropic RBF kernel `exp(-‖x − c‖² / (2 h²))`.
pub fn rbf_kernel(x: &[f64], c: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

fn rbf_sum(centers: &[Vec<f64>], x: &[f64], bandwidth: f64) -> f64 {
    centers.iter().map(|c| rbf_kernel(x, c, bandwidth)).sum()
}

pub const RKHS_DIM: usize = 4;
pub const RKHS_DEFAULT_BANDWIDTH: f64 = 5.0;

/// RKHS family member: Gaussian populations around ±e, outcome surfaces given
/// by sums of a Poisson number of RBF bumps centred near 7e and 9e.
pub fn gen_rkhs(n: usize, bandwidth: f64, seed: u64) -> Result<CausalDataset> {
    if n < 2 {
        return Err(Error::invalid("RKHS dataset needs n >= 2"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid("RBF bandwidth must be positive"));
    }
    let mut rng = rng_for(seed);
    let e = [1.0; RKHS_DIM];
    let scaled = |s: f64| e.iter().map(|v| v * s).collect::<Vec<f64>>();
    let mu1 = gaussian_vec(&mut rng, &scaled(1.0));
    let mu0 = gaussian_vec(&mut rng, &scaled(-1.0));
    let gamma0 = gaussian_vec(&mut rng, &scaled(7.0));
    let gamma1 = gaussian_vec(&mut rng, &scaled(9.0));
    let lambda: u64 = rng.random_range(10..=100);
    let pois = Poisson::new(lambda as f64).expect("positive rate");
    let mut draw_centers = |gamma: &[f64]| {
        let count = pois.sample(&mut rng) as usize;
        (0..count)
            .map(|_| gaussian_vec(&mut rng, gamma))
            .collect::<Vec<_>>()
    };
    let centers0 = draw_centers(&gamma0);
    let centers1 = draw_centers(&gamma1);
    let params = FamilyParams::Rkhs {
        bandwidth,
        lambda,
        mu0: mu0.clone(),
        mu1: mu1.clone(),
        gamma0,
        gamma1,
        centers0,
        centers1,
    };
    let n_treated = n / 2;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let a = usize::from(i < n_treated);
        let mean = if a == 1 { &mu1 } else { &mu0 };
        rows.push((gaussian_vec(&mut rng, mean), a));
    }
    rows.shuffle(&mut rng);
    build_from_rows(rows, Family::Rkhs, params, seed)
}

fn build_from_rows(
    rows: Vec<(Vec<f64>, usize)>,
    family: Family,
    params: FamilyParams,
    seed: u64,
) -> Result<CausalDataset> {
    let mut x = Vec::with_capacity(rows.len());
    let mut a = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    let mut potential = Vec::with_capacity(rows.len());
    for (xi, ai) in rows {
        let pot = vec![
            params.outcome_mean(&xi, 0).expect("closed form"),
            params.outcome_mean(&xi, 1).expect("closed form"),
        ];
        y.push(pot[ai]);
        potential.push(pot);
        x.push(xi);
        a.push(ai);
    }
    CausalDataset::new(
        x,
        a,
        y,
        Some(potential),
        DatasetMeta::new(family, params, seed, 1),
    )
}

/// Control arm of the cooling law with `T(0) = 25`, `C = 75`: `Y0(u) = e^{-ku}`.
pub fn heat_control(k: f64, u: f64) -> f64 {
    (-k * u).exp()
}

/// Treated arm with `T(0) = 5`, `C = 95`: `Y1(u) = max((95 e^{-ku} − 20) / 75, 0)`.
pub fn heat_treated(k: f64, u: f64) -> f64 {
    ((95.0 * (-k * u).exp() - 20.0) / 75.0).max(0.0)
}

pub const HEAT_CONTROL_DOF: usize = 2;
pub const HEAT_TREATED_DOF: usize = 5;

/// The 20 cooling constants, uniformly spaced on `[0.5, 2]`; `k = 0.5` is the base task.
pub fn heat_k_grid() -> Vec<f64> {
    (0..20).map(|i| 0.5 + 1.5 * i as f64 / 19.0).collect()
}

/// Heat family member. Touching times are χ²(2) for controls and χ²(5) for
/// treated units, `n / 2` per group. The draws depend on `seed` only, so two
/// calls with the same seed and different `k` share covariates and labels.
pub fn gen_heat(k: f64, n: usize, seed: u64) -> Result<CausalDataset> {
    if !(k > 0.0) {
        return Err(Error::invalid("heat constant k must be positive"));
    }
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid("heat datasets need an even n >= 2"));
    }
    let rows = two_group_times(n, HEAT_CONTROL_DOF, HEAT_TREATED_DOF, seed);
    build_from_rows(rows, Family::Heat, FamilyParams::Heat { k }, seed)
}

fn two_group_times(n: usize, control_dof: usize, treated_dof: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = rng_for(seed);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let a = usize::from(i >= n / 2);
        let dof = if a == 1 { treated_dof } else { control_dof };
        rows.push((vec![chi_squared(&mut rng, dof)], a));
    }
    rows.shuffle(&mut rng);
    rows
}

/// Velocity under linear drag from rest: `(g / C)(1 − e^{-Cu})`.
pub fn movement_velocity(c: f64, u: f64) -> f64 {
    GRAVITY / c * (1.0 - (-c * u).exp())
}

pub const MOVEMENT_CONTROL_DOF: usize = 5;
pub const MOVEMENT_TREATED_DOF: usize = 2;

/// The twelve `(m, k)` settings, base `(5, 1)` first.
pub fn movement_settings() -> Vec<(f64, f64)> {
    vec![
        (5.0, 1.0),
        (5.0, 5.0),
        (5.0, 10.0),
        (5.0, 20.0),
        (10.0, 5.0),
        (10.0, 10.0),
        (10.0, 20.0),
        (20.0, 5.0),
        (20.0, 10.0),
        (20.0, 20.0),
        (50.0, 10.0),
        (50.0, 20.0),
    ]
}

/// Movement family member: control arm `Y0(u) = 10(1 − e^{-u})` (m = k = 1),
/// treated arm with drag `C = k / m`. Times are χ²(2) for treated and χ²(5)
/// for controls.
pub fn gen_movement(m: f64, k: f64, n: usize, seed: u64) -> Result<CausalDataset> {
    if !(m > 0.0) || !(k > 0.0) {
        return Err(Error::invalid("movement needs positive m and k"));
    }
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::invalid("movement datasets need an even n >= 2"));
    }
    let rows = two_group_times(n, MOVEMENT_CONTROL_DOF, MOVEMENT_TREATED_DOF, seed);
    build_from_rows(rows, Family::Movement, FamilyParams::Movement { m, k }, seed)
}

/// Flips each binary label independently with probability `p`. Covariates,
/// factual outcomes and the potential table are unchanged, so the result is a
/// different task rather than a corrupted copy.
///
/// Unit `i` is flipped when its `i`-th uniform draw falls below `p`, so for a
/// fixed seed the flipped sets are nested in `p`.
pub fn flip_treatments(ds: &CausalDataset, p: f64, seed: u64) -> Result<CausalDataset> {
    if ds.meta.m != 1 {
        return Err(Error::Unsupported(
            "treatment flips are defined for binary tasks".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("flip probability must lie in [0, 1]"));
    }
    let mut rng = rng_for(seed);
    let mut out = ds.clone();
    for l in &mut out.a {
        let u: f64 = rng.random();
        if u < p {
            *l = 1 - *l;
        }
    }
    out.meta.flips.push(FlipRecord { p, seed });
    Ok(out)
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes `path` (CSV) and `<path>.meta.json`.
pub fn save_dataset(ds: &CausalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let d = ds.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("a".into());
    header.push("y".into());
    if ds.potential.is_some() {
        header.extend((0..ds.num_arms()).map(|j| format!("y{j}")));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x[i].iter().map(|&v| sig17(v)).collect();
        rec.push(ds.a[i].to_string());
        rec.push(sig17(ds.y[i]));
        if let Some(p) = &ds.potential {
            rec.extend(p[i].iter().map(|&v| sig17(v)));
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush()?;
    let mut meta = ds.meta.clone();
    meta.n = ds.len();
    meta.d = d;
    let mut f = BufWriter::new(File::create(meta_path(path))?);
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Malformed {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Reads a dataset written by [`save_dataset`]. The sidecar is optional; without
/// it the family is `external` and `M` is inferred from the columns.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<CausalDataset> {
    let path = path.as_ref();
    let malformed = |reason: String| Error::Malformed {
        path: path.display().to_string(),
        reason,
    };
    let sidecar = meta_path(path);
    let meta: Option<DatasetMeta> = if sidecar.exists() {
        Some(serde_json::from_reader(BufReader::new(File::open(&sidecar)?))?)
    } else {
        None
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let a_col = col("a").ok_or_else(|| malformed("missing column a".into()))?;
    let y_col = col("y").ok_or_else(|| malformed("missing column y".into()))?;
    let x_cols: Vec<usize> = (0..)
        .map_while(|j| col(&format!("x{j}")))
        .collect();
    if x_cols.is_empty() {
        return Err(malformed("no covariate columns x0..".into()));
    }
    let pot_cols: Vec<usize> = (0..).map_while(|j| col(&format!("y{j}"))).collect();
    let parse = |s: &str, line: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| malformed(format!("line {line}: cannot parse {s:?}")))
    };
    let (mut x, mut a, mut y, mut pot) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(malformed(format!(
                "line {line}: row length {} differs from header length {}",
                rec.len(),
                header.len()
            )));
        }
        x.push(
            x_cols
                .iter()
                .map(|&c| parse(&rec[c], line))
                .collect::<Result<Vec<_>>>()?,
        );
        let label = parse(&rec[a_col], line)?;
        if label < 0.0 || label.fract() != 0.0 {
            return Err(malformed(format!("line {line}: label {label} is not a class index")));
        }
        a.push(label as usize);
        y.push(parse(&rec[y_col], line)?);
        if !pot_cols.is_empty() {
            pot.push(
                pot_cols
                    .iter()
                    .map(|&c| parse(&rec[c], line))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
    }
    if x.is_empty() {
        return Err(malformed("no rows".into()));
    }
    let meta = match meta {
        Some(m) => m,
        None => {
            let m = if pot_cols.is_empty() {
                a.iter().copied().max().unwrap_or(1).max(1)
            } else {
                pot_cols.len() - 1
            };
            DatasetMeta::new(Family::External, FamilyParams::None, 0, m)
        }
    };
    if let Some(&bad) = a.iter().find(|&&l| l > meta.m) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            max: meta.m,
        });
    }
    if meta.n != 0 && meta.n != x.len() {
        return Err(malformed(format!(
            "sidecar declares n = {} but file has {} rows",
            meta.n,
            x.len()
        )));
    }
    CausalDataset::new(x, a, y, (!pot.is_empty()).then_some(pot), meta)
}

/// Reads an external IHDP covariate file: 25 covariate columns `x0..x24` plus
/// an optional treatment column `a`.
pub fn load_covariates(path: impl AsRef<Path>) -> Result<Covariates> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_string)
        .collect();
    let x_cols: Vec<usize> = (0..)
        .map_while(|j| header.iter().position(|h| *h == format!("x{j}")))
        .collect();
    let a_col = header.iter().position(|h| h == "a");
    let mut x = Vec::new();
    let mut a = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let row: std::result::Result<Vec<f64>, _> =
            x_cols.iter().map(|&c| rec[c].parse::<f64>()).collect();
        x.push(row.map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?);
        if let Some(c) = a_col {
            let v: f64 = rec[c].parse().map_err(|_| Error::Malformed {
                path: path.display().to_string(),
                reason: format!("bad label {:?}", &rec[c]),
            })?;
            a.push(v as usize);
        }
    }
    Ok(Covariates {
        x,
        a: a_col.map(|_| a),
        external: true,
    })
}
