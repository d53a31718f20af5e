//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function that is also tested
//! natively. Arrays cross the boundary as flat `Float64Array`s.

use cita::affinity::cita;
use cita::balance::{exact_w1, sinkhorn_w1_value, PointCloud};
use cita::datagen::{flip_treatments, gen_heat, heat_control, heat_treated, movement_velocity};
use cita::tarnet::{train, Architecture, TrainConfig};
use wasm_bindgen::prelude::*;

/// Largest cloud the page may send to the exact solver.
pub const MAX_CLOUD: usize = 200;
/// Largest Heat sample for the in-browser symmetry study.
pub const MAX_SYMMETRY_N: usize = 2000;

/// `[u, y0, y1]` triples on `points` evenly spaced times in `[0, u_max]`.
///
/// `a` is the family constant `k`; Movement also takes the mass `m` as `b`.
pub fn outcome_curves(family: &str, a: f64, b: f64, u_max: f64, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 || !(u_max > 0.0) {
        return Err("need at least two points on a positive range".into());
    }
    if !(a > 0.0) || (family == "movement" && !(b > 0.0)) {
        return Err("parameters must be positive".into());
    }
    let mut out = Vec::with_capacity(points * 3);
    for i in 0..points {
        let u = u_max * i as f64 / (points - 1) as f64;
        let (y0, y1) = match family {
            "heat" => (heat_control(a, u), heat_treated(a, u)),
            "movement" => (movement_velocity(1.0, u), movement_velocity(a / b, u)),
            other => return Err(format!("unknown family `{other}`")),
        };
        out.extend([u, y0, y1]);
    }
    Ok(out)
}

fn cloud(flat: &[f64]) -> Result<PointCloud, String> {
    if flat.is_empty() || flat.len() % 2 != 0 {
        return Err("clouds are flat (x, y) pairs".into());
    }
    if flat.len() / 2 > MAX_CLOUD {
        return Err(format!("at most {MAX_CLOUD} points per cloud"));
    }
    PointCloud::uniform(flat.chunks(2).map(|c| c.to_vec()).collect()).map_err(|e| e.to_string())
}

/// `[sinkhorn cost, sinkhorn dual, exact cost]` between two 2-D clouds.
pub fn compare_transport(p: &[f64], q: &[f64], eps: f64, iters: usize) -> Result<Vec<f64>, String> {
    let (p, q) = (cloud(p)?, cloud(q)?);
    let s = sinkhorn_w1_value(&p, &q, eps, iters).map_err(|e| e.to_string())?;
    let e = exact_w1(&p, &q).map_err(|e| e.to_string())?;
    Ok(vec![s.cost, s.dual, e.cost])
}

/// `[p, d_sym, d_identity]` triples: a model trained on a Heat task compared
/// with copies whose treatment labels are flipped with probability `p`.
pub fn symmetry_curve(k: f64, n: usize, epochs: usize, seed: u64, p_grid: &[f64]) -> Result<Vec<f64>, String> {
    if n > MAX_SYMMETRY_N {
        return Err(format!("at most {MAX_SYMMETRY_N} rows in the browser"));
    }
    let base = gen_heat(k, n, seed).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        alpha: 0.0,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let (model, _) = train(&base, &Architecture::default(), &cfg).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(p_grid.len() * 3);
    for &p in p_grid {
        let target = flip_treatments(&base, p, seed.wrapping_add(1)).map_err(|e| e.to_string())?;
        let r = cita(&model, &base, &target).map_err(|e| e.to_string())?;
        out.extend([p, r.d_sym, r.d_identity()]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = outcomeCurves)]
pub fn outcome_curves_js(family: &str, a: f64, b: f64, u_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    outcome_curves(family, a, b, u_max, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compareTransport)]
pub fn compare_transport_js(p: &[f64], q: &[f64], eps: f64, iters: usize) -> Result<Vec<f64>, JsError> {
    compare_transport(p, q, eps, iters).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = symmetryCurve)]
pub fn symmetry_curve_js(k: f64, n: usize, epochs: usize, seed: u64, p_grid: &[f64]) -> Result<Vec<f64>, JsError> {
    symmetry_curve(k, n, epochs, seed, p_grid).map_err(|e| JsError::new(&e))
}
