//! The two-headed ITE model (shared representation `Φ`, one outcome head per
//! treatment) and its balanced training objective.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balance::{sinkhorn_w1, sinkhorn_w1_value, PointCloud};
use crate::datagen::CausalDataset;
use crate::error::{Error, Result};
use crate::nnkernel::{
    backward, forward, init_params, optimizer_step_in_place, predict, Activation, MlpSpec,
    OptimizerConfig, OptimizerState, ParamVector,
};
use crate::numfmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SquaredError,
    BernoulliNll,
}

impl LossKind {
    /// Training loss `ℓ(h, y)` and `dℓ/dh` for a raw head output `h`.
    pub fn loss(self, h: f64, y: f64) -> (f64, f64) {
        match self {
            LossKind::SquaredError => ((h - y) * (h - y), 2.0 * (h - y)),
            LossKind::BernoulliNll => bernoulli_nll(h, y),
        }
    }

    /// Negative log-likelihood (constants dropped) and its derivative: unit-variance
    /// Gaussian for regression, Bernoulli on the logit for binary outcomes.
    pub fn nll(self, h: f64, y: f64) -> (f64, f64) {
        match self {
            LossKind::SquaredError => (0.5 * (h - y) * (h - y), h - y),
            LossKind::BernoulliNll => bernoulli_nll(h, y),
        }
    }
}

fn softplus(h: f64) -> f64 {
    if h > 0.0 {
        h + (-h).exp().ln_1p()
    } else {
        h.exp().ln_1p()
    }
}

fn sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

fn bernoulli_nll(h: f64, y: f64) -> (f64, f64) {
    (softplus(h) - y * h, sigmoid(h) - y)
}

/// Hidden widths of `Φ` and of each head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub phi_hidden: Vec<usize>,
    pub latent: usize,
    pub head_hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            phi_hidden: vec![64],
            latent: 32,
            head_hidden: vec![16],
            activation: Activation::Elu,
        }
    }
}

impl Architecture {
    pub fn phi_spec(&self, d: usize, seed: u64) -> Result<MlpSpec> {
        let mut w = vec![d];
        w.extend(&self.phi_hidden);
        w.push(self.latent);
        MlpSpec::new(w, self.activation, seed)
    }

    pub fn head_spec(&self, seed: u64) -> Result<MlpSpec> {
        let mut w = vec![self.latent];
        w.extend(&self.head_hidden);
        w.push(1);
        MlpSpec::new(w, self.activation, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpmConfig {
    pub eps: f64,
    pub iters: usize,
}

impl Default for IpmConfig {
    fn default() -> Self {
        IpmConfig {
            eps: 0.01,
            iters: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub ipm: IpmConfig,
    /// Standardize covariates and (for regression) outcomes with training-set
    /// statistics stored in the model.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            lr: 1e-3,
            epochs: 100,
            batch_size: 128,
            seed: 0,
            loss_kind: LossKind::SquaredError,
            ipm: IpmConfig::default(),
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be a finite nonnegative real"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if !(self.ipm.eps > 0.0) || self.ipm.iters == 0 {
            return Err(Error::invalid("ipm needs eps > 0 and iters >= 1"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).unwrap_or_default();
        crate::content_hash(&bytes)[..16].to_string()
    }
}

/// Per-feature affine map `(v − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(serialize_with = "numfmt::ser_vec")]
    pub x_shift: Vec<f64>,
    #[serde(serialize_with = "numfmt::ser_vec")]
    pub x_scale: Vec<f64>,
    #[serde(serialize_with = "numfmt::ser_f64")]
    pub y_shift: f64,
    #[serde(serialize_with = "numfmt::ser_f64")]
    pub y_scale: f64,
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Standardizer {
            x_shift: vec![0.0; d],
            x_scale: vec![1.0; d],
            y_shift: 0.0,
            y_scale: 1.0,
        }
    }

    pub fn fit(ds: &CausalDataset, outcomes: bool) -> Self {
        let n = ds.len() as f64;
        let d = ds.dim();
        let mut s = Standardizer::identity(d);
        let moments = |vals: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = vals.collect();
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        };
        for j in 0..d {
            let (m, sd) = moments(&mut ds.x.iter().map(|r| r[j]));
            s.x_shift[j] = m;
            s.x_scale[j] = sd;
        }
        if outcomes {
            let (m, sd) = moments(&mut ds.y.iter().copied());
            s.y_shift = m;
            s.y_scale = sd;
        }
        s
    }

    pub fn x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_shift.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn y(&self, y: f64) -> f64 {
        (y - self.y_shift) / self.y_scale
    }

    pub fn y_inv(&self, y: f64) -> f64 {
        y * self.y_scale + self.y_shift
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelMeta {
    pub dataset_id: String,
    pub config_hash: String,
    pub loss_kind: LossKind,
    pub epochs_trained: usize,
    /// Mean factual loss on the training data (original outcome units) after training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarNetModel {
    pub phi_spec: MlpSpec,
    pub phi_params: ParamVector,
    pub head_specs: Vec<MlpSpec>,
    pub head_params: Vec<ParamVector>,
    pub standardizer: Standardizer,
    pub meta: ModelMeta,
}

impl TarNetModel {
    /// Freshly initialised model for `d` covariates and labels `0..=m`.
    pub fn new(d: usize, m: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        let phi_spec = arch.phi_spec(d, seed)?;
        let phi_params = init_params(&phi_spec)?;
        let mut head_specs = Vec::with_capacity(m + 1);
        let mut head_params = Vec::with_capacity(m + 1);
        for a in 0..=m {
            let spec = arch.head_spec(seed.wrapping_add(1 + a as u64))?;
            head_params.push(init_params(&spec)?);
            head_specs.push(spec);
        }
        let model = TarNetModel {
            phi_spec,
            phi_params,
            head_specs,
            head_params,
            standardizer: Standardizer::identity(d),
            meta: ModelMeta::default(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.phi_spec.validate()?;
        let l = self.phi_spec.output_dim();
        if self.head_specs.len() < 2 || self.head_specs.len() != self.head_params.len() {
            return Err(Error::invalid("model needs one head per treatment label (at least two)"));
        }
        for (s, p) in self.head_specs.iter().zip(&self.head_params) {
            s.validate()?;
            if s.input_dim() != l || s.output_dim() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: l,
                    got: s.input_dim(),
                    context: "head input width",
                });
            }
            if p.len() != s.param_len() || !p.is_finite() {
                return Err(Error::invalid("head parameters malformed or non-finite"));
            }
        }
        if self.phi_params.len() != self.phi_spec.param_len() || !self.phi_params.is_finite() {
            return Err(Error::invalid("representation parameters malformed or non-finite"));
        }
        if self.standardizer.x_shift.len() != self.input_dim() {
            return Err(Error::invalid("standardizer width differs from covariate width"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.phi_spec.input_dim()
    }

    pub fn num_arms(&self) -> usize {
        self.head_specs.len()
    }

    pub fn param_len(&self) -> usize {
        self.phi_params.len() + self.head_params.iter().map(|p| p.len()).sum::<usize>()
    }

    /// Start offset of head `a` within the flat parameter layout `[Φ, h_0, h_1, ...]`.
    pub fn head_offset(&self, a: usize) -> usize {
        self.phi_params.len() + self.head_params[..a].iter().map(|p| p.len()).sum::<usize>()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.phi_params.values.clone();
        for p in &self.head_params {
            v.extend_from_slice(&p.values);
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_len() {
            return Err(Error::DimensionMismatch {
                expected: self.param_len(),
                got: flat.len(),
                context: "flat parameters",
            });
        }
        let np = self.phi_params.len();
        self.phi_params.values.copy_from_slice(&flat[..np]);
        let mut off = np;
        for p in &mut self.head_params {
            let len = p.len();
            p.values.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
                context: "covariate width",
            });
        }
        Ok(())
    }

    pub fn representation(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        predict(&self.phi_spec, &self.phi_params, &self.standardizer.x(x))
    }

    /// Raw head outputs (standardized scale, before any link) for every arm.
    pub fn raw_outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.representation(x)?;
        self.head_specs
            .iter()
            .zip(&self.head_params)
            .map(|(s, p)| Ok(predict(s, p, &z)?[0]))
            .collect()
    }

    /// Predicted outcome `f̂(x, a)` for every arm in original units.
    pub fn predict_outcomes(&self, x: &[f64]) -> Result<Vec<f64>> {
        let raw = self.raw_outputs(x)?;
        Ok(raw.into_iter().map(|h| self.link(h)).collect())
    }

    fn link(&self, h: f64) -> f64 {
        match self.meta.loss_kind {
            LossKind::SquaredError => self.standardizer.y_inv(h),
            LossKind::BernoulliNll => sigmoid(h),
        }
    }

    /// `τ̂(x) = f̂(x, 1) − f̂(x, 0)`.
    pub fn predict_ite(&self, x: &[f64]) -> Result<f64> {
        let out = self.predict_outcomes(x)?;
        Ok(out[1] - out[0])
    }

    /// Reorders heads so that new head `perm[a]` is old head `a`.
    pub fn permute_heads(&self, perm: &[usize]) -> Result<Self> {
        crate::datagen::check_permutation(perm, self.num_arms())?;
        let mut out = self.clone();
        for (a, &to) in perm.iter().enumerate() {
            out.head_specs[to] = self.head_specs[a].clone();
            out.head_params[to] = self.head_params[a].clone();
        }
        Ok(out)
    }

    /// Outcome target on the model's internal scale.
    fn target(&self, y: f64) -> f64 {
        match self.meta.loss_kind {
            LossKind::SquaredError => self.standardizer.y(y),
            LossKind::BernoulliNll => y,
        }
    }

    /// Per-sample NLL and its gradient over the flat parameter layout.
    pub fn sample_nll_gradient(&self, x: &[f64], a: usize, y: f64) -> Result<(f64, Vec<f64>)> {
        self.sample_gradient(x, a, y, |h, t| self.meta.loss_kind.nll(h, t))
    }

    fn sample_gradient(
        &self,
        x: &[f64],
        a: usize,
        y: f64,
        loss: impl Fn(f64, f64) -> (f64, f64),
    ) -> Result<(f64, Vec<f64>)> {
        self.check_x(x)?;
        if a >= self.num_arms() {
            return Err(Error::LabelOutOfRange {
                label: a,
                max: self.num_arms() - 1,
            });
        }
        let phi_tape = forward(&self.phi_spec, &self.phi_params, &self.standardizer.x(x))?;
        let head_tape = forward(&self.head_specs[a], &self.head_params[a], phi_tape.output())?;
        let (value, dh) = loss(head_tape.output()[0], self.target(y));
        let mut grad = vec![0.0; self.param_len()];
        let off = self.head_offset(a);
        let hl = self.head_params[a].len();
        let mut dz = vec![0.0; self.phi_spec.output_dim()];
        backward(
            &self.head_specs[a],
            &self.head_params[a],
            &head_tape,
            &[dh],
            &mut grad[off..off + hl],
            Some(&mut dz),
        )?;
        let np = self.phi_params.len();
        backward(&self.phi_spec, &self.phi_params, &phi_tape, &dz, &mut grad[..np], None)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("sample gradient"));
        }
        Ok((value, grad))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: TarNetModel = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        model.validate()?;
        Ok(model)
    }

    /// Content hash of the serialized model.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).unwrap_or_default();
        crate::content_hash(&bytes)[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub factual_term: f64,
    pub ipm_term: f64,
    pub total: f64,
}

/// Group-balancing weights: `1 / ((M+1) v_a)` with `v_a` the batch share of arm `a`.
/// For binary labels this is `a/(2v) + (1−a)/(2(1−v))`.
pub fn balancing_weights(labels: &[usize], arms: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; arms];
    for &a in labels {
        if a >= arms {
            return Err(Error::LabelOutOfRange {
                label: a,
                max: arms - 1,
            });
        }
        counts[a] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::SingleGroup);
    }
    let n = labels.len() as f64;
    Ok(labels
        .iter()
        .map(|&a| n / (arms as f64 * counts[a] as f64))
        .collect())
}

/// Objective on the rows `rows` of `ds`, with the gradient over the flat
/// parameter layout when `want_grad`.
pub fn objective_on_rows(
    model: &TarNetModel,
    ds: &CausalDataset,
    rows: &[usize],
    config: &TrainConfig,
    want_grad: bool,
) -> Result<(ObjectiveValue, Option<Vec<f64>>)> {
    if rows.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if ds.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: ds.dim(),
            context: "covariate width",
        });
    }
    let arms = model.num_arms();
    let labels: Vec<usize> = rows.iter().map(|&i| ds.a[i]).collect();
    let w = balancing_weights(&labels, arms)?;
    let n = rows.len() as f64;
    let np = model.phi_params.len();
    let latent = model.phi_spec.output_dim();
    let mut grad = vec![0.0; if want_grad { model.param_len() } else { 0 }];
    let mut phi_tapes = Vec::with_capacity(rows.len());
    let mut dz_all = vec![vec![0.0; latent]; rows.len()];
    let mut factual = 0.0;
    for (k, &i) in rows.iter().enumerate() {
        let a = ds.a[i];
        let phi_tape = forward(&model.phi_spec, &model.phi_params, &model.standardizer.x(&ds.x[i]))?;
        let head_tape = forward(&model.head_specs[a], &model.head_params[a], phi_tape.output())?;
        let (l, dl) = config.loss_kind.loss(head_tape.output()[0], model.target(ds.y[i]));
        factual += w[k] * l / n;
        if want_grad {
            let off = model.head_offset(a);
            let hl = model.head_params[a].len();
            backward(
                &model.head_specs[a],
                &model.head_params[a],
                &head_tape,
                &[w[k] * dl / n],
                &mut grad[off..off + hl],
                Some(&mut dz_all[k]),
            )?;
        }
        phi_tapes.push(phi_tape);
    }
    let mut ipm = 0.0;
    if config.alpha > 0.0 {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); arms];
        for (k, &a) in labels.iter().enumerate() {
            groups[a].push(k);
        }
        let cloud = |g: &[usize]| PointCloud::uniform(g.iter().map(|&k| phi_tapes[k].output().to_vec()).collect());
        let control = cloud(&groups[0])?;
        for g in &groups[1..] {
            let other = cloud(g)?;
            if want_grad {
                let r = sinkhorn_w1(&control, &other, config.ipm.eps, config.ipm.iters)?;
                ipm += r.cost;
                let (gp, gq) = (r.grad_p.unwrap_or_default(), r.grad_q.unwrap_or_default());
                for (&k, gk) in groups[0].iter().zip(&gp) {
                    for (d, v) in dz_all[k].iter_mut().zip(gk) {
                        *d += config.alpha * v;
                    }
                }
                for (&k, gk) in g.iter().zip(&gq) {
                    for (d, v) in dz_all[k].iter_mut().zip(gk) {
                        *d += config.alpha * v;
                    }
                }
            } else {
                ipm += sinkhorn_w1_value(&control, &other, config.ipm.eps, config.ipm.iters)?.cost;
            }
        }
    }
    if want_grad {
        for (tape, dz) in phi_tapes.iter().zip(&dz_all) {
            backward(&model.phi_spec, &model.phi_params, tape, dz, &mut grad[..np], None)?;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("objective gradient"));
        }
    }
    let value = ObjectiveValue {
        factual_term: factual,
        ipm_term: ipm,
        total: factual + config.alpha * ipm,
    };
    if !value.total.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok((value, want_grad.then_some(grad)))
}

/// Objective over a whole dataset (treated as one batch).
pub fn objective(model: &TarNetModel, batch: &CausalDataset, config: &TrainConfig) -> Result<ObjectiveValue> {
    let rows: Vec<usize> = (0..batch.len()).collect();
    Ok(objective_on_rows(model, batch, &rows, config, false)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub factual_term: f64,
    pub ipm_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

/// Mean training loss in original outcome units over all rows.
pub fn training_loss(model: &TarNetModel, ds: &CausalDataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..ds.len() {
        let f = model.predict_outcomes(&ds.x[i])?[ds.a[i]];
        total += match model.meta.loss_kind {
            LossKind::SquaredError => (f - ds.y[i]).powi(2),
            LossKind::BernoulliNll => {
                let p = f.clamp(1e-15, 1.0 - 1e-15);
                -(ds.y[i] * p.ln() + (1.0 - ds.y[i]) * (1.0 - p).ln())
            }
        };
    }
    Ok(total / ds.len() as f64)
}

fn minibatches(
    ds: &CausalDataset,
    batch_size: usize,
    arms: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    for chunk in order.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let mut batch = chunk.to_vec();
        let mut tries = 0;
        while !covers_all(ds, &batch, arms) {
            tries += 1;
            if tries > 100 {
                return Err(Error::SingleGroup);
            }
            batch = sample(rng, n, chunk.len()).into_vec();
        }
        out.push(batch);
    }
    Ok(out)
}

fn covers_all(ds: &CausalDataset, rows: &[usize], arms: usize) -> bool {
    let mut seen = vec![false; arms];
    for &i in rows {
        seen[ds.a[i]] = true;
    }
    seen.into_iter().all(|s| s)
}

fn run_epochs(model: &mut TarNetModel, ds: &CausalDataset, config: &TrainConfig) -> Result<TrainTrace> {
    let arms = model.num_arms();
    if !ds.has_overlap() || ds.num_arms() != arms {
        return Err(Error::SingleGroup);
    }
    if ds.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: ds.dim(),
            context: "covariate width",
        });
    }
    let opt = OptimizerConfig {
        lr: config.lr,
        ..OptimizerConfig::default()
    };
    let mut state = OptimizerState::new(model.param_len());
    let mut params = model.flat_params();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch_size = config.batch_size.min(ds.len());
    let mut trace = TrainTrace::default();
    for _ in 0..config.epochs {
        let batches = minibatches(ds, batch_size, arms, &mut rng)?;
        let mut acc = (0.0, 0.0, 0.0);
        for rows in &batches {
            let (v, g) = objective_on_rows(model, ds, rows, config, true)?;
            optimizer_step_in_place(&mut params, &g.expect("gradient requested"), &mut state, &opt)?;
            model.set_flat_params(&params)?;
            acc.0 += v.factual_term;
            acc.1 += v.ipm_term;
            acc.2 += v.total;
        }
        let nb = batches.len().max(1) as f64;
        trace.epochs.push(EpochRecord {
            factual_term: acc.0 / nb,
            ipm_term: acc.1 / nb,
            total: acc.2 / nb,
        });
    }
    model.meta.epochs_trained += config.epochs;
    model.meta.dataset_id = ds.id();
    model.meta.config_hash = config.hash();
    model.meta.train_loss = Some(training_loss(model, ds)?);
    Ok(trace)
}

/// Trains a fresh model on `ds`.
pub fn train(ds: &CausalDataset, arch: &Architecture, config: &TrainConfig) -> Result<(TarNetModel, TrainTrace)> {
    config.validate()?;
    if config.epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    if !ds.has_overlap() {
        return Err(Error::SingleGroup);
    }
    let mut model = TarNetModel::new(ds.dim(), ds.meta.m, arch, config.seed)?;
    model.meta.loss_kind = config.loss_kind;
    if config.standardize {
        model.standardizer = Standardizer::fit(ds, config.loss_kind == LossKind::SquaredError);
    }
    let trace = run_epochs(&mut model, ds, config)?;
    Ok((model, trace))
}

/// Continues training a copy of `model` on `target`. The copy keeps the source's
/// standardizer and loss kind; fresh optimizer moments.
pub fn fine_tune(model: &TarNetModel, target: &CausalDataset, config: &TrainConfig) -> Result<(TarNetModel, TrainTrace)> {
    config.validate()?;
    if target.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: target.dim(),
            context: "fine-tune covariate width",
        });
    }
    let mut out = model.clone();
    if config.epochs == 0 {
        return Ok((out, TrainTrace::default()));
    }
    let cfg = TrainConfig {
        loss_kind: model.meta.loss_kind,
        ..config.clone()
    };
    let trace = run_epochs(&mut out, target, &cfg)?;
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_heat, DatasetMeta, Family, FamilyParams};

    fn tiny(labels: Vec<usize>) -> CausalDataset {
        let n = labels.len();
        CausalDataset::new(
            (0..n).map(|i| vec![i as f64 * 0.1, 1.0 - i as f64 * 0.05]).collect(),
            labels,
            (0..n).map(|i| (i as f64).sin()).collect(),
            None,
            DatasetMeta::new(Family::External, FamilyParams::None, 0, 1),
        )
        .unwrap()
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
    fn weights_for_balanced_and_skewed_batches() {
        assert_eq!(balancing_weights(&[0, 1, 0, 1], 2).unwrap(), vec![1.0; 4]);
        let w = balancing_weights(&[1, 0, 0, 0], 2).unwrap();
        assert_eq!(w[0], 2.0);
        for &v in &w[1..] {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
        assert!(matches!(balancing_weights(&[0, 0], 2), Err(Error::SingleGroup)));
    }

    #[test]
    fn weighted_factual_term_by_hand() {
        let ds = tiny(vec![1, 0, 0, 0]);
        let model = TarNetModel::new(2, 1, &small_arch(), 3).unwrap();
        let cfg = TrainConfig {
            alpha: 0.0,
            standardize: false,
            ..TrainConfig::default()
        };
        let v = objective(&model, &ds, &cfg).unwrap();
        let mut hand = 0.0;
        for i in 0..4 {
            let f = model.predict_outcomes(&ds.x[i]).unwrap()[ds.a[i]];
            let w = if ds.a[i] == 1 { 2.0 } else { 2.0 / 3.0 };
            hand += w * (f - ds.y[i]).powi(2);
        }
        assert!((v.factual_term - hand / 4.0).abs() < 1e-14);
        assert_eq!(v.ipm_term, 0.0);
        assert_eq!(v.total, v.factual_term);
    }

    #[test]
    fn single_group_batch_is_an_error() {
        let ds = tiny(vec![0, 0, 0]);
        let model = TarNetModel::new(2, 1, &small_arch(), 3).unwrap();
        let err = objective(&model, &ds, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("IPM undefined"));
    }

    #[test]
    fn identical_heads_predict_zero_effect() {
        let mut model = TarNetModel::new(2, 1, &small_arch(), 3).unwrap();
        model.head_params[1] = model.head_params[0].clone();
        for x in [[0.0, 0.0], [1.0, -2.0], [3.0, 0.5]] {
            assert_eq!(model.predict_ite(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn swapping_heads_negates_effect() {
        let model = TarNetModel::new(2, 1, &small_arch(), 3).unwrap();
        let swapped = model.permute_heads(&[1, 0]).unwrap();
        for x in [[0.2, 0.1], [-1.0, 4.0]] {
            assert_eq!(swapped.predict_ite(&x).unwrap(), -model.predict_ite(&x).unwrap());
        }
    }

    #[test]
    fn shared_bias_shift_leaves_effect_unchanged() {
        let model = TarNetModel::new(2, 1, &small_arch(), 3).unwrap();
        let mut shifted = model.clone();
        for (s, p) in shifted.head_specs.iter().zip(shifted.head_params.iter_mut()) {
            p.values[s.output_bias_offset()] += 0.75;
        }
        let x = [0.3, -0.4];
        let a = model.raw_outputs(&x).unwrap();
        let b = shifted.raw_outputs(&x).unwrap();
        assert_eq!(b[1] - b[0], a[1] - a[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = gen_heat(0.5, 60, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            ipm: IpmConfig { eps: 0.1, iters: 10 },
            ..TrainConfig::default()
        };
        let (a, ta) = train(&ds, &small_arch(), &cfg).unwrap();
        let (b, tb) = train(&ds, &small_arch(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.epochs.len(), 3);
    }

    #[test]
    fn zero_epoch_fine_tune_is_identity() {
        let ds = gen_heat(0.5, 40, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            alpha: 0.0,
            ..TrainConfig::default()
        };
        let (m, _) = train(&ds, &small_arch(), &cfg).unwrap();
        let (ft, trace) = fine_tune(&m, &ds, &TrainConfig { epochs: 0, ..cfg }).unwrap();
        assert_eq!(ft, m);
        assert!(trace.epochs.is_empty());
    }

    #[test]
    fn fine_tune_rejects_wrong_width() {
        let ds = gen_heat(0.5, 40, 1).unwrap();
        let model = TarNetModel::new(2, 1, &small_arch(), 3).unwrap();
        assert!(fine_tune(&model, &ds, &TrainConfig::default()).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ds = gen_heat(0.5, 40, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ipm: IpmConfig { eps: 0.1, iters: 5 },
            ..TrainConfig::default()
        };
        let (m, _) = train(&ds, &small_arch(), &cfg).unwrap();
        m.save(&path).unwrap();
        assert_eq!(TarNetModel::load(&path).unwrap(), m);
    }

    #[test]
    fn bernoulli_loss_is_stable() {
        let (l, d) = LossKind::BernoulliNll.loss(800.0, 1.0);
        assert!(l.abs() < 1e-12 && d.abs() < 1e-12);
        let (l, _) = LossKind::BernoulliNll.loss(-800.0, 1.0);
        assert!((l - 800.0).abs() < 1e-9);
    }
}
