//! Minimal feedforward network kernel: flat parameter vectors, a forward tape,
//! exact reverse-mode gradients and first-order optimizers.
//!
//! Parameters are stored as consecutive `(weight, bias)` blocks, one per layer.
//! Weights are row-major `out × in`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Architecture of a fully connected network. The activation applies to hidden
/// layers only; the output layer is always linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            layer_widths,
            activation,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::invalid(
                "layer_widths needs at least an input and an output width",
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_len(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offsets `(weight_start, bias_start)` of layer `l`.
    fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for w in self.layer_widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            out.push((off, off + fan_in * fan_out));
            off += fan_in * fan_out + fan_out;
        }
        out
    }

    /// Offset of the output-layer bias block.
    pub fn output_bias_offset(&self) -> usize {
        self.param_len() - self.output_dim()
    }
}

/// Flat parameter vector laid out as `(weight, bias)` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    #[serde(serialize_with = "numfmt::ser_vec")]
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Glorot-uniform weights (limit `sqrt(6 / (fan_in + fan_out))`, never above
/// `sqrt(6 / fan_in)`), zero biases.
pub fn init_params(spec: &MlpSpec) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(spec.param_len());
    for w in spec.layer_widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.random_range(-limit..limit));
        }
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(ParamVector { values })
}

/// Activations recorded during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// `acts[l]` is the input to layer `l`; the last entry is the network output.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

fn check_params(spec: &MlpSpec, params: &ParamVector) -> Result<()> {
    if params.len() != spec.param_len() {
        return Err(Error::DimensionMismatch {
            expected: spec.param_len(),
            got: params.len(),
            context: "parameter vector",
        });
    }
    Ok(())
}

/// Runs the network and keeps everything needed for [`backward`].
pub fn forward(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<Tape> {
    check_params(spec, params)?;
    if x.len() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            got: x.len(),
            context: "network input",
        });
    }
    let p = &params.values;
    let n_layers = spec.num_layers();
    let mut tape = Tape {
        acts: Vec::with_capacity(n_layers + 1),
        pre: Vec::with_capacity(n_layers),
    };
    tape.acts.push(x.to_vec());
    for (l, (w_off, b_off)) in spec.layer_offsets().into_iter().enumerate() {
        let fan_in = spec.layer_widths[l];
        let fan_out = spec.layer_widths[l + 1];
        let input = &tape.acts[l];
        let mut z = p[b_off..b_off + fan_out].to_vec();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &p[w_off + o * fan_in..w_off + (o + 1) * fan_in];
            *zo += row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
        }
        let act = if l + 1 == n_layers {
            Activation::Identity
        } else {
            spec.activation
        };
        let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
        tape.pre.push(z);
        tape.acts.push(a);
    }
    if !tape.output().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("forward pass"));
    }
    Ok(tape)
}

/// Output of the network without retaining a tape.
pub fn predict(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    let mut tape = forward(spec, params, x)?;
    Ok(tape.acts.pop().unwrap_or_default())
}

/// Reverse pass. Adds `d loss / d params` into `grad` and, when requested,
/// writes `d loss / d input` into `input_grad`.
pub fn backward(
    spec: &MlpSpec,
    params: &ParamVector,
    tape: &Tape,
    d_output: &[f64],
    grad: &mut [f64],
    input_grad: Option<&mut [f64]>,
) -> Result<()> {
    check_params(spec, params)?;
    if grad.len() != spec.param_len() {
        return Err(Error::DimensionMismatch {
            expected: spec.param_len(),
            got: grad.len(),
            context: "gradient buffer",
        });
    }
    if d_output.len() != spec.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.output_dim(),
            got: d_output.len(),
            context: "output gradient",
        });
    }
    let p = &params.values;
    let n_layers = spec.num_layers();
    let offsets = spec.layer_offsets();
    let mut delta_a = d_output.to_vec();
    for l in (0..n_layers).rev() {
        let fan_in = spec.layer_widths[l];
        let (w_off, b_off) = offsets[l];
        let act = if l + 1 == n_layers {
            Activation::Identity
        } else {
            spec.activation
        };
        let delta_z: Vec<f64> = delta_a
            .iter()
            .zip(&tape.pre[l])
            .map(|(d, &z)| d * act.derivative(z))
            .collect();
        let input = &tape.acts[l];
        for (o, &dz) in delta_z.iter().enumerate() {
            grad[b_off + o] += dz;
            if dz != 0.0 {
                let row = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += dz * a;
                }
            }
        }
        let mut next = vec![0.0; fan_in];
        for (o, &dz) in delta_z.iter().enumerate() {
            if dz != 0.0 {
                let row = &p[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += dz * w;
                }
            }
        }
        delta_a = next;
    }
    if let Some(ig) = input_grad {
        if ig.len() != delta_a.len() {
            return Err(Error::DimensionMismatch {
                expected: delta_a.len(),
                got: ig.len(),
                context: "input gradient buffer",
            });
        }
        ig.copy_from_slice(&delta_a);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub output: Vec<f64>,
    pub loss: f64,
    pub grad: Vec<f64>,
    pub input_grad: Vec<f64>,
}

/// Forward pass, scalar loss on the output, and the exact gradient of that loss.
///
/// `loss` maps the network output to `(value, d value / d output)`.
pub fn evaluate_with_gradient<L>(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &[f64],
    loss: L,
) -> Result<GradResult>
where
    L: FnOnce(&[f64]) -> (f64, Vec<f64>),
{
    let tape = forward(spec, params, x)?;
    let (value, d_out) = loss(tape.output());
    let mut grad = vec![0.0; spec.param_len()];
    let mut input_grad = vec![0.0; spec.input_dim()];
    backward(spec, params, &tape, &d_out, &mut grad, Some(&mut input_grad))?;
    if !value.is_finite() || !grad.iter().chain(&input_grad).all(|g| g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(GradResult {
        output: tape.output().to_vec(),
        loss: value,
        grad,
        input_grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerRule {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub rule: OptimizerRule,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            rule: OptimizerRule::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            rule: OptimizerRule::Sgd,
            lr,
            ..Default::default()
        }
    }
}

/// Adam moments and step counter. SGD leaves it untouched.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        OptimizerState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// In-place version of [`optimizer_step`].
pub fn optimizer_step_in_place(
    params: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grad.len(),
            context: "optimizer gradient",
        });
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("optimizer gradient"));
    }
    match config.rule {
        OptimizerRule::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= config.lr * g;
            }
        }
        OptimizerRule::Adam => {
            if state.m.len() != params.len() {
                *state = OptimizerState::new(params.len());
            }
            state.t += 1;
            let t = state.t as i32;
            let c1 = 1.0 - config.beta1.powi(t);
            let c2 = 1.0 - config.beta2.powi(t);
            for i in 0..params.len() {
                let g = grad[i];
                state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
                state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                params[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
            }
        }
    }
    Ok(())
}

pub fn optimizer_step(
    params: &ParamVector,
    grad: &[f64],
    state: OptimizerState,
    config: &OptimizerConfig,
) -> Result<(ParamVector, OptimizerState)> {
    let mut next = params.clone();
    let mut state = state;
    optimizer_step_in_place(&mut next.values, grad, &mut state, config)?;
    Ok((next, state))
}
