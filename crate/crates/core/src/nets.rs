//! Layer stacks shared by the dynamics model and the policy.

use ndcompute::kernels::conv_out_len;
use ndcompute::{Graph, OptimizerConfig, OptimizerKind, ParamId, ParameterSet, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
}

pub const LEAKY_SLOPE: f64 = 0.01;

fn activate(g: &mut Graph, x: Var, act: Activation) -> Result<Var> {
    Ok(match act {
        Activation::Relu => g.relu(x)?,
        Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE)?,
    })
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Output `[h, w, c]` of a conv stack applied to `input`.
pub fn conv_stack_shape(input: [usize; 3], specs: &[ConvSpec]) -> Result<[usize; 3]> {
    let mut shape = input;
    for (i, s) in specs.iter().enumerate() {
        let h = conv_out_len(shape[0], s.kernel, s.stride, s.padding);
        let w = conv_out_len(shape[1], s.kernel, s.stride, s.padding);
        match (h, w) {
            (Some(h), Some(w)) if s.out_channels > 0 => shape = [h, w, s.out_channels],
            _ => {
                return Err(Error::Shape(format!(
                    "conv layer {i} ({}@{}x{} stride {} padding {}) does not fit input {:?}",
                    s.out_channels, s.kernel, s.kernel, s.stride, s.padding, shape
                )))
            }
        }
    }
    Ok(shape)
}

pub fn add_conv_stack<R: Rng + ?Sized>(
    params: &mut ParameterSet,
    prefix: &str,
    input: [usize; 3],
    specs: &[ConvSpec],
    rng: &mut R,
) -> Result<(Vec<ConvLayer>, [usize; 3])> {
    let out = conv_stack_shape(input, specs)?;
    let mut channels = input[2];
    let mut layers = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        let fan_in = s.kernel * s.kernel * channels;
        let weight = params.add_he_uniform(
            format!("{prefix}.conv{i}.weight"),
            &[s.kernel, s.kernel, channels, s.out_channels],
            fan_in,
            rng,
        )?;
        let bias = params.add_zeros(format!("{prefix}.conv{i}.bias"), &[s.out_channels])?;
        layers.push(ConvLayer {
            weight,
            bias,
            stride: s.stride,
            padding: s.padding,
        });
        channels = s.out_channels;
    }
    Ok((layers, out))
}

pub fn add_mlp<R: Rng + ?Sized>(
    params: &mut ParameterSet,
    prefix: &str,
    input: usize,
    hidden: &[usize],
    output: usize,
    rng: &mut R,
) -> Result<Vec<DenseLayer>> {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut width = input;
    for (i, &next) in hidden.iter().chain(std::iter::once(&output)).enumerate() {
        let weight = params.add_he_uniform(format!("{prefix}.fc{i}.weight"), &[width, next], width, rng)?;
        let bias = params.add_zeros(format!("{prefix}.fc{i}.bias"), &[next])?;
        layers.push(DenseLayer { weight, bias });
        width = next;
    }
    Ok(layers)
}

/// Every conv layer is followed by the activation.
pub fn conv_forward(
    g: &mut Graph,
    params: &ParameterSet,
    layers: &[ConvLayer],
    mut x: Var,
    act: Activation,
) -> Result<Var> {
    for l in layers {
        let w = g.param(params, l.weight);
        let b = g.param(params, l.bias);
        x = g.conv2d(x, w, b, l.stride, l.padding)?;
        x = activate(g, x, act)?;
    }
    Ok(x)
}

/// Hidden layers are activated; the last layer is linear.
pub fn mlp_forward(
    g: &mut Graph,
    params: &ParameterSet,
    layers: &[DenseLayer],
    mut x: Var,
    act: Activation,
) -> Result<Var> {
    for (i, l) in layers.iter().enumerate() {
        let w = g.param(params, l.weight);
        let b = g.param(params, l.bias);
        x = g.dense(x, w, b)?;
        if i + 1 < layers.len() {
            x = activate(g, x, act)?;
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMethod {
    Rmsprop,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub method: OptimizerMethod,
    pub learning_rate: f64,
    /// Global gradient-norm clip; absent means no clipping.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl OptimizerSpec {
    pub fn to_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: match self.method {
                OptimizerMethod::Rmsprop => OptimizerKind::rmsprop(),
                OptimizerMethod::Adam => OptimizerKind::adam(),
            },
            learning_rate: self.learning_rate,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("{what}: learning rate must be finite and nonnegative")));
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::Config(format!("{what}: max_grad_norm must be positive")));
        }
        Ok(())
    }
}
