use std::collections::VecDeque;

use ndcompute::{Graph, ParameterSet, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{add_conv_stack, add_mlp, conv_forward, mlp_forward, Activation, ConvLayer, ConvSpec, DenseLayer};
use crate::pixelworld::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub torso: Vec<ConvSpec>,
    pub hidden: usize,
    /// Grayscale frames stacked along the channel axis.
    pub frame_stack: usize,
}

impl PolicyConfig {
    /// Torso for 84-pixel inputs.
    pub fn large() -> Self {
        Self {
            torso: vec![ConvSpec::new(32, 8, 4, 0), ConvSpec::new(64, 4, 2, 0), ConvSpec::new(64, 3, 1, 0)],
            hidden: 512,
            frame_stack: 4,
        }
    }

    /// Torso for 36-pixel worlds with 4-pixel cells.
    pub fn small() -> Self {
        Self {
            torso: vec![ConvSpec::new(8, 4, 4, 0), ConvSpec::new(16, 3, 1, 0)],
            hidden: 64,
            frame_stack: 4,
        }
    }
}

/// Actor-critic network: conv torso, one hidden layer, then an action-logit
/// head and a value head.
#[derive(Clone, Debug)]
pub struct Policy {
    config: PolicyConfig,
    input: [usize; 3],
    num_actions: usize,
    params: ParameterSet,
    torso: Vec<ConvLayer>,
    hidden: Vec<DenseLayer>,
    logits: Vec<DenseLayer>,
    value: Vec<DenseLayer>,
    flat: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    pub actions: Vec<usize>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// Graph nodes of one policy forward pass.
pub struct PolicyNodes {
    /// `[B, |A|]`.
    pub logits: Var,
    /// `[B]`.
    pub values: Var,
}

impl Policy {
    /// `frame` is the `[h, w]` size of one grayscale frame.
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, frame: [usize; 2], num_actions: usize, rng: &mut R) -> Result<Self> {
        if config.frame_stack == 0 || config.hidden == 0 {
            return Err(Error::Config("policy: frame_stack and hidden must be positive".into()));
        }
        let input = [frame[0], frame[1], config.frame_stack];
        let mut params = ParameterSet::new();
        let (torso, out) = add_conv_stack(&mut params, "policy.torso", input, &config.torso, rng)?;
        let flat = out.iter().product();
        let hidden = add_mlp(&mut params, "policy.hidden", flat, &[], config.hidden, rng)?;
        let logits = add_mlp(&mut params, "policy.logits", config.hidden, &[], num_actions, rng)?;
        let value = add_mlp(&mut params, "policy.value", config.hidden, &[], 1, rng)?;
        Ok(Self {
            config,
            input,
            num_actions,
            params,
            torso,
            hidden,
            logits,
            value,
            flat,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    /// `[h, w, stack]`.
    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Forward pass with explicit parameters (for gradient checks).
    pub fn build_with(&self, g: &mut Graph, params: &ParameterSet, obs: Tensor) -> Result<PolicyNodes> {
        let shape = obs.shape();
        if shape.len() != 4 || shape[1..] != self.input {
            return Err(Error::Shape(format!(
                "policy expects observations [B, {}, {}, {}], got {:?}",
                self.input[0], self.input[1], self.input[2], shape
            )));
        }
        let b = shape[0];
        let x = g.constant(obs);
        let h = conv_forward(g, params, &self.torso, x, Activation::Relu)?;
        let h = g.reshape(h, vec![b, self.flat])?;
        let h = mlp_forward(g, params, &self.hidden, h, Activation::Relu)?;
        let h = g.relu(h)?;
        let logits = mlp_forward(g, params, &self.logits, h, Activation::Relu)?;
        let v = mlp_forward(g, params, &self.value, h, Activation::Relu)?;
        let values = g.reshape(v, vec![b])?;
        Ok(PolicyNodes { logits, values })
    }

    pub fn build(&self, g: &mut Graph, obs: Tensor) -> Result<PolicyNodes> {
        self.build_with(g, &self.params, obs)
    }

    /// Logits `[B, |A|]` and values.
    pub fn evaluate(&self, obs: Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let n = self.build(&mut g, obs)?;
        Ok((g.value(n.logits).clone(), g.value(n.values).data().to_vec()))
    }

    /// Samples one action per row from the softmax of the logits.
    pub fn act<R: Rng + ?Sized>(&self, obs: Tensor, rng: &mut R) -> Result<ActOutput> {
        let (logits, values) = self.evaluate(obs)?;
        let (actions, log_probs) = sample_actions(&logits, rng);
        Ok(ActOutput {
            actions,
            values,
            log_probs,
        })
    }
}

/// Inverse-CDF sampling from each logit row; returns actions and their
/// log-probabilities.
pub fn sample_actions<R: Rng + ?Sized>(logits: &Tensor, rng: &mut R) -> (Vec<usize>, Vec<f64>) {
    let a = logits.last_dim();
    let mut probs = vec![0.0; a];
    let mut actions = Vec::new();
    let mut log_probs = Vec::new();
    for row in logits.data().chunks_exact(a) {
        ndcompute::kernels::softmax_row(row, &mut probs);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut choice = a - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                choice = i;
                break;
            }
        }
        let lse = ndcompute::kernels::log_sum_exp(row);
        actions.push(choice);
        log_probs.push(row[choice] - lse);
    }
    (actions, log_probs)
}

/// The most recent grayscale frames of one actor, oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameStack {
    depth: usize,
    frames: VecDeque<Vec<f64>>,
    height: usize,
    width: usize,
}

impl FrameStack {
    /// Fills the stack with copies of the first frame of an episode.
    pub fn new(depth: usize, first: &Frame) -> Self {
        let gray = first.to_gray();
        Self {
            depth,
            frames: std::iter::repeat_n(gray.data, depth).collect(),
            height: first.height,
            width: first.width,
        }
    }

    pub fn reset(&mut self, first: &Frame) {
        *self = Self::new(self.depth, first);
    }

    pub fn push(&mut self, frame: &Frame) {
        self.frames.pop_front();
        self.frames.push_back(frame.to_gray().data);
    }

    /// Interleaved `[h, w, depth]` values.
    pub fn write_into(&self, out: &mut Vec<f64>) {
        let n = self.height * self.width;
        out.reserve(n * self.depth);
        for p in 0..n {
            for f in &self.frames {
                out.push(f[p]);
            }
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.write_into(&mut v);
        v
    }
}
