use ndcompute::{optimizer_step, Graph, ParameterSet, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionMap;
use crate::error::{Error, Result};
use crate::nets::{
    add_conv_stack, add_mlp, conv_forward, mlp_forward, Activation, ConvLayer, ConvSpec, DenseLayer, OptimizerMethod,
    OptimizerSpec,
};
use crate::pixelworld::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalizer {
    Sparsemax,
    Softmax,
}

/// Optional loss terms; the combined action loss is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossTerms {
    pub cell: bool,
    pub entropy: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            cell: true,
            entropy: true,
        }
    }
}

impl LossTerms {
    /// Ablation variants: action, action+cell, action+ent, action+cell+ent.
    pub const ABLATION: [LossTerms; 4] = [
        LossTerms { cell: false, entropy: false },
        LossTerms { cell: true, entropy: false },
        LossTerms { cell: false, entropy: true },
        LossTerms { cell: true, entropy: true },
    ];

    pub fn label(&self) -> String {
        let mut parts = vec!["action"];
        if self.cell {
            parts.push("cell");
        }
        if self.entropy {
            parts.push("ent");
        }
        parts.join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmConfig {
    pub encoder: Vec<ConvSpec>,
    pub action_hidden: Vec<usize>,
    pub attention_hidden: Vec<usize>,
    pub normalizer: Normalizer,
    pub entropy_weight: f64,
    #[serde(default)]
    pub losses: LossTerms,
    pub optimizer: OptimizerSpec,
}

impl AdmConfig {
    /// Encoder and MLP sizes of the 160-pixel architecture.
    pub fn large() -> Self {
        Self {
            encoder: vec![
                ConvSpec::new(8, 4, 2, 0),
                ConvSpec::new(8, 3, 2, 0),
                ConvSpec::new(16, 3, 2, 0),
                ConvSpec::new(16, 3, 2, 0),
            ],
            action_hidden: vec![256, 128],
            attention_hidden: vec![64, 64],
            normalizer: Normalizer::Sparsemax,
            entropy_weight: 0.001,
            losses: LossTerms::default(),
            optimizer: OptimizerSpec {
                method: OptimizerMethod::Adam,
                learning_rate: 1e-3,
                max_grad_norm: None,
            },
        }
    }

    /// Small model for 36-pixel frames with 4-pixel cells: a cell-aligned
    /// first layer gives the 9×9 grid, the second mixes neighbouring cells.
    pub fn small() -> Self {
        Self {
            encoder: vec![ConvSpec::new(8, 4, 4, 0), ConvSpec::new(8, 3, 1, 1)],
            action_hidden: vec![32, 16],
            attention_hidden: vec![16, 16],
            ..Self::large()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::Config("adm: encoder needs at least one layer".into()));
        }
        if !(self.entropy_weight >= 0.0) {
            return Err(Error::Config("adm: entropy_weight must be nonnegative".into()));
        }
        self.optimizer.validate("adm")
    }
}

/// Consecutive frames `(prev, cur)` and the action issued between them,
/// as indices into the batch's frame list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub prev: usize,
    pub cur: usize,
    pub action: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdmBatch {
    pub frames: Vec<Frame>,
    /// Episode identifier of every frame.
    pub episodes: Vec<u64>,
    pub transitions: Vec<Transition>,
}

impl AdmBatch {
    pub fn push_frame(&mut self, frame: Frame, episode: u64) -> usize {
        self.frames.push(frame);
        self.episodes.push(episode);
        self.frames.len() - 1
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn validate(&self, num_actions: usize) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::Config("adm: empty batch".into()));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.prev >= self.frames.len() || t.cur >= self.frames.len() {
                return Err(Error::Config(format!("adm: transition {i} refers to a missing frame")));
            }
            if self.episodes[t.prev] != self.episodes[t.cur] {
                return Err(Error::CrossEpisode(i));
            }
            if t.action >= num_actions {
                return Err(Error::InvalidAction(t.action));
            }
        }
        Ok(())
    }
}

/// Graph nodes of one forward pass over a batch of transitions.
pub struct AdmGraph {
    pub graph: Graph,
    /// `[B·cells, |A|]` per-cell logits.
    pub cell_logits: Var,
    /// `[B, cells]`.
    pub attention: Var,
    /// `[B, |A|]` attention-weighted logits.
    pub combined: Var,
    /// Rows are `[difference; current]` features, `[B·cells, 2K]`.
    pub cell_inputs: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmLoss {
    pub total: f64,
    pub action: f64,
    /// Sum over cells, averaged over the batch.
    pub cell: f64,
    /// Negative attention entropy, averaged over the batch.
    pub entropy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmMetrics {
    pub loss: AdmLoss,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct AdmOutput {
    /// `[B, cells, |A|]`.
    pub cell_logits: Tensor,
    pub attention: Vec<AttentionMap>,
    /// `[B, |A|]` action distribution.
    pub probs: Tensor,
}

/// Attentive inverse-dynamics model.
#[derive(Clone, Debug)]
pub struct Adm {
    config: AdmConfig,
    frame_shape: [usize; 3],
    grid: [usize; 3],
    num_actions: usize,
    params: ParameterSet,
    encoder: Vec<ConvLayer>,
    action_mlp: Vec<DenseLayer>,
    attention_mlp: Vec<DenseLayer>,
}

impl Adm {
    pub fn new<R: Rng + ?Sized>(
        config: AdmConfig,
        frame_shape: [usize; 3],
        num_actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        let (encoder, grid) = add_conv_stack(&mut params, "adm.encoder", frame_shape, &config.encoder, rng)?;
        let k = grid[2];
        let action_mlp = add_mlp(&mut params, "adm.action", 2 * k, &config.action_hidden, num_actions, rng)?;
        let attention_mlp = add_mlp(&mut params, "adm.attention", k, &config.attention_hidden, 1, rng)?;
        Ok(Self {
            config,
            frame_shape,
            grid,
            num_actions,
            params,
            encoder,
            action_mlp,
            attention_mlp,
        })
    }

    pub fn config(&self) -> &AdmConfig {
        &self.config
    }

    /// Feature grid `[H, W, K]`.
    pub fn grid(&self) -> [usize; 3] {
        self.grid
    }

    pub fn cells(&self) -> usize {
        self.grid[0] * self.grid[1]
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

    fn check_frames(&self, frames: &[&Frame]) -> Result<()> {
        for f in frames {
            if f.shape() != self.frame_shape {
                return Err(Error::Shape(format!(
                    "adm encoder expects frames of shape {:?}, got {:?}",
                    self.frame_shape,
                    f.shape()
                )));
            }
        }
        Ok(())
    }

    fn encode(&self, g: &mut Graph, frames: &[&Frame]) -> Result<Var> {
        self.check_frames(frames)?;
        let x = g.constant(Frame::batch_tensor(frames));
        conv_forward(g, &self.params, &self.encoder, x, Activation::LeakyRelu)
    }

    fn normalize(&self, g: &mut Graph, scores: Var) -> Result<Var> {
        Ok(match self.config.normalizer {
            Normalizer::Sparsemax => g.sparsemax(scores)?,
            Normalizer::Softmax => g.softmax(scores)?,
        })
    }

    /// Attention over `features` `[B, H, W, K]`, returned as `[B, cells]`.
    fn attend(&self, g: &mut Graph, features: Var, batch: usize) -> Result<Var> {
        let k = self.grid[2];
        let rows = g.reshape(features, vec![batch * self.cells(), k])?;
        let scores = mlp_forward(g, &self.params, &self.attention_mlp, rows, Activation::Relu)?;
        let scores = g.reshape(scores, vec![batch, self.cells()])?;
        self.normalize(g, scores)
    }

    /// Builds the forward graph for `transitions` over `frames`. Each frame
    /// is encoded once however many transitions use it.
    pub fn build(&self, frames: &[&Frame], transitions: &[Transition]) -> Result<AdmGraph> {
        let mut g = Graph::new();
        let b = transitions.len();
        let (cells, k, a) = (self.cells(), self.grid[2], self.num_actions);
        let features = self.encode(&mut g, frames)?;
        let prev = g.index_select(features, transitions.iter().map(|t| t.prev).collect())?;
        let cur = g.index_select(features, transitions.iter().map(|t| t.cur).collect())?;
        let diff = g.sub(cur, prev)?;
        let joined = g.concat(&[diff, cur])?;
        let cell_inputs = g.reshape(joined, vec![b * cells, 2 * k])?;
        let cell_logits = mlp_forward(&mut g, &self.params, &self.action_mlp, cell_inputs, Activation::Relu)?;
        let attention = self.attend(&mut g, cur, b)?;
        let per_cell = g.reshape(cell_logits, vec![b, cells, a])?;
        let combined = g.weighted_sum(attention, per_cell)?;
        Ok(AdmGraph {
            graph: g,
            cell_logits,
            attention,
            combined,
            cell_inputs,
        })
    }

    /// Forward pass on explicit frame pairs.
    pub fn forward(&self, prev: &[&Frame], cur: &[&Frame]) -> Result<AdmOutput> {
        if prev.len() != cur.len() {
            return Err(Error::LengthMismatch(prev.len(), cur.len()));
        }
        let b = prev.len();
        let frames: Vec<&Frame> = prev.iter().chain(cur).copied().collect();
        let transitions: Vec<Transition> = (0..b)
            .map(|i| Transition {
                prev: i,
                cur: b + i,
                action: 0,
            })
            .collect();
        let mut out = self.build(&frames, &transitions)?;
        let probs = out.graph.softmax(out.combined)?;
        Ok(AdmOutput {
            cell_logits: out
                .graph
                .value(out.cell_logits)
                .clone()
                .reshape(vec![b, self.cells(), self.num_actions])?,
            attention: self.maps(out.graph.value(out.attention)),
            probs: out.graph.value(probs).clone(),
        })
    }

    fn maps(&self, t: &Tensor) -> Vec<AttentionMap> {
        t.data()
            .chunks_exact(self.cells())
            .map(|row| AttentionMap::new(self.grid[0], self.grid[1], row.to_vec()))
            .collect()
    }

    /// Attention maps of single frames (encoder plus attention MLP only).
    pub fn attention(&self, frames: &[&Frame]) -> Result<Vec<AttentionMap>> {
        let mut g = Graph::new();
        let features = self.encode(&mut g, frames)?;
        let alpha = self.attend(&mut g, features, frames.len())?;
        Ok(self.maps(g.value(alpha)))
    }

    /// Appends the training objective to a built graph. Returns the total
    /// and the three component nodes.
    pub fn loss_nodes(&self, out: &mut AdmGraph, actions: &[usize]) -> Result<(Var, [Var; 3])> {
        let g = &mut out.graph;
        let b = actions.len() as f64;
        let ce = g.cross_entropy_with_logits(out.combined, actions.to_vec())?;
        let action = g.mean(ce)?;
        let cell_targets: Vec<usize> = actions
            .iter()
            .flat_map(|&a| std::iter::repeat_n(a, self.cells()))
            .collect();
        let cell_ce = g.cross_entropy_with_logits(out.cell_logits, cell_targets)?;
        let cell_sum = g.sum(cell_ce)?;
        let cell = g.scale(cell_sum, 1.0 / b)?;
        let h = g.entropy(out.attention)?;
        let mean_h = g.mean(h)?;
        let entropy = g.scale(mean_h, -1.0)?;
        let mut total = action;
        if self.config.losses.cell {
            total = g.add(total, cell)?;
        }
        if self.config.losses.entropy {
            let weighted = g.scale(entropy, self.config.entropy_weight)?;
            total = g.add(total, weighted)?;
        }
        Ok((total, [action, cell, entropy]))
    }

    fn batch_graph(&self, batch: &AdmBatch) -> Result<(AdmGraph, Var, [Var; 3])> {
        batch.validate(self.num_actions)?;
        let frames: Vec<&Frame> = batch.frames.iter().collect();
        let mut out = self.build(&frames, &batch.transitions)?;
        let actions: Vec<usize> = batch.transitions.iter().map(|t| t.action).collect();
        let (total, parts) = self.loss_nodes(&mut out, &actions)?;
        Ok((out, total, parts))
    }

    pub fn loss(&self, batch: &AdmBatch) -> Result<AdmLoss> {
        let (out, total, parts) = self.batch_graph(batch)?;
        let v = |x: Var| out.graph.value(x).item();
        Ok(AdmLoss {
            total: v(total),
            action: v(parts[0]),
            cell: v(parts[1]),
            entropy: v(parts[2]),
        })
    }

    /// One optimizer step on the batch. Metrics describe the parameters
    /// before the update.
    pub fn train_step(&mut self, batch: &AdmBatch) -> Result<AdmMetrics> {
        let metrics = self.backward(batch)?;
        optimizer_step(&mut self.params, &self.config.optimizer.to_config())?;
        Ok(metrics)
    }

    /// Fills the parameter gradients of the training objective.
    pub fn backward(&mut self, batch: &AdmBatch) -> Result<AdmMetrics> {
        let (out, total, parts) = self.batch_graph(batch)?;
        let v = |x: Var| out.graph.value(x).item();
        let loss = AdmLoss {
            total: v(total),
            action: v(parts[0]),
            cell: v(parts[1]),
            entropy: v(parts[2]),
        };
        let logits = out.graph.value(out.combined);
        let a = self.num_actions;
        let correct = logits
            .data()
            .chunks_exact(a)
            .zip(&batch.transitions)
            .filter(|(row, t)| {
                let best = (0..a).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                best == t.action
            })
            .count();
        out.graph.gradients(total, &mut self.params)?;
        Ok(AdmMetrics {
            loss,
            accuracy: correct as f64 / batch.len() as f64,
        })
    }
}
