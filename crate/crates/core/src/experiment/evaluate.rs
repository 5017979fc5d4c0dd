use std::io::Write;

use serde::{Deserialize, Serialize};

use super::run::Experiment;
use crate::adm::{write_heatmap_header, write_heatmap_row};
use crate::agent::{collect_rollout, Actor};
use crate::error::Result;
use crate::eval::adjusted_rand_index;
use crate::seeds::{child_rng, child_seed};

/// Frozen-policy statistics over fresh evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env_steps: u64,
    pub episodes: u64,
    pub mean_return: Option<f64>,
    pub max_return: Option<f64>,
    pub mean_distance: Option<f64>,
    pub ari: Option<f64>,
}

impl Experiment {
    /// Runs the current policy for `iterations` rollouts on fresh actors
    /// without updating anything. With `attention` set, every heatmap is
    /// written there as CSV.
    pub fn evaluate(&self, iterations: u64, mut attention: Option<&mut dyn Write>) -> Result<EvalReport> {
        let cfg = &self.config().trainer;
        let seed = child_seed(self.config().seed, "eval");
        let mut actors: Vec<Actor> = (0..cfg.actors)
            .map(|i| Actor::new(self.world(), seed, i, cfg.policy.frame_stack))
            .collect();
        let mut explorer = self.explorer().clone();
        let mut rng = child_rng(self.config().seed, "eval/policy");
        if let (Some(w), Some(adm)) = (attention.as_deref_mut(), &explorer.adm) {
            write_heatmap_header(w, adm.cells())?;
        }
        let k = actors.len();
        let mut returns = Vec::new();
        let mut distances = Vec::new();
        let (mut predicted, mut truth) = (Vec::new(), Vec::new());
        let mut steps = 0u64;
        for _ in 0..iterations {
            let rec = attention.is_some() && explorer.adm.is_some();
            let r = collect_rollout(self.world(), &mut actors, self.policy(), &mut explorer, cfg, None, &mut rng, rec)?;
            if let Some(w) = attention.as_deref_mut() {
                for (t, i, map) in &r.stats.attention {
                    write_heatmap_row(w, steps + (t * k + i) as u64 + 1, *i, map)?;
                }
            }
            steps += r.buffer.len() as u64;
            returns.extend(r.stats.episodes.iter().map(|e| e.episode_return));
            distances.extend(r.stats.distances);
            for (c, room) in r.stats.cluster_labels {
                predicted.push(c);
                truth.push(room);
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Ok(EvalReport {
            env_steps: steps,
            episodes: returns.len() as u64,
            mean_return: mean(&returns),
            max_return: returns.iter().copied().reduce(f64::max),
            mean_distance: mean(&distances),
            ari: if predicted.is_empty() {
                None
            } else {
                Some(adjusted_rand_index(&predicted, &truth)?)
            },
        })
    }
}
