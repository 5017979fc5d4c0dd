use ndcompute::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::config::{Algorithm, TrainerConfig};
use super::policy::{FrameStack, Policy};
use super::update::{shape_reward, RewardNormalizer};
use crate::abstraction::{AbstractState, ClusterSet, Projector, PsiComponents, VisitCounter};
use crate::adm::{localize, Adm, AdmBatch, AttentionMap, Transition};
use crate::error::Result;
use crate::eval::{localization_distance, truth_cell};
use crate::pixelworld::{Frame, World, WorldState, NUM_ACTIONS};
use crate::seeds::child_seed;

/// One environment instance with the per-episode state the agent keeps
/// alongside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub index: usize,
    pub state: WorldState,
    pub frame: Frame,
    pub stack: FrameStack,
    pub smoothed: Option<AttentionMap>,
    /// Unclipped external reward since the episode started.
    pub cumulative_reward: f64,
    pub episode_steps: u64,
    pub episode: u64,
    master_seed: u64,
}

impl Actor {
    pub fn new(world: &World, master_seed: u64, index: usize, frame_stack: usize) -> Self {
        let seed = Self::episode_seed(master_seed, index, 0);
        let (state, frame) = world.reset(seed);
        Self {
            index,
            stack: FrameStack::new(frame_stack, &frame),
            state,
            frame,
            smoothed: None,
            cumulative_reward: 0.0,
            episode_steps: 0,
            episode: 0,
            master_seed,
        }
    }

    fn episode_seed(master: u64, index: usize, episode: u64) -> u64 {
        child_seed(master, &format!("env/{index}/{episode}"))
    }

    /// Identifier unique across actors and episodes.
    pub fn episode_id(&self) -> u64 {
        ((self.index as u64) << 40) | self.episode
    }

    fn start_next_episode(&mut self, world: &World) {
        self.episode += 1;
        let seed = Self::episode_seed(self.master_seed, self.index, self.episode);
        let (state, frame) = world.reset(seed);
        self.stack.reset(&frame);
        self.state = state;
        self.frame = frame;
        self.smoothed = None;
        self.cumulative_reward = 0.0;
        self.episode_steps = 0;
    }
}

/// Counting state: localization model, context clustering and the
/// visit counter.
#[derive(Clone, Debug)]
pub struct Explorer {
    pub adm: Option<Adm>,
    pub projector: Option<Projector>,
    pub clusters: Option<ClusterSet>,
    pub counter: VisitCounter,
    pub psi: PsiComponents,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeEnd {
    pub actor: usize,
    pub episode_return: f64,
    pub steps: u64,
}

/// Evaluation side channel of a rollout.
#[derive(Clone, Debug, Default)]
pub struct RolloutStats {
    pub episodes: Vec<EpisodeEnd>,
    pub distances: Vec<f64>,
    /// (cluster id, true room) per observation.
    pub cluster_labels: Vec<(usize, usize)>,
    /// (rollout step, actor, map) when recording is on.
    pub attention: Vec<(usize, usize, AttentionMap)>,
}

pub struct Rollout {
    pub buffer: RolloutBuffer,
    pub adm_batch: AdmBatch,
    pub stats: RolloutStats,
}

fn observation_tensor(actors: &[Actor], shape: [usize; 3]) -> Tensor {
    let mut data = Vec::with_capacity(actors.len() * shape.iter().product::<usize>());
    for a in actors {
        a.stack.write_into(&mut data);
    }
    Tensor::new(vec![actors.len(), shape[0], shape[1], shape[2]], data).expect("stack layout")
}

/// Steps every actor `cfg.rollout` times. Each new observation is
/// localized, clustered and counted in actor order, and the shaped reward
/// is stored. Finished episodes restart in place.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout<R: Rng + ?Sized>(
    world: &World,
    actors: &mut [Actor],
    policy: &Policy,
    explorer: &mut Explorer,
    cfg: &TrainerConfig,
    mut normalizer: Option<&mut RewardNormalizer>,
    rng: &mut R,
    record_attention: bool,
) -> Result<Rollout> {
    let k = actors.len();
    let obs_shape = policy.input_shape();
    let mut buffer = RolloutBuffer::new(k, cfg.rollout, obs_shape);
    let mut batch = AdmBatch::default();
    let mut stats = RolloutStats::default();
    let train_adm = explorer.adm.is_some();
    let mut last_frame: Vec<usize> = Vec::new();
    if train_adm {
        for a in actors.iter() {
            last_frame.push(batch.push_frame(a.frame.clone(), a.episode_id()));
        }
    }
    let [grid_h, grid_w] = explorer.adm.as_ref().map_or([0, 0], |m| [m.grid()[0], m.grid()[1]]);
    let cell_px = world.layout().cell_px();
    let frame_px = world.config().frame_px;

    for t in 0..cfg.rollout {
        let obs = observation_tensor(actors, obs_shape);
        buffer.observations.extend_from_slice(obs.data());
        let (actions, values, log_probs) = match cfg.algorithm {
            Algorithm::Random => {
                let acts: Vec<usize> = (0..k).map(|_| rng.random_range(0..NUM_ACTIONS)).collect();
                (acts, vec![0.0; k], vec![-(NUM_ACTIONS as f64).ln(); k])
            }
            _ => {
                let out = policy.act(obs, rng)?;
                (out.actions, out.values, out.log_probs)
            }
        };
        let mut results = Vec::with_capacity(k);
        for (a, &act) in actors.iter_mut().zip(&actions) {
            results.push(world.step(&mut a.state, act)?);
        }
        let maps = match &explorer.adm {
            Some(adm) => {
                let frames: Vec<&Frame> = results.iter().map(|r| &r.frame).collect();
                Some(adm.attention(&frames)?)
            }
            None => None,
        };
        for (i, (a, r)) in actors.iter_mut().zip(&results).enumerate() {
            a.cumulative_reward += r.reward;
            a.episode_steps += 1;
            if train_adm {
                let cur = batch.push_frame(r.frame.clone(), a.episode_id());
                batch.transitions.push(Transition {
                    prev: last_frame[i],
                    cur,
                    action: actions[i],
                });
                last_frame[i] = cur;
            }
            let mut loc = None;
            if let Some(maps) = &maps {
                let (xy, smoothed) = localize(&maps[i], a.smoothed.as_ref());
                if record_attention {
                    stats.attention.push((t, i, maps[i].clone()));
                }
                a.smoothed = Some(smoothed);
                let truth = truth_cell(r.info.avatar.row, r.info.avatar.col, cell_px, frame_px, grid_h, grid_w);
                stats.distances.push(localization_distance(xy, truth));
                loc = Some(xy);
            }
            let cluster = match (&explorer.projector, &mut explorer.clusters) {
                (Some(p), Some(c)) => {
                    let id = c.assign(&p.embed(&r.frame)?);
                    stats.cluster_labels.push((id, r.info.room));
                    Some(id)
                }
                _ => None,
            };
            let psi = AbstractState::new(loc, cluster, Some(a.cumulative_reward)).masked(explorer.psi);
            let bonus = explorer.counter.count_and_bonus(psi);
            let mut shaped = shape_reward(r.reward, bonus, cfg.beta_ext, cfg.beta_bonus);
            if let Some(norm) = normalizer.as_deref_mut() {
                shaped = norm.normalize(i, shaped, r.done);
            }
            buffer.actions.push(actions[i]);
            buffer.rewards.push(shaped);
            buffer.values.push(values[i]);
            buffer.log_probs.push(log_probs[i]);
            buffer.dones.push(r.done);
            buffer.ext_rewards.push(r.reward);
            buffer.bonuses.push(bonus);
            buffer.psi.push(Some(psi));
            if r.done {
                stats.episodes.push(EpisodeEnd {
                    actor: a.index,
                    episode_return: a.cumulative_reward,
                    steps: a.episode_steps,
                });
                a.start_next_episode(world);
                if train_adm {
                    last_frame[i] = batch.push_frame(a.frame.clone(), a.episode_id());
                }
            } else {
                a.stack.push(&r.frame);
                a.frame = r.frame.clone();
            }
        }
    }
    buffer.bootstrap = match cfg.algorithm {
        Algorithm::Random => vec![0.0; k],
        _ => policy.evaluate(observation_tensor(actors, obs_shape))?.1,
    };
    Ok(Rollout {
        buffer,
        adm_batch: batch,
        stats,
    })
}
