use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndcompute::ParameterSet;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{read_sections, write_sections};
use super::config::ExperimentConfig;
use super::metrics::{
    append_file, cell, CsvLog, ARI_COLUMNS, CLUSTER_COLUMNS, DISTANCE_COLUMNS, METRICS_COLUMNS, TIMING_COLUMNS,
};
use crate::abstraction::{calibrate_tau, ClusterSet, Projector, VisitCounter};
use crate::adm::{write_heatmap_header, write_heatmap_row, Adm, AdmMetrics};
use crate::agent::{
    a2c_update, collect_rollout, compute_returns, ppo_update, Actor, Algorithm, Explorer, Policy, RewardNormalizer,
    UpdateMetrics,
};
use crate::error::{Error, Result, Within};
use crate::eval::{RollingLabels, RollingMean, ScoreTracker, ROLLING_WINDOW};
use crate::pixelworld::{Cell, Frame, World, NUM_ACTIONS};
use crate::seeds::{child_rng, child_seed};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const DISTANCE_FILE: &str = "distance.csv";
pub const ARI_FILE: &str = "ari.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const ATTENTION_FILE: &str = "attention.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// End-of-run numbers; every field can be read back from the last row of
/// the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub iterations: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub max_mean_return: Option<f64>,
    pub final_mean_return: Option<f64>,
    pub final_distance: Option<f64>,
    pub final_ari: Option<f64>,
    pub clusters: usize,
    pub distinct_psi: usize,
    /// Largest achievable episode return of the world.
    pub max_reward: f64,
}

impl Summary {
    /// Rebuilds the summary from a metrics log.
    pub fn from_metrics(path: &Path, name: &str, max_reward: f64) -> Result<Summary> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        if header != METRICS_COLUMNS {
            return Err(Error::Config(format!("{} does not have the metrics header", path.display())));
        }
        let last = lines
            .last()
            .ok_or_else(|| Error::Config(format!("{} has no rows", path.display())))?;
        let fields: Vec<&str> = last.split(',').collect();
        let get = |col: &str| fields[METRICS_COLUMNS.iter().position(|c| *c == col).expect("known column")];
        let num = |col: &str| -> Result<Option<f64>> {
            let v = get(col);
            if v.is_empty() {
                return Ok(None);
            }
            v.parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value `{v}` in column {col}")))
        };
        let int = |col: &str| -> Result<u64> {
            get(col)
                .parse()
                .map_err(|_| Error::Config(format!("bad value in column {col}")))
        };
        Ok(Summary {
            name: name.to_string(),
            seed: int("seed")?,
            iterations: int("iteration")?,
            env_steps: int("env_step")?,
            episodes: int("episodes")?,
            max_mean_return: num("max_mean_return")?,
            final_mean_return: num("mean_return")?,
            final_distance: num("distance")?,
            final_ari: num("ari")?,
            clusters: int("clusters")? as usize,
            distinct_psi: int("distinct_psi")? as usize,
            max_reward,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub summary: Summary,
}

/// Whether [`Experiment::run`] reached the step budget.
#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Completed(RunArtifacts),
    /// Stopped early by an iteration limit; a checkpoint was written.
    Stopped { iteration: u64, checkpoint: PathBuf },
}

/// Frames rendered with the avatar teleported to random open cells,
/// cycling over rooms; returns frames and their room ids.
pub fn room_sample<R: Rng + ?Sized>(world: &World, n: usize, rng: &mut R) -> (Vec<Frame>, Vec<usize>) {
    let rooms = world.num_rooms();
    let g = world.grid();
    let mut frames = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let room = j % rooms;
        let (mut state, _) = world.reset(rng.random());
        let open: Vec<Cell> = (0..g * g)
            .map(|i| Cell::new(i / g, i % g))
            .filter(|&c| world.layout().is_open(room, c))
            .collect();
        state.room = room;
        state.avatar = open[rng.random_range(0..open.len())];
        frames.push(world.render(&state));
        labels.push(room);
    }
    (frames, labels)
}

/// Clustering threshold from a room sample. A single-room world has no
/// cross-room pairs; twice the largest within-room distance is used then.
pub fn derive_tau(projector: &Projector, frames: &[Frame], labels: &[usize]) -> Result<f64> {
    let emb: Vec<Vec<f64>> = frames.iter().map(|f| projector.embed(f)).collect::<Result<_>>()?;
    if let Some(c) = calibrate_tau(&emb, labels) {
        return Ok(c.tau);
    }
    let mut max_d: f64 = 0.0;
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let d: f64 = emb[i].iter().zip(&emb[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            max_d = max_d.max(d);
        }
    }
    Ok(if max_d > 0.0 { 2.0 * max_d } else { 1.0 })
}

/// Everything that changes during a run besides parameters, counter and
/// clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Runtime {
    iteration: u64,
    env_steps: u64,
    actors: Vec<Actor>,
    policy_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    normalizer: Option<RewardNormalizer>,
    score: ScoreTracker,
    distance: RollingMean,
    labels: RollingLabels,
}

struct Logs {
    metrics: CsvLog,
    timing: CsvLog,
    distance: CsvLog,
    ari: CsvLog,
    clusters: Option<CsvLog>,
    attention: Option<std::io::BufWriter<fs::File>>,
}

impl Logs {
    fn open(dir: &Path, config: &ExperimentConfig, resume: Option<(u64, u64)>, cells: usize) -> Result<Logs> {
        let open = |name: &str, cols: &[&str], key: u64| match resume {
            Some(_) => CsvLog::resume(&dir.join(name), cols, key),
            None => CsvLog::create(&dir.join(name), cols),
        };
        let (iter, steps) = resume.unwrap_or((0, 0));
        let attention = if config.export.attention {
            let path = dir.join(ATTENTION_FILE);
            if resume.is_some() && path.exists() {
                // Keep the header and rows up to the checkpoint.
                drop(CsvLog::resume(&path, &["step"], steps)?);
                Some(append_file(&path)?)
            } else {
                let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
                write_heatmap_header(&mut w, cells)?;
                Some(w)
            }
        } else {
            None
        };
        Ok(Logs {
            metrics: open(METRICS_FILE, &METRICS_COLUMNS, iter)?,
            timing: open(TIMING_FILE, &TIMING_COLUMNS, iter)?,
            distance: open(DISTANCE_FILE, &DISTANCE_COLUMNS, steps)?,
            ari: open(ARI_FILE, &ARI_COLUMNS, steps)?,
            clusters: if config.export.clusters {
                Some(open(CLUSTERS_FILE, &CLUSTER_COLUMNS, steps)?)
            } else {
                None
            },
            attention,
        })
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush()?;
        self.timing.flush()?;
        self.distance.flush()?;
        self.ari.flush()?;
        if let Some(c) = &mut self.clusters {
            c.flush()?;
        }
        if let Some(a) = &mut self.attention {
            a.flush()?;
        }
        Ok(())
    }
}

/// Owns all state of one seeded run.
pub struct Experiment {
    config: ExperimentConfig,
    world: World,
    policy: Policy,
    explorer: Explorer,
    rt: Runtime,
    out_dir: PathBuf,
    logs: Option<Logs>,
    checkpoints: Vec<PathBuf>,
    started: Instant,
}

impl Experiment {
    /// Fresh run writing into `out_dir` (created if missing).
    pub fn new(config: ExperimentConfig, out_dir: &Path) -> Result<Self> {
        config.validate()?;
        let mut exp = Self::build(config, out_dir)?;
        let cells = exp.explorer.adm.as_ref().map_or(0, |m| m.cells());
        exp.logs = Some(Logs::open(out_dir, &exp.config, None, cells)?);
        Ok(exp)
    }

    /// Constructs all components from the config alone.
    fn build(config: ExperimentConfig, out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        let seed = config.seed;
        let world = World::new(config.env.resolve()?)?;
        let [h, w, _] = world.frame_shape();
        let tc = &config.trainer;
        let policy = Policy::new(tc.policy.clone(), [h, w], NUM_ACTIONS, &mut child_rng(seed, "init/policy"))?;
        let adm = if config.adm.enabled {
            Some(Adm::new(
                config.adm.model.clone(),
                world.frame_shape(),
                NUM_ACTIONS,
                &mut child_rng(seed, "init/adm"),
            )?)
        } else {
            None
        };
        let ab = &config.abstraction;
        let (projector, clusters) = if ab.psi.context || config.export.clusters {
            let side = ab.projection_side;
            let p = Projector::new(child_seed(seed, "projector"), [side, side, 3], ab.dim);
            let tau = match ab.tau {
                Some(t) => t,
                None => {
                    let (frames, labels) =
                        room_sample(&world, ab.calibration_frames, &mut child_rng(seed, "calibration"));
                    derive_tau(&p, &frames, &labels)?
                }
            };
            (Some(p), Some(ClusterSet::new(tau)))
        } else {
            (None, None)
        };
        let actors = (0..tc.actors)
            .map(|i| Actor::new(&world, seed, i, tc.policy.frame_stack))
            .collect();
        let normalizer = tc.normalize_rewards.then(|| RewardNormalizer::new(tc.actors, tc.gamma));
        let rt = Runtime {
            iteration: 0,
            env_steps: 0,
            actors,
            policy_rng: child_rng(seed, "policy"),
            update_rng: child_rng(seed, "update"),
            normalizer,
            score: ScoreTracker::new(),
            distance: RollingMean::new(ROLLING_WINDOW),
            labels: RollingLabels::new(ROLLING_WINDOW),
        };
        Ok(Self {
            explorer: Explorer {
                adm,
                projector,
                clusters,
                counter: VisitCounter::new(),
                psi: ab.psi,
            },
            config,
            world,
            policy,
            rt,
            out_dir: out_dir.to_path_buf(),
            logs: None,
            checkpoints: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Restores a run from `checkpoint` and continues writing into
    /// `out_dir`; log rows written after the checkpoint are dropped.
    pub fn resume(checkpoint: &Path, out_dir: &Path) -> Result<Self> {
        let mut exp = Self::load(checkpoint, out_dir)?;
        let cells = exp.explorer.adm.as_ref().map_or(0, |m| m.cells());
        exp.logs = Some(Logs::open(
            out_dir,
            &exp.config,
            Some((exp.rt.iteration, exp.rt.env_steps)),
            cells,
        )?);
        Ok(exp)
    }

    /// Loads a checkpoint without touching any log file.
    pub fn load(checkpoint: &Path, out_dir: &Path) -> Result<Self> {
        let bytes = fs::read(checkpoint)?;
        let sections = read_sections(&mut bytes.as_slice())?;
        let section = |name: &str| -> &[u8] {
            &sections.iter().find(|(n, _)| n == name).expect("section order checked").1
        };
        let bad = |name: &str, e: &dyn std::fmt::Display| Error::Checkpoint {
            section: name.to_string(),
            msg: e.to_string(),
        };
        let config: ExperimentConfig =
            serde_json::from_slice(section("config")).map_err(|e| bad("config", &e))?;
        config.validate()?;
        let mut exp = Self::build(config, out_dir)?;

        let restore = |params: &mut ParameterSet, values: &str, opt: &str| -> Result<()> {
            let loaded = ParameterSet::read_checkpoint(&mut section(values)).map_err(|e| bad(values, &e))?;
            params.load_values_from(&loaded).map_err(|e| bad(values, &e))?;
            params
                .read_optimizer_state(&mut section(opt))
                .map_err(|e| bad(opt, &e))
        };
        restore(exp.policy.params_mut(), "policy.params", "policy.optimizer")?;
        match &mut exp.explorer.adm {
            Some(adm) => restore(adm.params_mut(), "adm.params", "adm.optimizer")?,
            None => {
                if !section("adm.params").is_empty() {
                    return Err(bad("adm.params", &"present but the model is disabled"));
                }
            }
        }
        exp.explorer.counter = serde_json::from_slice(section("counter")).map_err(|e| bad("counter", &e))?;
        let clusters: Option<ClusterSet> =
            serde_json::from_slice(section("clusters")).map_err(|e| bad("clusters", &e))?;
        if clusters.is_some() != exp.explorer.clusters.is_some() {
            return Err(bad("clusters", &"does not match the abstraction config"));
        }
        exp.explorer.clusters = clusters;
        exp.rt = serde_json::from_slice(section("runtime")).map_err(|e| bad("runtime", &e))?;
        Ok(exp)
    }

    /// Serializes the full run state.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let params = |p: &ParameterSet| -> Result<(Vec<u8>, Vec<u8>)> {
            let (mut v, mut o) = (Vec::new(), Vec::new());
            p.write_checkpoint(&mut v)?;
            p.write_optimizer_state(&mut o)?;
            Ok((v, o))
        };
        let (pv, po) = params(self.policy.params())?;
        let (av, ao) = match &self.explorer.adm {
            Some(adm) => params(adm.params())?,
            None => (Vec::new(), Vec::new()),
        };
        let sections = [
            ("config", self.config.to_json().into_bytes()),
            ("policy.params", pv),
            ("policy.optimizer", po),
            ("adm.params", av),
            ("adm.optimizer", ao),
            ("counter", serde_json::to_vec(&self.explorer.counter)?),
            ("clusters", serde_json::to_vec(&self.explorer.clusters)?),
            ("runtime", serde_json::to_vec(&self.rt)?),
        ];
        let mut out = Vec::new();
        write_sections(&mut out, &sections)?;
        Ok(out)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.checkpoint_bytes()?)?;
        Ok(())
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn explorer(&self) -> &Explorer {
        &self.explorer
    }

    pub fn iteration(&self) -> u64 {
        self.rt.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.rt.env_steps
    }

    pub fn score(&self) -> &ScoreTracker {
        &self.rt.score
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn is_complete(&self) -> bool {
        self.rt.env_steps >= self.config.total_steps
    }

    /// One iteration: collect, count, update the policy, update the model.
    pub fn step(&mut self) -> Result<()> {
        let it = self.rt.iteration + 1;
        let before = self.rt.env_steps;
        let record = self.config.export.attention;
        let cfg = &self.config.trainer;
        let rollout = collect_rollout(
            &self.world,
            &mut self.rt.actors,
            &self.policy,
            &mut self.explorer,
            cfg,
            self.rt.normalizer.as_mut(),
            &mut self.rt.policy_rng,
            record,
        )
        .within(it, "collect_rollout")?;
        let buf = &rollout.buffer;
        let update = match cfg.algorithm {
            Algorithm::Random => None,
            alg => {
                let ret = compute_returns(
                    &buf.rewards,
                    &buf.values,
                    &buf.dones,
                    &buf.bootstrap,
                    cfg.gamma,
                    cfg.return_mode(),
                )
                .within(it, "compute_returns")?;
                Some(match alg {
                    Algorithm::Ppo => {
                        ppo_update(&mut self.policy, buf, &ret, cfg, &mut self.rt.update_rng).within(it, "ppo_update")?
                    }
                    _ => a2c_update(&mut self.policy, buf, &ret, cfg).within(it, "a2c_update")?,
                })
            }
        };
        let adm_metrics = match &mut self.explorer.adm {
            Some(adm) => Some(adm.train_step(&rollout.adm_batch).within(it, "adm_update")?),
            None => None,
        };

        self.rt.iteration = it;
        self.rt.env_steps += buf.len() as u64;
        for e in &rollout.stats.episodes {
            self.rt.score.update(e.episode_return, e.steps);
        }
        for &d in &rollout.stats.distances {
            self.rt.distance.push(d);
        }
        for &(c, room) in &rollout.stats.cluster_labels {
            self.rt.labels.push(c, room);
        }
        self.log(before, &rollout, update, adm_metrics).within(it, "metrics")?;

        let every = self.config.checkpoint_every;
        if every > 0 && it % every == 0 && !self.is_complete() {
            let path = self.out_dir.join("checkpoints").join(format!("iter-{it:08}.ckpt"));
            self.save_checkpoint(&path).within(it, "checkpoint")?;
            self.checkpoints.push(path);
        }
        Ok(())
    }

    fn log(
        &mut self,
        before: u64,
        rollout: &crate::agent::Rollout,
        update: Option<UpdateMetrics>,
        adm: Option<AdmMetrics>,
    ) -> Result<()> {
        let rt = &self.rt;
        let buf = &rollout.buffer;
        let n = buf.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let max_bonus = buf.bonuses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let distance = rt.distance.mean();
        let ari = rt.labels.ari();
        let seed = self.config.seed.to_string();
        let row = vec![
            rt.iteration.to_string(),
            rt.env_steps.to_string(),
            seed.clone(),
            rt.score.episodes().to_string(),
            cell(rt.score.mean()),
            cell(rt.score.max_mean()),
            mean(&buf.rewards).to_string(),
            mean(&buf.ext_rewards).to_string(),
            mean(&buf.bonuses).to_string(),
            max_bonus.to_string(),
            cell(update.map(|u| u.policy_loss)),
            cell(update.map(|u| u.value_loss)),
            cell(update.map(|u| u.entropy)),
            cell(adm.map(|m| m.loss.total)),
            cell(adm.map(|m| m.loss.action)),
            cell(adm.map(|m| m.loss.cell)),
            cell(adm.map(|m| m.loss.entropy)),
            cell(adm.map(|m| m.accuracy)),
            cell(distance),
            cell(ari),
            self.explorer.clusters.as_ref().map_or(0, |c| c.len()).to_string(),
            self.explorer.counter.len().to_string(),
            cell(self.explorer.clusters.as_ref().map(|c| c.tau())),
        ];
        let k = rt.actors.len();
        let logs = self.logs.as_mut().expect("logs are open while running");
        logs.metrics.row(&row)?;
        logs.timing.row(&[
            rt.iteration.to_string(),
            rt.env_steps.to_string(),
            seed,
            format!("{:.3}", self.started.elapsed().as_secs_f64()),
        ])?;
        if rt.iteration % self.config.eval_every == 0 {
            if let Some(d) = distance {
                logs.distance.row(&[rt.env_steps.to_string(), d.to_string()])?;
            }
            if let Some(a) = ari {
                logs.ari.row(&[rt.env_steps.to_string(), a.to_string()])?;
            }
        }
        if let Some(out) = &mut logs.clusters {
            for (j, &(c, room)) in rollout.stats.cluster_labels.iter().enumerate() {
                out.row(&[
                    (before + j as u64 + 1).to_string(),
                    (j % k).to_string(),
                    c.to_string(),
                    room.to_string(),
                ])?;
            }
        }
        if let Some(out) = &mut logs.attention {
            for (t, i, map) in &rollout.stats.attention {
                write_heatmap_row(out, before + (t * k + i) as u64 + 1, *i, map)?;
            }
        }
        logs.flush()
    }

    /// Runs until the step budget or until `stop_after` total iterations.
    /// Completion writes the final checkpoint and summary; an early stop
    /// writes a checkpoint to resume from.
    pub fn run(&mut self, stop_after: Option<u64>) -> Result<RunOutcome> {
        while !self.is_complete() {
            if stop_after.is_some_and(|s| self.rt.iteration >= s) {
                let path = self
                    .out_dir
                    .join("checkpoints")
                    .join(format!("iter-{:08}.ckpt", self.rt.iteration));
                self.save_checkpoint(&path).within(self.rt.iteration, "checkpoint")?;
                return Ok(RunOutcome::Stopped {
                    iteration: self.rt.iteration,
                    checkpoint: path,
                });
            }
            self.step()?;
        }
        let final_path = self.out_dir.join(FINAL_CHECKPOINT);
        self.save_checkpoint(&final_path).within(self.rt.iteration, "checkpoint")?;
        self.checkpoints.push(final_path);
        let metrics = self.out_dir.join(METRICS_FILE);
        let summary = Summary::from_metrics(&metrics, &self.config.name, self.world.max_reward())?;
        let mut f = fs::File::create(self.out_dir.join(SUMMARY_FILE))?;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        writeln!(f)?;
        Ok(RunOutcome::Completed(RunArtifacts {
            out_dir: self.out_dir.clone(),
            metrics,
            checkpoints: self.checkpoints.clone(),
            summary,
        }))
    }
}

/// Runs `config` to completion in `out_dir`.
pub fn run_experiment(config: ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    match Experiment::new(config, out_dir)?.run(None)? {
        RunOutcome::Completed(a) => Ok(a),
        RunOutcome::Stopped { .. } => unreachable!("no iteration limit was set"),
    }
}
