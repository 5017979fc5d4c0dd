//! Learning-behaviour checks on small worlds.

use coex::abstraction::{PsiComponents, VisitCounter};
use coex::adm::{localize, Adm, AdmBatch, AdmConfig, LossTerms, Transition};
use coex::agent::{a2c_loss, collect_rollout, compute_returns, Actor, Explorer, Policy, PolicyConfig, TrainerConfig};
use coex::eval::{localization_distance, truth_cell};
use coex::experiment::{run_experiment, ExperimentConfig, METRICS_FILE};
use coex::nets::ConvSpec;
use coex::pixelworld::{preset, Cell, Frame, ItemSpec, RoomSpec, World, WorldConfig, NUM_ACTIONS};
use ndcompute::testing::check_param_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn room(rows: &[&str]) -> RoomSpec {
    RoomSpec {
        map: rows.iter().map(|r| r.to_string()).collect(),
    }
}

/// One room with the goal two cells from the spawn area, so random play
/// already scores and a learner should score more often.
fn dense_world() -> WorldConfig {
    WorldConfig {
        frame_px: 36,
        grid: 9,
        rooms: vec![room(&[
            "#########",
            "#SS.....#",
            "#SS.....#",
            "#...K...#",
            "#.......#",
            "#.......#",
            "#.......#",
            "#.......#",
            "#########",
        ])],
        doors: vec![],
        items: vec![ItemSpec {
            room: 0,
            cell: Cell::new(3, 4),
            value: 1.0,
            terminal: true,
        }],
        distractors: vec![],
        start_room: 0,
        sticky_prob: 0.0,
        max_steps: 20,
    }
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines
        .filter_map(|l| l.split(',').nth(idx).unwrap().parse().ok())
        .collect()
}

#[test]
fn actor_critic_raises_episode_reward_without_bonus() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("four-rooms-a2c").unwrap();
    cfg.env.world = Some(dense_world());
    cfg.trainer.beta_bonus = 0.0;
    cfg.trainer.optimizer.learning_rate = 2e-3;
    cfg.total_steps = 60_000;
    cfg.eval_every = 10;
    let art = run_experiment(cfg, tmp.path()).unwrap();
    let means = column(&std::fs::read_to_string(art.out_dir.join(METRICS_FILE)).unwrap(), "mean_return");
    let tenth = means.len() / 10;
    let early = means[..tenth].iter().sum::<f64>() / tenth as f64;
    let late = means[means.len() - tenth..].iter().sum::<f64>() / tenth as f64;
    assert!(late > early + 0.1, "mean return {early:.3} early vs {late:.3} late");
}

struct Replay {
    frames: Vec<Frame>,
    truth: Vec<(usize, usize)>,
    transitions: Vec<Transition>,
}

/// Corridor play that moves right with probability `bias` and otherwise
/// takes one of the other four actions; a bias of 0.2 is uniform play.
fn biased_replay(world: &World, seed: u64, steps: usize, bias: f64) -> Replay {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = (1.0 - bias) / 4.0;
    let weights = [o, o, o, o, bias];
    let cfg = world.config();
    let cell_px = cfg.frame_px / cfg.grid;
    let truth = |c: Cell| truth_cell(c.row, c.col, cell_px, cfg.frame_px, cfg.grid, cfg.grid);
    let (mut state, f) = world.reset(seed);
    let mut r = Replay {
        frames: vec![f],
        truth: vec![truth(state.avatar)],
        transitions: Vec::new(),
    };
    for _ in 0..steps {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let action = weights.iter().position(|w| {
            acc += w;
            u < acc
        });
        let action = action.unwrap_or(NUM_ACTIONS - 1);
        let step = world.step(&mut state, action).unwrap();
        r.frames.push(step.frame);
        r.truth.push(truth(step.info.avatar));
        r.transitions.push(Transition {
            prev: r.frames.len() - 2,
            cur: r.frames.len() - 1,
            action,
        });
        if step.done {
            let (s, f) = world.reset(rng.random());
            state = s;
            r.frames.push(f);
            r.truth.push(truth(state.avatar));
        }
    }
    r
}

fn mean_distance(adm: &Adm, replay: &Replay) -> f64 {
    let refs: Vec<&Frame> = replay.frames.iter().collect();
    let maps = adm.attention(&refs).unwrap();
    maps.iter()
        .zip(&replay.truth)
        .map(|(m, &t)| localization_distance(localize(m, None).0, t))
        .sum::<f64>()
        / maps.len() as f64
}

/// Training steps until the mean held-out distance drops to `threshold`,
/// or `cap` if it never does.
fn steps_to_localize(losses: LossTerms, seed: u64, train: &Replay, held: &Replay, threshold: f64, cap: usize) -> usize {
    let mut cfg = AdmConfig::small();
    cfg.losses = losses;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adm = Adm::new(cfg, [36, 36, 3], NUM_ACTIONS, &mut rng).unwrap();
    let every = 20;
    for step in 0..cap {
        if step % every == 0 && mean_distance(&adm, held) <= threshold {
            return step;
        }
        let mut batch = AdmBatch::default();
        for _ in 0..32 {
            let t = train.transitions[rng.random_range(0..train.transitions.len())];
            let prev = batch.push_frame(train.frames[t.prev].clone(), 0);
            let cur = batch.push_frame(train.frames[t.cur].clone(), 0);
            batch.transitions.push(Transition { prev, cur, action: t.action });
        }
        adm.train_step(&batch).unwrap();
    }
    cap
}

#[test]
fn full_dynamics_loss_localizes_no_slower_than_action_loss_alone() {
    let world = World::new(preset("corridor").unwrap()).unwrap();
    let full = LossTerms { cell: true, entropy: true };
    let action_only = LossTerms { cell: false, entropy: false };
    let (mut with_full, mut with_action) = (0usize, 0usize);
    let cap = 2000;
    for seed in 0..5 {
        let train = biased_replay(&world, 100 + seed, 2000, 0.6);
        // uniform play for scoring, so parking on the right wall is no help
        let held = biased_replay(&world, 200 + seed, 150, 0.2);
        with_full += steps_to_localize(full, seed, &train, &held, 2.0, cap);
        with_action += steps_to_localize(action_only, seed, &train, &held, 2.0, cap);
    }
    assert!(
        with_full < 5 * cap && with_full <= with_action,
        "mean steps to localize: full {} vs action-only {}",
        with_full as f64 / 5.0,
        with_action as f64 / 5.0
    );
}

/// 8-pixel frames on a 4×4 grid so every policy parameter can be
/// perturbed numerically.
fn tiny_world() -> WorldConfig {
    WorldConfig {
        frame_px: 8,
        grid: 4,
        rooms: vec![room(&["####", "#S.#", "#.K#", "####"])],
        doors: vec![],
        items: vec![ItemSpec {
            room: 0,
            cell: Cell::new(2, 2),
            value: 1.0,
            terminal: true,
        }],
        distractors: vec![],
        start_room: 0,
        sticky_prob: 0.0,
        max_steps: 3,
    }
}

#[test]
fn trainer_gradient_on_a_collected_rollout() {
    let world = World::new(tiny_world()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = TrainerConfig {
        actors: 2,
        rollout: 2,
        beta_bonus: 0.5,
        ..TrainerConfig::a2c()
    };
    let pcfg = PolicyConfig {
        torso: vec![ConvSpec::new(3, 2, 2, 0)],
        hidden: 6,
        frame_stack: 2,
    };
    let mut policy = Policy::new(pcfg, [8, 8], NUM_ACTIONS, &mut rng).unwrap();
    // move every parameter off zero so no unit sits on a ReLU kink
    let ids: Vec<_> = policy.params().ids().collect();
    for id in ids {
        for v in policy.params_mut().value_mut(id).data_mut() {
            *v += rng.random_range(0.05..0.2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
    let mut actors: Vec<Actor> = (0..2).map(|i| Actor::new(&world, 3, i, 2)).collect();
    let mut explorer = Explorer {
        adm: None,
        projector: None,
        clusters: None,
        counter: VisitCounter::new(),
        psi: PsiComponents::default(),
    };
    let ro = collect_rollout(&world, &mut actors, &policy, &mut explorer, &cfg, None, &mut rng, false).unwrap();
    assert_eq!(ro.buffer.len(), 4);
    assert!(ro.buffer.bonuses.iter().all(|&b| b > 0.0));
    let buf = &ro.buffer;
    let ret = compute_returns(&buf.rewards, &buf.values, &buf.dones, &buf.bootstrap, cfg.gamma, cfg.return_mode()).unwrap();
    let all: Vec<usize> = (0..buf.len()).collect();
    let obs = buf.observation_batch(&all);
    let mut params = policy.params().clone();
    let err = check_param_gradients(&mut params, 1e-5, 1e-6, |g, p| {
        Ok(a2c_loss(g, &policy, p, obs.clone(), &buf.actions, &ret.returns, &ret.advantages, cfg.entropy_coef, cfg.value_coef)
            .unwrap()
            .total)
    })
    .unwrap();
    assert!(err <= 1e-4, "relative error {err:e}");
}
