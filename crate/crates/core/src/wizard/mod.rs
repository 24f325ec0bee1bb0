//! The wizard: a Q-network trained by episodic Q-learning with shaped
//! rewards, and the greedy positional policy it induces.

pub mod qnet;

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{self, Action, GridConfig, GridState, StepOutcome};
use crate::policy::Policy;
use crate::rng::{self, SimRng};
pub use qnet::{argmax, Adam, QNet, SgdMomentum, Transition};

/// Reward for collecting a passenger.
pub const PICKUP_REWARD: f64 = 100.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid grid: {0}")]
    Grid(#[from] plant::PlantError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite TD loss {loss} at episode {episode}, step {step}; lower the learning rate or reward scale")]
    NonFinite { episode: usize, step: usize, loss: f64 },
}

/// Shaped reward of one transition: the pickup bonus, otherwise the largest
/// change in inverse Manhattan distance over all passengers.
pub fn shaped_reward(s: &GridState, outcome: &StepOutcome) -> f64 {
    if outcome.collected.is_some() {
        return PICKUP_REWARD;
    }
    (0..s.passengers.len())
        .map(|i| {
            let before = s.manhattan(i) as f64;
            let after = outcome.next.manhattan(i) as f64;
            1.0 / after - 1.0 / before
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    SgdMomentum,
}

enum Opt {
    Adam(Adam),
    Sgd(SgdMomentum),
}

impl Opt {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Opt::Adam(o) => o.step(params, grads),
            Opt::Sgd(o) => o.step(params, grads),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub gamma: f64,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Only used by `Optimizer::SgdMomentum`.
    pub momentum: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all training steps over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Gradient step every this many environment steps.
    pub train_every: usize,
    /// Environment steps collected before the first gradient step.
    pub warmup: usize,
    /// Target network refresh period, in gradient steps.
    pub target_sync: usize,
    /// Multiplier applied to shaped rewards before the TD update.
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            steps_per_episode: 1000,
            gamma: 0.9,
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            replay_capacity: 50_000,
            batch_size: 32,
            train_every: 1,
            warmup: 1_000,
            target_sync: 500,
            reward_scale: 0.01,
            hidden: vec![200, 100],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie strictly inside (0, 1)");
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.train_every == 0 {
            return bad("batch_size, replay_capacity and train_every must be positive");
        }
        if self.batch_size > self.replay_capacity {
            return bad("batch_size exceeds replay_capacity");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }

    fn epsilon(&self, global_step: usize) -> f64 {
        let total = (self.episodes * self.steps_per_episode) as f64;
        let horizon = (total * self.epsilon_decay_fraction).max(1.0);
        let frac = (global_step as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// A trained Q-network bound to the grid it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wizard {
    pub qnet: QNet,
    pub grid: GridConfig,
    /// Features are divided by this before entering the network.
    pub input_scale: f64,
    pub seed: u64,
}

impl Wizard {
    pub fn new(qnet: QNet, grid: GridConfig, seed: u64) -> Self {
        let input_scale = grid.n as f64;
        Wizard { qnet, grid, input_scale, seed }
    }

    pub fn input(&self, features: &[i32]) -> Vec<f64> {
        features.iter().map(|&f| f as f64 / self.input_scale).collect()
    }

    pub fn q_values(&self, s: &GridState) -> Vec<f64> {
        self.qnet.forward(&self.input(&s.features()))
    }

    /// Greedy action from a feature vector.
    pub fn action_for_features(&self, features: &[i32]) -> Action {
        let q = self.qnet.forward(&self.input(features));
        Action::ALL[argmax(&q)]
    }

    /// `argmax_a Q(features(s), a)`, ties broken by canonical action order.
    pub fn policy(&self, s: &GridState) -> Action {
        self.action_for_features(&s.features())
    }
}

impl Policy for Wizard {
    fn act(&self, s: &GridState, _rng: &mut SimRng) -> Action {
        self.policy(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub mean_reward: f64,
    pub pickups: usize,
    pub epsilon: f64,
    pub mean_loss: f64,
}

/// Fixed-capacity ring buffer of transitions.
struct Replay {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl Replay {
    fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    fn sample(&self, n: usize, rng: &mut SimRng) -> Vec<Transition> {
        if n >= self.items.len() {
            // most recent transitions; also covers the replay-disabled setting
            return self.items.iter().rev().take(n).cloned().collect();
        }
        (0..n).map(|_| self.items[rng.gen_range(0..self.items.len())].clone()).collect()
    }
}

/// ε-greedy Q-learning with experience replay and a periodically synced
/// target network. Deterministic given `tc.seed`.
pub fn train(cfg: &GridConfig, tc: &TrainConfig) -> Result<(Wizard, Vec<EpisodeLog>), TrainError> {
    cfg.validate()?;
    tc.validate()?;
    let mut init_rng = rng::stream(tc.seed, "init", 0);
    let mut dims = vec![cfg.num_features()];
    dims.extend(&tc.hidden);
    dims.push(Action::COUNT);
    let mut wizard = Wizard::new(QNet::new(&dims, &mut init_rng), cfg.clone(), tc.seed);
    let mut target = wizard.qnet.clone();
    let np = wizard.qnet.params().len();
    let mut opt = match tc.optimizer {
        Optimizer::Adam => Opt::Adam(Adam::new(tc.learning_rate, np)),
        Optimizer::SgdMomentum => Opt::Sgd(SgdMomentum::new(tc.learning_rate, tc.momentum, np)),
    };
    let mut replay = Replay { items: VecDeque::with_capacity(tc.replay_capacity), capacity: tc.replay_capacity };
    let mut explore_rng = rng::stream(tc.seed, "explore", 0);
    let mut sample_rng = rng::stream(tc.seed, "replay", 0);
    let mut logs = Vec::with_capacity(tc.episodes);
    let mut global = 0usize;
    let mut updates = 0usize;
    for episode in 0..tc.episodes {
        let mut env_rng = rng::stream(tc.seed, "train", episode as u64);
        let mut s = plant::random_state(cfg, &mut env_rng);
        let mut input = wizard.input(&s.features());
        let (mut reward_sum, mut pickups, mut loss_sum, mut loss_n) = (0.0, 0usize, 0.0, 0usize);
        let eps = tc.epsilon(global);
        for step in 0..tc.steps_per_episode {
            let epsilon = tc.epsilon(global);
            let a = if explore_rng.gen::<f64>() < epsilon {
                Action::ALL[explore_rng.gen_range(0..Action::COUNT)]
            } else {
                Action::ALL[argmax(&wizard.qnet.forward(&input))]
            };
            let out = plant::step(cfg, &s, a, &mut env_rng);
            let r = shaped_reward(&s, &out);
            reward_sum += r;
            pickups += usize::from(out.collected.is_some());
            let next_input = wizard.input(&out.next.features());
            replay.push(Transition { input, action: a, reward: r * tc.reward_scale, next_input: next_input.clone() });
            global += 1;
            if global >= tc.warmup.max(tc.batch_size) && global.is_multiple_of(tc.train_every) {
                let batch = replay.sample(tc.batch_size, &mut sample_rng);
                let (loss, grads) = wizard.qnet.td_loss_and_grad(&target, &batch, tc.gamma);
                if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(TrainError::NonFinite { episode, step, loss });
                }
                opt.step(wizard.qnet.params_mut(), &grads);
                loss_sum += loss;
                loss_n += 1;
                updates += 1;
                if updates.is_multiple_of(tc.target_sync.max(1)) {
                    target = wizard.qnet.clone();
                }
            }
            s = out.next;
            input = next_input;
        }
        let log = EpisodeLog {
            mean_reward: reward_sum / tc.steps_per_episode.max(1) as f64,
            pickups,
            epsilon: eps,
            mean_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 },
        };
        log::debug!(
            "episode {episode}: mean reward {:.3}, pickups {}, eps {:.3}, loss {:.5}",
            log.mean_reward,
            log.pickups,
            log.epsilon,
            log.mean_loss
        );
        logs.push(log);
    }
    Ok((wizard, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::Cell;
    use crate::policy::{self, Chaser, RandomPolicy};
    use crate::par::Exec;

    fn c(x: i32, y: i32) -> Cell {
        Cell::new(x, y)
    }

    #[test]
    fn shaped_reward_cases() {
        let cfg = GridConfig::new(5, 1);
        let s = GridState::new(c(0, 0), vec![c(0, 1)]);
        let out = plant::step(&cfg, &s, Action::Up, &mut rng::from_seed(0));
        assert_eq!(shaped_reward(&s, &out), 100.0);

        let s = GridState::new(c(0, 0), vec![c(2, 2)]);
        let out = plant::step(&cfg, &s, Action::Up, &mut rng::from_seed(0));
        assert!((shaped_reward(&s, &out) - (1.0 / 3.0 - 1.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn moving_away_is_penalized() {
        // every one-passenger move on 5x5 that increases the distance
        let cfg = GridConfig::new(5, 1);
        let mut checked = 0;
        for s in plant::all_states(&cfg) {
            for a in Action::ALL {
                let out = plant::step(&cfg, &s, a, &mut rng::from_seed(0));
                if out.collected.is_none() && out.next.manhattan(0) > s.manhattan(0) {
                    assert!(shaped_reward(&s, &out) < 0.0);
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn policy_tie_break_and_factorization() {
        let cfg = GridConfig::new(5, 1);
        let zero = Wizard::new(QNet::zeros(&[2, 4, 4]), cfg.clone(), 0);
        assert_eq!(zero.policy(&GridState::new(c(1, 1), vec![c(3, 3)])), Action::Up);

        let mut biased = QNet::zeros(&[2, 4, 4]);
        let (_, b) = biased.layer_mut(1);
        b[Action::Left.index()] = 1.0;
        let w = Wizard::new(biased, cfg.clone(), 0);
        assert_eq!(w.policy(&GridState::new(c(1, 1), vec![c(3, 3)])), Action::Left);

        let mut r = rng::from_seed(1);
        let w = Wizard::new(QNet::new(&[2, 8, 4], &mut r), cfg, 0);
        let a = GridState::new(c(0, 0), vec![c(2, 1)]);
        let b = GridState::new(c(2, 3), vec![c(4, 4)]);
        assert_eq!(a.features(), b.features());
        assert_eq!(w.policy(&a), w.policy(&b));
    }

    #[test]
    fn invalid_gamma_rejected() {
        let tc = TrainConfig { gamma: 1.0, ..TrainConfig::default() };
        assert!(matches!(tc.validate(), Err(TrainError::Config(_))));
    }

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            episodes: 300,
            steps_per_episode: 200,
            hidden: vec![32, 16],
            learning_rate: 5e-3,
            warmup: 500,
            replay_capacity: 20_000,
            target_sync: 200,
            epsilon_decay_fraction: 0.4,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let cfg = GridConfig::new(4, 1);
        let tc = TrainConfig { episodes: 5, steps_per_episode: 100, hidden: vec![8], warmup: 50, ..small_config(11) };
        let (a, la) = train(&cfg, &tc).unwrap();
        let (b, lb) = train(&cfg, &tc).unwrap();
        assert_eq!(a.qnet.params(), b.qnet.params());
        assert_eq!(la, lb);
    }

    #[test]
    fn full_exploration_behaves_like_random() {
        let cfg = GridConfig::new(5, 1);
        let tc = TrainConfig {
            episodes: 20,
            steps_per_episode: 200,
            epsilon_start: 1.0,
            epsilon_end: 1.0,
            hidden: vec![8],
            warmup: 100,
            ..small_config(2)
        };
        let (_, logs) = train(&cfg, &tc).unwrap();
        let trained: f64 = logs.iter().map(|l| l.pickups as f64).sum::<f64>() / logs.len() as f64;
        let random = policy::pickups_per_episode(Exec::Sequential, &cfg, &RandomPolicy, 200, 200, 3);
        let random = random.iter().sum::<usize>() as f64 / random.len() as f64;
        assert!((trained - random).abs() < 0.35 * random + 1.0, "{trained} vs {random}");
    }

    #[test]
    fn learns_single_passenger_chasing() {
        let cfg = GridConfig::new(5, 1);
        let (w, _) = train(&cfg, &small_config(7)).unwrap();
        let wiz = policy::pickups_per_episode(Exec::Parallel, &cfg, &w, 50, 200, 99);
        let oracle = policy::pickups_per_episode(Exec::Parallel, &cfg, &Chaser, 50, 200, 99);
        let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
        let (wiz, oracle) = (mean(&wiz), mean(&oracle));
        assert!(wiz >= 25.0, "wizard collected {wiz}");
        assert!(wiz >= 0.7 * oracle, "wizard {wiz} vs oracle {oracle}");
    }

    #[test]
    fn converges_without_replay_on_tiny_plant() {
        let cfg = GridConfig::new(3, 1);
        let tc = TrainConfig {
            replay_capacity: 1,
            batch_size: 1,
            warmup: 1,
            episodes: 200,
            steps_per_episode: 100,
            learning_rate: 5e-3,
            momentum: 0.0,
            target_sync: 1,
            ..small_config(5)
        };
        let (w, _) = train(&cfg, &tc).unwrap();
        let ret = |p: &dyn Fn(&GridState) -> Action| {
            let mut total = 0.0;
            for i in 0..50u64 {
                let mut r = rng::stream(17, "eval", i);
                let mut s = plant::random_state(&cfg, &mut r);
                for _ in 0..100 {
                    let out = plant::step(&cfg, &s, p(&s), &mut r);
                    total += shaped_reward(&s, &out);
                    s = out.next;
                }
            }
            total
        };
        let wiz = ret(&|s| w.policy(s));
        let oracle = ret(&|s| Chaser::choose(s));
        assert!(wiz >= 0.9 * oracle, "wizard return {wiz} vs oracle {oracle}");
    }
}
