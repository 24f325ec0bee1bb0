//! Positional policies and closed-loop rollouts.

use rand::Rng;

use crate::par::{self, Exec};
use crate::plant::{self, Action, GridConfig, GridState};
use crate::rng::{self, SimRng};

/// A positional controller. Deterministic policies ignore `rng`.
pub trait Policy: Sync {
    fn act(&self, s: &GridState, rng: &mut SimRng) -> Action;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, s: &GridState, rng: &mut SimRng) -> Action {
        (**self).act(s, rng)
    }
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _s: &GridState, rng: &mut SimRng) -> Action {
        Action::ALL[rng.gen_range(0..Action::COUNT)]
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn act(&self, _s: &GridState, _rng: &mut SimRng) -> Action {
        self.0
    }
}

/// Step toward the nearest passenger (lowest index on ties), closing the
/// horizontal gap first.
#[derive(Debug, Clone, Copy, Default)]
pub struct Chaser;

impl Chaser {
    pub fn choose(s: &GridState) -> Action {
        let target = (0..s.passengers.len())
            .min_by_key(|&i| (s.manhattan(i), i))
            .map(|i| s.passengers[i])
            .unwrap_or(s.taxi);
        let (dx, dy) = (target.x - s.taxi.x, target.y - s.taxi.y);
        if dx > 0 {
            Action::Right
        } else if dx < 0 {
            Action::Left
        } else if dy < 0 {
            Action::Down
        } else {
            Action::Up
        }
    }
}

impl Policy for Chaser {
    fn act(&self, s: &GridState, _rng: &mut SimRng) -> Action {
        Chaser::choose(s)
    }
}

/// Wrap any `Fn(&GridState) -> Action` as a deterministic policy.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&GridState) -> Action + Sync> Policy for FnPolicy<F> {
    fn act(&self, s: &GridState, _rng: &mut SimRng) -> Action {
        (self.0)(s)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Episode {
    pub states: Vec<GridState>,
    pub actions: Vec<Action>,
    pub pickups: usize,
    pub wall_hits: usize,
}

/// Run `policy` for `steps` steps from `start`. Policy and plant share `rng`.
pub fn rollout<P: Policy + ?Sized>(
    cfg: &GridConfig,
    policy: &P,
    start: GridState,
    steps: usize,
    rng: &mut SimRng,
) -> Episode {
    let mut states = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    let mut pickups = 0;
    let mut wall_hits = 0;
    let mut s = start;
    for _ in 0..steps {
        let a = policy.act(&s, rng);
        let out = plant::step(cfg, &s, a, rng);
        pickups += usize::from(out.collected.is_some());
        wall_hits += usize::from(out.wall_hit);
        states.push(s);
        actions.push(a);
        s = out.next;
    }
    states.push(s);
    Episode { states, actions, pickups, wall_hits }
}

/// Count pickups only, without recording the trajectory.
pub fn count_pickups<P: Policy + ?Sized>(
    cfg: &GridConfig,
    policy: &P,
    start: GridState,
    steps: usize,
    rng: &mut SimRng,
) -> usize {
    let mut s = start;
    let mut pickups = 0;
    for _ in 0..steps {
        let a = policy.act(&s, rng);
        let out = plant::step(cfg, &s, a, rng);
        pickups += usize::from(out.collected.is_some());
        s = out.next;
    }
    pickups
}

/// Pickup counts of `episodes` independent rollouts, each from a uniformly
/// random start drawn from sub-stream `("rollout", i)` of `seed`.
pub fn pickups_per_episode<P: Policy>(
    exec: Exec,
    cfg: &GridConfig,
    policy: &P,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Vec<usize> {
    par::map_range(exec, episodes, |i| {
        let mut r = rng::stream(seed, "rollout", i as u64);
        let start = plant::random_state(cfg, &mut r);
        count_pickups(cfg, policy, start, steps, &mut r)
    })
}
