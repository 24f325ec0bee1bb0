//! Executable controllers lowered from solved games, and the shield
//! baseline.

use serde::{Deserialize, Serialize};

use super::advice::{solve_advice, AdviceSolution, Value};
use crate::arena::{SpecMonitor, TaxiArena};
use crate::magicbook::{book_action, TreePolicy};
use crate::plant::{self, Action, GridConfig, GridState};
use crate::policy::{Episode, Policy};
use crate::rng::SimRng;

/// Plays the advice-game strategy on concrete states, tracking the monitor
/// and the remaining horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub grid: GridConfig,
    pub monitor: SpecMonitor,
    pub book: TreePolicy,
    /// Advice of each move class, per vertex.
    pub classes: Vec<Vec<Action>>,
    pub solution: AdviceSolution,
}

impl Controller {
    pub fn synthesize(arena: &TaxiArena, book: &TreePolicy, horizon: usize) -> Controller {
        let solution = solve_advice(&arena.arena, horizon);
        Controller {
            grid: arena.grid.clone(),
            monitor: arena.monitor.clone(),
            book: book.clone(),
            classes: arena.arena.moves.iter().map(|ms| ms.iter().map(|m| m.advice).collect()).collect(),
            solution,
        }
    }

    pub fn horizon(&self) -> usize {
        self.solution.horizon
    }

    pub fn vertex(&self, s: &GridState, m: usize) -> usize {
        self.grid.cell_index(s.taxi) * self.monitor.num_states() + m
    }

    /// Guaranteed agreement from `start` over `h` steps, monitor fresh.
    pub fn x_star(&self, start: &GridState, h: usize) -> Value {
        self.solution.value(self.vertex(start, self.monitor.initial()), h)
    }

    /// Action at `s` under monitor state `m` with `h ≥ 1` steps to go.
    pub fn act(&self, s: &GridState, m: usize, h: usize) -> Action {
        let v = self.vertex(s, m);
        let advice = book_action(&self.book, s);
        let class = self.classes[v]
            .iter()
            .position(|&a| a == advice)
            .expect("every reachable region is a legal move");
        self.solution.action(v, class, h.clamp(1, self.horizon()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub episode: Episode,
    pub gas_visits: usize,
    /// Steps on which the monitor left its safe set.
    pub violations: usize,
    /// Positions where the controller played the book's action.
    pub agree: usize,
    pub x_star: Value,
}

/// Closed loop from `start` for `steps` steps. The remaining horizon counts
/// down from `min(steps, H)` and restarts at `H` once exhausted; after a
/// violation the monitor restarts too.
pub fn run_controller(ctrl: &Controller, start: GridState, steps: usize, rng: &mut SimRng) -> RunReport {
    let horizon = ctrl.horizon();
    let x_star = ctrl.x_star(&start, steps.min(horizon));
    let mut m = ctrl.monitor.initial();
    let mut s = start;
    let (mut states, mut actions) = (Vec::with_capacity(steps + 1), Vec::with_capacity(steps));
    let (mut pickups, mut wall_hits, mut gas_visits, mut violations) = (0, 0, 0, 0);
    let mut left = steps.min(horizon);
    for _ in 0..steps {
        if left == 0 {
            left = horizon;
        }
        let a = ctrl.act(&s, m, left);
        let out = plant::step(&ctrl.grid, &s, a, rng);
        pickups += usize::from(out.collected.is_some());
        wall_hits += usize::from(out.wall_hit);
        if let SpecMonitor::Timer { gas, .. } = ctrl.monitor {
            gas_visits += usize::from(out.next.taxi == gas);
        }
        m = match ctrl.monitor.step(m, out.next.taxi) {
            Some(m2) => m2,
            None => {
                violations += 1;
                ctrl.monitor.initial()
            }
        };
        states.push(s);
        actions.push(a);
        s = out.next;
        left -= 1;
    }
    states.push(s);
    let agree = agree_count(&ctrl.book, &states, &actions);
    RunReport { episode: Episode { states, actions, pickups, wall_hits }, gas_visits, violations, agree, x_star }
}

/// Positions `i` with `actions[i] == book_action(states[i])`.
pub fn agree_count(book: &TreePolicy, states: &[GridState], actions: &[Action]) -> usize {
    states.iter().zip(actions).filter(|(s, &a)| book_action(book, s) == a).count()
}

/// Plays `inner` unless that hits a wall, then the first action in
/// canonical order that does not.
pub struct Shield<'a, P> {
    pub inner: &'a P,
    pub grid: &'a GridConfig,
}

impl<'a, P: Policy> Shield<'a, P> {
    pub fn new(inner: &'a P, grid: &'a GridConfig) -> Self {
        Shield { inner, grid }
    }

    pub fn correct(&self, s: &GridState, a: Action) -> Action {
        if !plant::hits_wall(self.grid, s.taxi, a) {
            return a;
        }
        Action::ALL.into_iter().find(|&b| !plant::hits_wall(self.grid, s.taxi, b)).unwrap_or(a)
    }
}

impl<P: Policy> Policy for Shield<'_, P> {
    fn act(&self, s: &GridState, rng: &mut SimRng) -> Action {
        let a = self.inner.act(s, rng);
        self.correct(s, a)
    }
}
