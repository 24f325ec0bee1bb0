//! Safety plus recurrence for the bus against a book-restricted taxi.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::{MultiArena, MultiVertex};
use crate::magicbook::{book_action, TreePolicy};
use crate::plant::{self, Action, Cell, GridState};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no bus strategy wins from {0:?}")]
pub struct Unrealizable(pub MultiVertex);

const NONE: u8 = u8::MAX;

/// Positional bus strategy: answer per (vertex, taxi action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStrategy {
    pub winning: Vec<bool>,
    /// `answers[v][a2]`, an action index or 255 outside the winning region.
    pub answers: Vec<[u8; 4]>,
}

impl MultiStrategy {
    pub fn answer(&self, m: &MultiArena, v: MultiVertex, a2: Action) -> Option<Action> {
        let a = self.answers[m.id(v)][a2.index()];
        (a != NONE).then(|| Action::ALL[a as usize])
    }

    pub fn wins_from(&self, m: &MultiArena, v: MultiVertex) -> bool {
        self.winning[m.id(v)]
    }
}

/// Controllable predecessor of `x`: safe, and every legal taxi action has
/// a bus answer landing in `x`.
fn cpre(m: &MultiArena, safe: &[bool], x: &[bool]) -> Vec<bool> {
    (0..m.num_vertices())
        .map(|id| {
            if !safe[id] {
                return false;
            }
            let v = m.vertex(id);
            m.legal_at(v).iter().all(|&a2| Action::ALL.iter().any(|&a1| x[m.id(m.succ(v, a2, a1))]))
        })
        .collect()
}

/// `μY. Safe ∩ ((F ∩ CPre(Z)) ∪ CPre(Y))`, with the round each vertex joined.
fn reach_layers(m: &MultiArena, safe: &[bool], target: &[bool], z: &[bool]) -> (Vec<bool>, Vec<u32>) {
    let n = m.num_vertices();
    let base = cpre(m, safe, z);
    let mut y = vec![false; n];
    let mut rank = vec![u32::MAX; n];
    let mut round = 0;
    loop {
        let pre = cpre(m, safe, &y);
        let next: Vec<bool> = (0..n).map(|i| safe[i] && ((target[i] && base[i]) || pre[i])).collect();
        if next == y {
            return (y, rank);
        }
        for i in 0..n {
            if next[i] && !y[i] {
                rank[i] = round;
            }
        }
        y = next;
        round += 1;
    }
}

/// [`winning_strategy`], failing when `initial` is outside the winning
/// region.
pub fn solve_multiagent(m: &MultiArena, initial: MultiVertex) -> Result<MultiStrategy, Unrealizable> {
    let s = winning_strategy(m);
    if s.wins_from(m, initial) {
        Ok(s)
    } else {
        Err(Unrealizable(initial))
    }
}

/// Solve the Büchi game `□ safe ∧ □◇ target` by the nested fixpoint
/// `νZ. μY. Safe ∩ ((F ∩ CPre(Z)) ∪ CPre(Y))`.
pub fn winning_strategy(m: &MultiArena) -> MultiStrategy {
    let n = m.num_vertices();
    let safe: Vec<bool> = (0..n).map(|i| m.is_safe(m.vertex(i))).collect();
    let target: Vec<bool> = (0..n).map(|i| m.is_target(m.vertex(i))).collect();
    let mut z = safe.clone();
    let (winning, rank) = loop {
        let (y, rank) = reach_layers(m, &safe, &target, &z);
        if y == z {
            break (y, rank);
        }
        z = y;
    };
    let mut answers = vec![[NONE; 4]; n];
    for id in (0..n).filter(|&i| winning[i]) {
        let v = m.vertex(id);
        for &a2 in m.legal_at(v) {
            // targets may step anywhere inside the region, others must descend
            let ok = |w: usize| winning[w] && (target[id] || rank[w] < rank[id]);
            let best = Action::ALL
                .iter()
                .map(|&a1| (a1, m.id(m.succ(v, a2, a1))))
                .filter(|&(_, w)| ok(w))
                .min_by_key(|&(_, w)| rank[w])
                .map(|(a1, _)| a1)
                .expect("winning vertex has an answer");
            answers[id][a2.index()] = best.index() as u8;
        }
    }
    MultiStrategy { winning, answers }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MultiReport {
    pub crashes: usize,
    /// Completed A-then-B round trips.
    pub alternations: usize,
    pub taxi_pickups: usize,
    pub bus_path: Vec<Cell>,
}

/// Bus under `strat`, taxi under `taxi_book` on its own passenger plant.
pub fn run_multi(
    m: &MultiArena,
    strat: &MultiStrategy,
    taxi_book: &TreePolicy,
    bus: Cell,
    taxi: GridState,
    steps: usize,
    rng: &mut SimRng,
) -> MultiReport {
    let mut v = m.initial(bus, taxi.taxi);
    let mut s = taxi;
    let mut rep = MultiReport { bus_path: vec![bus], ..Default::default() };
    for _ in 0..steps {
        let a2 = book_action(taxi_book, &s);
        let Some(a1) = strat.answer(m, v, a2) else {
            rep.crashes += 1;
            break;
        };
        let out = plant::step(&m.cfg.grid, &s, a2, rng);
        rep.taxi_pickups += usize::from(out.collected.is_some());
        s = out.next;
        v = m.succ(v, a2, a1);
        debug_assert_eq!(v.taxi, s.taxi);
        rep.bus_path.push(v.bus);
        if !m.is_safe(v) {
            rep.crashes += 1;
            break;
        }
        rep.alternations += usize::from(m.is_target(v));
    }
    rep
}
