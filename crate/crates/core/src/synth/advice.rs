//! Finite-horizon "follow the advice" game: Player 1 must avoid the
//! violation sink and, subject to that, maximize guaranteed agreement.

use serde::{Deserialize, Serialize};

use crate::arena::{Arena, Succ};
use crate::plant::Action;

/// Guaranteed outcome of a subgame. `Violation` orders below every count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Violation,
    Agree(u32),
}

impl Value {
    fn plus(self, r: u32) -> Value {
        match self {
            Value::Violation => Value::Violation,
            Value::Agree(x) => Value::Agree(x + r),
        }
    }

    pub fn is_violation(self) -> bool {
        self == Value::Violation
    }

    pub fn count(self) -> Option<u32> {
        match self {
            Value::Violation => None,
            Value::Agree(x) => Some(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceSolution {
    pub horizon: usize,
    pub num_vertices: usize,
    /// `values[h * V + v]` for `h` in `0..=horizon`.
    values: Vec<Value>,
    /// Start of vertex `v`'s move classes in each strategy layer.
    offsets: Vec<usize>,
    /// `strategy[(h - 1) * C + offsets[v] + class]`, action index.
    strategy: Vec<u8>,
}

impl AdviceSolution {
    pub fn value(&self, v: usize, h: usize) -> Value {
        self.values[h * self.num_vertices + v]
    }

    /// Player 1's answer at `v` to move class `class` with `h ≥ 1` steps left.
    pub fn action(&self, v: usize, class: usize, h: usize) -> Action {
        assert!(h >= 1 && h <= self.horizon, "horizon {h} outside 1..={}", self.horizon);
        let c = *self.offsets.last().unwrap();
        Action::ALL[self.strategy[(h - 1) * c + self.offsets[v] + class] as usize]
    }
}

fn succ_value(prev: &[Value], s: Succ) -> Value {
    match s {
        Succ::Vertex(w) => prev[w as usize],
        Succ::Violation => Value::Violation,
    }
}

/// Backward induction over `horizon` rounds. Player 1's ties go to the
/// advised action, then to canonical order.
pub fn solve_advice(arena: &Arena, horizon: usize) -> AdviceSolution {
    let nv = arena.num_vertices();
    let mut offsets = Vec::with_capacity(nv + 1);
    let mut acc = 0;
    for ms in &arena.moves {
        offsets.push(acc);
        acc += ms.len();
    }
    offsets.push(acc);
    let mut values = Vec::with_capacity((horizon + 1) * nv);
    values.extend(arena.moves.iter().map(|ms| if ms.is_empty() { Value::Violation } else { Value::Agree(0) }));
    let mut strategy = vec![0u8; horizon * acc];
    for h in 1..=horizon {
        let prev = &values[(h - 1) * nv..h * nv];
        let mut layer = Vec::with_capacity(nv);
        for (v, ms) in arena.moves.iter().enumerate() {
            let mut worst: Option<Value> = None;
            for (c, m) in ms.iter().enumerate() {
                let order = std::iter::once(m.advice).chain(Action::ALL.into_iter().filter(|&a| a != m.advice));
                let (best_a, best) = order
                    .map(|a| (a, succ_value(prev, m.next[a.index()]).plus(m.reward(a))))
                    .reduce(|x, y| if y.1 > x.1 { y } else { x })
                    .unwrap();
                strategy[(h - 1) * acc + offsets[v] + c] = best_a.index() as u8;
                worst = Some(worst.map_or(best, |w| w.min(best)));
            }
            layer.push(worst.unwrap_or(Value::Violation));
        }
        values.extend(layer);
    }
    AdviceSolution { horizon, num_vertices: nv, values, offsets, strategy }
}

/// Plain game-tree recursion, exponential in `h`; the reference for
/// [`solve_advice`].
pub fn oracle_value(arena: &Arena, v: usize, h: usize) -> Value {
    let ms = &arena.moves[v];
    if ms.is_empty() {
        return Value::Violation;
    }
    if h == 0 {
        return Value::Agree(0);
    }
    ms.iter()
        .map(|m| {
            Action::ALL
                .iter()
                .map(|&a| match m.next[a.index()] {
                    Succ::Violation => Value::Violation,
                    Succ::Vertex(w) => oracle_value(arena, w as usize, h - 1).plus(m.reward(a)),
                })
                .max()
                .unwrap()
        })
        .min()
        .unwrap()
}

/// Worst case over Player 2 when Player 1 follows `sol` from `v` with `h`
/// rounds left.
pub fn strategy_guarantee(arena: &Arena, sol: &AdviceSolution, v: usize, h: usize) -> Value {
    let ms = &arena.moves[v];
    if ms.is_empty() {
        return Value::Violation;
    }
    if h == 0 {
        return Value::Agree(0);
    }
    ms.iter()
        .enumerate()
        .map(|(c, m)| {
            let a = sol.action(v, c, h);
            match m.next[a.index()] {
                Succ::Violation => Value::Violation,
                Succ::Vertex(w) => strategy_guarantee(arena, sol, w as usize, h - 1).plus(m.reward(a)),
            }
        })
        .min()
        .unwrap()
}
