//! Finite two-player arenas.
//!
//! A round at vertex `v`: Player 2 picks one of the moves listed at `v`
//! (each move carries the action the book advises), then Player 1 picks an
//! action. The successor is a vertex or the absorbing `Violation` sink.
//! Player 1 earns 1 when the action equals the advice.

mod multi;
mod taxi;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{Action, Cell, PlantError};
use crate::rng::SimRng;

pub use multi::{build_multi_arena, Legality, MultiArena, MultiConfig, MultiVertex};
pub use taxi::{build_arena, leaf_regions, ArenaOptions, Region, SpecMonitor, TaxiArena};

#[derive(Debug, Error, PartialEq)]
pub enum ArenaError {
    #[error(transparent)]
    Grid(#[from] PlantError),
    #[error("state space has {states} states, above the limit of {limit}")]
    TooLarge { states: u128, limit: u128 },
    #[error("cell {0} has no concrete states")]
    EmptyCell(Cell),
    #[error("support of cell {cell} under {action} spans several abstract cells")]
    DeltaNotClosed { cell: Cell, action: Action },
    #[error("monitor: {0}")]
    Monitor(String),
    #[error("book does not fit the grid: {0}")]
    Book(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Succ {
    Vertex(u32),
    Violation,
}

/// One Player-2 move class: every region with this advice and this
/// successor row behaves identically in the game.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub advice: Action,
    /// Successor per action, indexed by `Action::index`.
    pub next: [Succ; 4],
}

impl Move {
    pub fn reward(&self, a: Action) -> u32 {
        u32::from(a == self.advice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Arena {
    /// Player-2 moves per vertex. A vertex without moves holds no concrete
    /// state and is never entered.
    pub moves: Vec<Vec<Move>>,
}

impl Arena {
    pub fn num_vertices(&self) -> usize {
        self.moves.len()
    }

    pub fn num_moves(&self) -> usize {
        self.moves.iter().map(Vec::len).sum()
    }

    /// Class of the move with this advice at `v`, if any.
    pub fn class_of(&self, v: usize, advice: Action) -> Option<usize> {
        self.moves[v].iter().position(|m| m.advice == advice)
    }

    /// Random arena for solver testing: every vertex gets between 1 and
    /// `max_moves` moves with random advice and random successors, a
    /// `violation_p` fraction of which lead to the sink.
    pub fn random(vertices: usize, max_moves: usize, violation_p: f64, rng: &mut SimRng) -> Arena {
        let moves = (0..vertices)
            .map(|_| {
                let k = rng.gen_range(1..=max_moves);
                (0..k)
                    .map(|_| Move {
                        advice: Action::ALL[rng.gen_range(0..4)],
                        next: std::array::from_fn(|_| {
                            if rng.gen_bool(violation_p) {
                                Succ::Violation
                            } else {
                                Succ::Vertex(rng.gen_range(0..vertices as u32))
                            }
                        }),
                    })
                    .collect()
            })
            .collect();
        Arena { moves }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn random_arena_shape() {
        let mut r = rng::from_seed(4);
        let a = Arena::random(30, 3, 0.1, &mut r);
        assert_eq!(a.num_vertices(), 30);
        for ms in &a.moves {
            assert!((1..=3).contains(&ms.len()));
            for m in ms {
                for s in m.next {
                    if let Succ::Vertex(v) = s {
                        assert!(v < 30);
                    }
                }
            }
        }
    }

    #[test]
    fn reward_is_agreement() {
        let m = Move { advice: Action::Left, next: [Succ::Violation; 4] };
        assert_eq!(m.reward(Action::Left), 1);
        assert_eq!(m.reward(Action::Up), 0);
    }
}
