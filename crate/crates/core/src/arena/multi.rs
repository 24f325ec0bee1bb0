//! Bus and taxi on one grid. The bus is ours; the taxi follows its book.
//!
//! A vertex is (bus cell, taxi cell, stage, fresh). `stage` 0 means the bus
//! is heading to station A, 1 to station B; it flips on arrival and `fresh`
//! marks the vertex entered by a flip. Each round the taxi commits to an
//! action from its legality set, then the bus answers. Both end on the same
//! cell is a crash.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ArenaError;
use crate::magicbook::TreePolicy;
use crate::par::{self, Exec};
use crate::plant::{self, Action, Cell, GridConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiConfig {
    /// Grid shared by both vehicles; `k` passengers belong to the taxi.
    pub grid: GridConfig,
    pub station_a: Cell,
    pub station_b: Cell,
}

impl MultiConfig {
    pub fn new(grid: GridConfig, station_a: Cell, station_b: Cell) -> Self {
        MultiConfig { grid, station_a, station_b }
    }

    pub fn validate(&self) -> Result<(), ArenaError> {
        self.grid.validate()?;
        for s in [self.station_a, self.station_b] {
            if !self.grid.is_free(s) {
                return Err(ArenaError::Monitor(format!("station {s} is not a free cell")));
            }
        }
        if self.station_a == self.station_b {
            return Err(ArenaError::Monitor("stations coincide".into()));
        }
        Ok(())
    }
}

/// Which taxi actions Player 2 may pick.
#[derive(Debug, Clone, PartialEq)]
pub enum Legality<'a> {
    /// Any action everywhere.
    Adversarial,
    /// Only actions the book prescribes for some state with the taxi there.
    Book(&'a TreePolicy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiVertex {
    pub bus: Cell,
    pub taxi: Cell,
    pub stage: u8,
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiArena {
    pub cfg: MultiConfig,
    /// Legal taxi actions per taxi cell index, canonical order.
    pub legal: Vec<Vec<Action>>,
}

/// Legality sets per taxi cell; wall cells get none.
pub fn build_multi_arena(cfg: &MultiConfig, legality: Legality, exec: Exec) -> Result<MultiArena, ArenaError> {
    cfg.validate()?;
    let g = &cfg.grid;
    if let Legality::Book(b) = legality {
        b.validate(g.num_features()).map_err(|e| ArenaError::Book(e.to_string()))?;
    }
    let cells: Vec<Cell> = (0..g.num_cells()).map(|i| g.cell_at(i)).collect();
    let legal = par::map_slice(exec, &cells, |&c| {
        if !g.is_free(c) {
            return Ok(Vec::new());
        }
        match legality {
            Legality::Adversarial => Ok(Action::ALL.to_vec()),
            Legality::Book(book) => {
                let mut set = BTreeSet::new();
                let mut f = Vec::new();
                plant::visit_states_with_taxi(g, c, |s| {
                    if set.len() < 4 {
                        f.clear();
                        s.write_features(&mut f);
                        set.insert(book.predict(&f));
                    }
                });
                if set.is_empty() {
                    Err(ArenaError::EmptyCell(c))
                } else {
                    Ok(set.into_iter().collect())
                }
            }
        }
    });
    Ok(MultiArena { cfg: cfg.clone(), legal: legal.into_iter().collect::<Result<_, _>>()? })
}

impl MultiArena {
    fn cells(&self) -> usize {
        self.cfg.grid.num_cells()
    }

    pub fn num_vertices(&self) -> usize {
        self.cells() * self.cells() * 4
    }

    pub fn id(&self, v: MultiVertex) -> usize {
        let g = &self.cfg.grid;
        ((g.cell_index(v.bus) * self.cells() + g.cell_index(v.taxi)) * 2 + v.stage as usize) * 2 + v.fresh as usize
    }

    pub fn vertex(&self, id: usize) -> MultiVertex {
        let g = &self.cfg.grid;
        let fresh = id % 2 == 1;
        let stage = ((id / 2) % 2) as u8;
        let rest = id / 4;
        MultiVertex { bus: g.cell_at(rest / self.cells()), taxi: g.cell_at(rest % self.cells()), stage, fresh }
    }

    /// Starting vertex for a bus heading to station A.
    pub fn initial(&self, bus: Cell, taxi: Cell) -> MultiVertex {
        self.advance_stage(MultiVertex { bus, taxi, stage: 0, fresh: false })
    }

    fn advance_stage(&self, mut v: MultiVertex) -> MultiVertex {
        let goal = if v.stage == 0 { self.cfg.station_a } else { self.cfg.station_b };
        v.fresh = v.bus == goal;
        if v.fresh {
            v.stage ^= 1;
        }
        v
    }

    pub fn legal_at(&self, v: MultiVertex) -> &[Action] {
        &self.legal[self.cfg.grid.cell_index(v.taxi)]
    }

    /// Vertex reached when the taxi plays `a2` and the bus `a1`.
    pub fn succ(&self, v: MultiVertex, a2: Action, a1: Action) -> MultiVertex {
        let g = &self.cfg.grid;
        let bus = plant::move_taxi(g, v.bus, a1).0;
        let taxi = plant::move_taxi(g, v.taxi, a2).0;
        self.advance_stage(MultiVertex { bus, taxi, stage: v.stage, fresh: false })
    }

    /// Occupied, non-crash vertices: both vehicles on free, distinct cells.
    pub fn is_safe(&self, v: MultiVertex) -> bool {
        let g = &self.cfg.grid;
        v.bus != v.taxi && g.is_free(v.bus) && g.is_free(v.taxi)
    }

    /// Recurrence target: a round trip A then B has just completed.
    pub fn is_target(&self, v: MultiVertex) -> bool {
        v.fresh && v.stage == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magicbook::{DecisionTree, Forest};

    fn cfg() -> MultiConfig {
        MultiConfig::new(GridConfig::new(4, 1), Cell::new(0, 0), Cell::new(3, 3))
    }

    #[test]
    fn ids_round_trip() {
        let m = build_multi_arena(&cfg(), Legality::Adversarial, Exec::Sequential).unwrap();
        assert_eq!(m.num_vertices(), 16 * 16 * 4);
        for id in 0..m.num_vertices() {
            assert_eq!(m.id(m.vertex(id)), id);
        }
    }

    #[test]
    fn stages_alternate() {
        let m = build_multi_arena(&cfg(), Legality::Adversarial, Exec::Sequential).unwrap();
        let v = m.initial(Cell::new(1, 0), Cell::new(3, 0));
        assert_eq!((v.stage, v.fresh), (0, false));
        let v = m.succ(v, Action::Up, Action::Left);
        assert_eq!((v.bus, v.stage, v.fresh), (Cell::new(0, 0), 1, true));
        let v = m.succ(v, Action::Up, Action::Down);
        assert_eq!((v.stage, v.fresh), (1, false));
        assert!(!m.is_target(v));
        let mut v = MultiVertex { bus: Cell::new(3, 2), taxi: Cell::new(0, 3), stage: 1, fresh: false };
        v = m.succ(v, Action::Down, Action::Up);
        assert!(m.is_target(v));
        assert!(m.is_safe(v));
        let crash = m.succ(MultiVertex { bus: Cell::new(1, 1), taxi: Cell::new(2, 1), stage: 0, fresh: false }, Action::Left, Action::Down);
        assert!(m.is_safe(crash));
        let crash = m.succ(MultiVertex { bus: Cell::new(1, 1), taxi: Cell::new(2, 2), stage: 0, fresh: false }, Action::Left, Action::Up);
        assert!(!m.is_safe(crash));
    }

    #[test]
    fn book_legality() {
        let right = Forest::single(DecisionTree::leaf(Action::Right));
        let m = build_multi_arena(&cfg(), Legality::Book(&right), Exec::Parallel).unwrap();
        assert!(m.legal.iter().all(|l| l == &vec![Action::Right]));
        let adv = build_multi_arena(&cfg(), Legality::Adversarial, Exec::Parallel).unwrap();
        for (a, b) in m.legal.iter().zip(&adv.legal) {
            assert!(a.iter().all(|x| b.contains(x)));
        }
    }
}
