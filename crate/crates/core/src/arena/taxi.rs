//! The taxi arena: abstract cells are (taxi cell, monitor state) pairs and
//! Player-2 moves are leaf regions of the book.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Arena, ArenaError, Move, Succ};
use crate::magicbook::{TreePath, TreePolicy};
use crate::par::{self, Exec};
use crate::plant::{self, Action, Cell, GridConfig, GridState};

/// Deterministic monitor over the taxi cell sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpecMonitor {
    /// One state, never violated.
    Trivial,
    /// State `c` counts steps since the taxi last stood on `gas`; the taxi
    /// must be back on it within `t` steps.
    Timer { t: usize, gas: Cell },
}

impl SpecMonitor {
    pub fn num_states(&self) -> usize {
        match self {
            SpecMonitor::Trivial => 1,
            SpecMonitor::Timer { t, .. } => *t,
        }
    }

    pub fn initial(&self) -> usize {
        0
    }

    /// Monitor state after the taxi enters `cell`; `None` is a violation.
    pub fn step(&self, m: usize, cell: Cell) -> Option<usize> {
        match *self {
            SpecMonitor::Trivial => Some(0),
            SpecMonitor::Timer { t, gas } => {
                if cell == gas {
                    Some(0)
                } else if m + 1 < t {
                    Some(m + 1)
                } else {
                    None
                }
            }
        }
    }

    pub fn validate(&self, cfg: &GridConfig) -> Result<(), ArenaError> {
        if let SpecMonitor::Timer { t, gas } = *self {
            if t == 0 {
                return Err(ArenaError::Monitor("timer bound must be positive".into()));
            }
            if !cfg.is_free(gas) {
                return Err(ArenaError::Monitor(format!("gas station {gas} is not a free cell")));
            }
        }
        Ok(())
    }
}

/// A Player-2 move before grouping: one leaf per tree and the vote.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Region {
    pub leaves: Vec<u32>,
    pub action: Action,
}

impl Region {
    /// Per-tree literal conjunctions describing the region.
    pub fn paths(&self, book: &TreePolicy) -> Vec<TreePath<Action>> {
        book.trees
            .iter()
            .zip(&self.leaves)
            .map(|(t, &leaf)| t.paths().into_iter().find(|p| p.node == leaf as usize).expect("leaf exists"))
            .collect()
    }

    pub fn contains(&self, book: &TreePolicy, features: &[i32]) -> bool {
        self.paths(book).iter().all(|p| p.holds(features))
    }
}

fn feature_box(cfg: &GridConfig) -> Vec<(i32, i32)> {
    vec![(-(cfg.n - 1), cfg.n - 1); cfg.num_features()]
}

/// Γ2 of `book` on `cfg`. A single tree yields one region per leaf whose
/// path is satisfiable inside the feature box. A forest yields the leaf
/// tuples that some valid state actually reaches.
pub fn leaf_regions(book: &TreePolicy, cfg: &GridConfig) -> Vec<Region> {
    if let [t] = book.trees.as_slice() {
        let bounds = feature_box(cfg);
        return t
            .paths()
            .into_iter()
            .filter(|p| p.intervals(&bounds).is_some())
            .map(|p| Region { leaves: vec![p.node as u32], action: p.leaf })
            .collect();
    }
    let mut seen = BTreeSet::new();
    let mut f = Vec::new();
    plant::visit_states(cfg, |s| {
        f.clear();
        s.write_features(&mut f);
        seen.insert(book.leaf_tuple(&f).into_iter().map(|l| l as u32).collect::<Vec<_>>());
    });
    seen.into_iter()
        .map(|leaves| {
            let idx: Vec<usize> = leaves.iter().map(|&l| l as usize).collect();
            Region { action: book.vote_of_leaves(&idx), leaves }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaOptions {
    /// Refuse to enumerate more concrete states than this.
    pub max_states: u128,
}

impl Default for ArenaOptions {
    fn default() -> Self {
        ArenaOptions { max_states: 200_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxiArena {
    pub grid: GridConfig,
    pub monitor: SpecMonitor,
    pub arena: Arena,
    /// Every region met during enumeration, sorted by leaf tuple.
    pub regions: Vec<Region>,
    /// Region ids present per taxi cell index.
    pub cell_regions: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, u32>,
}

struct CellScan {
    tuples: Vec<Vec<u32>>,
}

fn scan_cell(cfg: &GridConfig, book: &TreePolicy, cell: Cell) -> Result<CellScan, ArenaError> {
    let mut set: HashSet<Vec<u32>> = HashSet::new();
    let mut f = Vec::with_capacity(cfg.num_features());
    let mut key = vec![0u32; book.trees.len()];
    let mut first: Option<GridState> = None;
    plant::visit_states_with_taxi(cfg, cell, |s| {
        f.clear();
        s.write_features(&mut f);
        for (k, t) in key.iter_mut().zip(&book.trees) {
            *k = t.leaf_index(&f) as u32;
        }
        if !set.contains(key.as_slice()) {
            set.insert(key.clone());
        }
        if first.is_none() {
            first = Some(s.clone());
        }
    });
    let Some(rep) = first else {
        return Err(ArenaError::EmptyCell(cell));
    };
    // every successor of a state in this cell must share one taxi cell
    for a in Action::ALL {
        let target = plant::move_taxi(cfg, cell, a).0;
        if plant::support(cfg, &rep, a).iter().any(|s| s.taxi != target) {
            return Err(ArenaError::DeltaNotClosed { cell, action: a });
        }
    }
    let mut tuples: Vec<_> = set.into_iter().collect();
    tuples.sort();
    Ok(CellScan { tuples })
}

/// Enumerate every concrete state per taxi cell, collect the book regions
/// met there, and wire the product with `monitor`.
pub fn build_arena(
    cfg: &GridConfig,
    monitor: &SpecMonitor,
    book: &TreePolicy,
    opts: &ArenaOptions,
    exec: Exec,
) -> Result<TaxiArena, ArenaError> {
    cfg.validate()?;
    monitor.validate(cfg)?;
    book.validate(cfg.num_features()).map_err(|e| ArenaError::Book(e.to_string()))?;
    let states = cfg.num_states();
    if states > opts.max_states {
        return Err(ArenaError::TooLarge { states, limit: opts.max_states });
    }
    let cells: Vec<Cell> = (0..cfg.num_cells()).map(|i| cfg.cell_at(i)).collect();
    let scans = par::map_slice(exec, &cells, |&c| if cfg.is_free(c) { Some(scan_cell(cfg, book, c)) } else { None });
    let mut per_cell = Vec::with_capacity(cells.len());
    for s in scans {
        per_cell.push(s.transpose()?);
    }

    let all: BTreeSet<&Vec<u32>> = per_cell.iter().flatten().flat_map(|s| &s.tuples).collect();
    let regions: Vec<Region> = all
        .into_iter()
        .map(|leaves| {
            let idx: Vec<usize> = leaves.iter().map(|&l| l as usize).collect();
            Region { leaves: leaves.clone(), action: book.vote_of_leaves(&idx) }
        })
        .collect();
    let index: HashMap<Vec<u32>, u32> =
        regions.iter().enumerate().map(|(i, r)| (r.leaves.clone(), i as u32)).collect();
    let cell_regions: Vec<Vec<u32>> = per_cell
        .iter()
        .map(|s| s.as_ref().map_or(Vec::new(), |s| s.tuples.iter().map(|t| index[t]).collect()))
        .collect();

    let nm = monitor.num_states();
    let mut moves = Vec::with_capacity(cells.len() * nm);
    for (ci, &cell) in cells.iter().enumerate() {
        let advice: BTreeSet<Action> = cell_regions[ci].iter().map(|&r| regions[r as usize].action).collect();
        let targets: Vec<Cell> = Action::ALL.iter().map(|&a| plant::move_taxi(cfg, cell, a).0).collect();
        for m in 0..nm {
            let next: [Succ; 4] = std::array::from_fn(|a| match monitor.step(m, targets[a]) {
                Some(m2) => Succ::Vertex((cfg.cell_index(targets[a]) * nm + m2) as u32),
                None => Succ::Violation,
            });
            moves.push(advice.iter().map(|&advice| Move { advice, next }).collect());
        }
    }
    Ok(TaxiArena {
        grid: cfg.clone(),
        monitor: monitor.clone(),
        arena: Arena { moves },
        regions,
        cell_regions,
        index,
    })
}

impl TaxiArena {
    pub fn vertex(&self, cell: Cell, m: usize) -> usize {
        self.grid.cell_index(cell) * self.monitor.num_states() + m
    }

    /// Inverse of [`TaxiArena::vertex`].
    pub fn cell_of(&self, v: usize) -> (Cell, usize) {
        let nm = self.monitor.num_states();
        (self.grid.cell_at(v / nm), v % nm)
    }

    /// γ1 of a concrete state under a monitor state.
    pub fn abstract_of(&self, s: &GridState, m: usize) -> usize {
        self.vertex(s.taxi, m)
    }

    /// γ2 of a concrete state, if the region was met during construction.
    pub fn region_of(&self, book: &TreePolicy, s: &GridState) -> Option<u32> {
        let key: Vec<u32> = book.leaf_tuple(&s.features()).into_iter().map(|l| l as u32).collect();
        self.index.get(&key).copied()
    }

    /// Whether region `r` is a legal Player-2 move at vertex `v`.
    pub fn is_legal(&self, v: usize, r: u32) -> bool {
        let ci = v / self.monitor.num_states();
        self.cell_regions[ci].binary_search(&r).is_ok()
    }

    /// Checks that a concrete trace projects onto a play: at each step the
    /// state's region is legal at the current vertex and δ maps the played
    /// action to the next vertex. Returns the index of the first mismatch.
    /// A trace may stop early on the violation sink.
    pub fn check_play(&self, book: &TreePolicy, states: &[GridState], actions: &[Action]) -> Result<(), usize> {
        let Some(first) = states.first() else { return Ok(()) };
        let mut m = Some(self.monitor.initial());
        let mut v = self.abstract_of(first, self.monitor.initial());
        for (i, (s, &a)) in states.iter().zip(actions).enumerate() {
            if m.is_none() {
                break;
            }
            let r = self.region_of(book, s).ok_or(i)?;
            if self.abstract_of(s, m.unwrap()) != v || !self.is_legal(v, r) {
                return Err(i);
            }
            let class = self.arena.class_of(v, self.regions[r as usize].action).ok_or(i)?;
            let next_m = self.monitor.step(m.unwrap(), states[i + 1].taxi);
            match (self.arena.moves[v][class].next[a.index()], next_m) {
                (Succ::Vertex(w), Some(m2)) if w as usize == self.vertex(states[i + 1].taxi, m2) => {
                    v = w as usize;
                }
                (Succ::Violation, None) => {}
                _ => return Err(i),
            }
            m = next_m;
        }
        Ok(())
    }

    /// JSON dump for external inspection.
    pub fn to_json(&self) -> serde_json::Value {
        let vertices: Vec<_> = (0..self.arena.num_vertices())
            .filter(|&v| !self.arena.moves[v].is_empty())
            .map(|v| {
                let (cell, m) = self.cell_of(v);
                let ci = self.grid.cell_index(cell);
                let moves: Vec<_> = self.arena.moves[v]
                    .iter()
                    .map(|mv| {
                        let regions: Vec<u32> = self.cell_regions[ci]
                            .iter()
                            .copied()
                            .filter(|&r| self.regions[r as usize].action == mv.advice)
                            .collect();
                        let next: Vec<_> = mv
                            .next
                            .iter()
                            .map(|s| match s {
                                Succ::Vertex(w) => json!(w),
                                Succ::Violation => json!(null),
                            })
                            .collect();
                        let rewards: Vec<u32> = Action::ALL.iter().map(|&a| mv.reward(a)).collect();
                        json!({"advice": mv.advice, "regions": regions, "next": next, "rewards": rewards})
                    })
                    .collect();
                json!({"id": v, "cell": cell, "monitor": m, "moves": moves})
            })
            .collect();
        json!({
            "grid": self.grid,
            "monitor": self.monitor,
            "regions": self.regions,
            "vertices": vertices,
        })
    }
}
