//! Taxi gridworld plant.
//!
//! A taxi moves deterministically on an `n × n` grid; `k` passengers wait at
//! fixed cells and respawn uniformly at random after being collected.
//! Moving off the grid or into a wall leaves the taxi in place and is
//! reported as a wall hit rather than rejected.
//!
//! Occupied cells are pairwise distinct in every valid state: a respawning
//! passenger never lands on a wall, on the taxi, or on another passenger.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlantError {
    #[error("grid side must be at least 2, got {0}")]
    GridTooSmall(i32),
    #[error("passenger count must be at least 1")]
    NoPassengers,
    #[error("{what} cell {cell} lies outside the {n}x{n} grid")]
    OutOfBounds { what: &'static str, cell: Cell, n: i32 },
    #[error("{what} cell {cell} is a wall")]
    OnWall { what: &'static str, cell: Cell },
    #[error("state has {got} passengers, expected {expected}")]
    PassengerCount { got: usize, expected: usize },
    #[error("cells {0} and {1} of the state coincide")]
    Collision(Cell, Cell),
    #[error("grid has too few free cells for a taxi and {0} passengers")]
    Overcrowded(usize),
}

/// Grid position; `x` is the column, `y` the row (`Up` increases `y`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn offset(self, a: Action) -> Cell {
        let (dx, dy) = a.delta();
        Cell::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y] = <[i32; 2]>::deserialize(d)?;
        Ok(Cell { x, y })
    }
}

/// Taxi actions in canonical order. The derived `Ord` is the tie-break order
/// used by every argmax and vote in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Right,
    Down,
    Left,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, 1),
            Action::Right => (1, 0),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Right => "right",
            Action::Down => "down",
            Action::Left => "left",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: i32,
    pub k: usize,
    #[serde(default)]
    pub walls: BTreeSet<Cell>,
    #[serde(default)]
    pub gas_station: Option<Cell>,
    #[serde(default)]
    pub stations: Option<(Cell, Cell)>,
}

impl GridConfig {
    pub fn new(n: i32, k: usize) -> Self {
        GridConfig { n, k, walls: BTreeSet::new(), gas_station: None, stations: None }
    }

    pub fn with_walls(mut self, walls: impl IntoIterator<Item = Cell>) -> Self {
        self.walls.extend(walls);
        self
    }

    pub fn with_gas_station(mut self, gas: Cell) -> Self {
        self.gas_station = Some(gas);
        self
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if self.n < 2 {
            return Err(PlantError::GridTooSmall(self.n));
        }
        if self.k == 0 {
            return Err(PlantError::NoPassengers);
        }
        for &w in &self.walls {
            self.check_in_bounds("wall", w)?;
        }
        let mut named: Vec<(&'static str, Cell)> = Vec::new();
        if let Some(g) = self.gas_station {
            named.push(("gas station", g));
        }
        if let Some((a, b)) = self.stations {
            named.push(("station", a));
            named.push(("station", b));
        }
        for (what, c) in named {
            self.check_in_bounds(what, c)?;
            if self.walls.contains(&c) {
                return Err(PlantError::OnWall { what, cell: c });
            }
        }
        if self.free_cells().len() < self.k + 1 {
            return Err(PlantError::Overcrowded(self.k));
        }
        Ok(())
    }

    fn check_in_bounds(&self, what: &'static str, cell: Cell) -> Result<(), PlantError> {
        if self.in_bounds(cell) {
            Ok(())
        } else {
            Err(PlantError::OutOfBounds { what, cell, n: self.n })
        }
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        (0..self.n).contains(&c.x) && (0..self.n).contains(&c.y)
    }

    /// In bounds and not a wall.
    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.walls.contains(&c)
    }

    pub fn cell_index(&self, c: Cell) -> usize {
        (c.y * self.n + c.x) as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let n = self.n as usize;
        Cell::new((index % n) as i32, (index / n) as i32)
    }

    pub fn num_cells(&self) -> usize {
        (self.n * self.n) as usize
    }

    /// Free cells in cell-index order.
    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.num_cells()).map(|i| self.cell_at(i)).filter(|&c| self.is_free(c)).collect()
    }

    /// Feature vector length (`2k`).
    pub fn num_features(&self) -> usize {
        2 * self.k
    }

    /// Number of valid states: taxi and passengers on pairwise distinct free cells.
    pub fn num_states(&self) -> u128 {
        let free = self.free_cells().len() as u128;
        (0..=self.k as u128).map(|i| free.saturating_sub(i)).product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridState {
    pub taxi: Cell,
    pub passengers: Vec<Cell>,
}

impl GridState {
    pub fn new(taxi: Cell, passengers: Vec<Cell>) -> Self {
        GridState { taxi, passengers }
    }

    pub fn validate(&self, cfg: &GridConfig) -> Result<(), PlantError> {
        if self.passengers.len() != cfg.k {
            return Err(PlantError::PassengerCount { got: self.passengers.len(), expected: cfg.k });
        }
        let mut cells = Vec::with_capacity(cfg.k + 1);
        cells.push(("taxi", self.taxi));
        cells.extend(self.passengers.iter().map(|&p| ("passenger", p)));
        for (i, &(what, c)) in cells.iter().enumerate() {
            cfg.check_in_bounds(what, c)?;
            if cfg.walls.contains(&c) {
                return Err(PlantError::OnWall { what, cell: c });
            }
            if let Some(&(_, other)) = cells[..i].iter().find(|(_, o)| *o == c) {
                return Err(PlantError::Collision(other, c));
            }
        }
        Ok(())
    }

    pub fn is_valid(&self, cfg: &GridConfig) -> bool {
        self.validate(cfg).is_ok()
    }

    /// Signed per-axis offsets `(x_i - x_0, y_i - y_0)` for each passenger.
    pub fn features(&self) -> Vec<i32> {
        let mut out = Vec::with_capacity(2 * self.passengers.len());
        self.write_features(&mut out);
        out
    }

    pub fn write_features(&self, out: &mut Vec<i32>) {
        out.clear();
        for p in &self.passengers {
            out.push(p.x - self.taxi.x);
            out.push(p.y - self.taxi.y);
        }
    }

    /// Manhattan distance from the taxi to passenger `i` (0-based).
    pub fn manhattan(&self, i: usize) -> i32 {
        self.taxi.manhattan(self.passengers[i])
    }

    fn occupied_by_other(&self, c: Cell, except: usize) -> bool {
        self.passengers.iter().enumerate().any(|(j, &p)| j != except && p == c)
    }
}

/// Free function form of [`GridState::features`].
pub fn features(s: &GridState) -> Vec<i32> {
    s.features()
}

/// Free function form of [`GridState::manhattan`] (0-based passenger index).
pub fn manhattan(s: &GridState, i: usize) -> i32 {
    s.manhattan(i)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub next: GridState,
    /// 0-based index of the passenger collected by this step.
    pub collected: Option<usize>,
    pub wall_hit: bool,
}

/// Deterministic taxi motion with clamping at walls and borders.
pub fn move_taxi(cfg: &GridConfig, taxi: Cell, a: Action) -> (Cell, bool) {
    let target = taxi.offset(a);
    if cfg.is_free(target) {
        (target, false)
    } else {
        (taxi, true)
    }
}

/// Whether action `a` at `taxi` points off the grid or into a wall.
pub fn hits_wall(cfg: &GridConfig, taxi: Cell, a: Action) -> bool {
    !cfg.is_free(taxi.offset(a))
}

/// Legal respawn cells for passenger `collected` once the taxi stands on `taxi`.
pub fn respawn_cells(cfg: &GridConfig, s: &GridState, taxi: Cell, collected: usize) -> Vec<Cell> {
    cfg.free_cells()
        .into_iter()
        .filter(|&c| c != taxi && !s.occupied_by_other(c, collected))
        .collect()
}

fn pickup(s: &GridState, taxi: Cell) -> Option<usize> {
    s.passengers.iter().position(|&p| p == taxi)
}

/// All successors with positive probability, in deterministic order.
pub fn support(cfg: &GridConfig, s: &GridState, a: Action) -> Vec<GridState> {
    let (taxi, _) = move_taxi(cfg, s.taxi, a);
    match pickup(s, taxi) {
        None => {
            let mut next = s.clone();
            next.taxi = taxi;
            vec![next]
        }
        Some(i) => respawn_cells(cfg, s, taxi, i)
            .into_iter()
            .map(|c| {
                let mut next = s.clone();
                next.taxi = taxi;
                next.passengers[i] = c;
                next
            })
            .collect(),
    }
}

/// Whether `next` is a positive-probability successor of `s` under `a`.
pub fn in_support(cfg: &GridConfig, s: &GridState, a: Action, next: &GridState) -> bool {
    let (taxi, _) = move_taxi(cfg, s.taxi, a);
    if next.taxi != taxi || next.passengers.len() != s.passengers.len() {
        return false;
    }
    match pickup(s, taxi) {
        None => next.passengers == s.passengers,
        Some(i) => {
            let others_fixed = (0..s.passengers.len())
                .filter(|&j| j != i)
                .all(|j| next.passengers[j] == s.passengers[j]);
            let c = next.passengers[i];
            others_fixed && cfg.is_free(c) && c != taxi && !s.occupied_by_other(c, i)
        }
    }
}

/// Sample one step of the plant.
pub fn step(cfg: &GridConfig, s: &GridState, a: Action, rng: &mut SimRng) -> StepOutcome {
    let (taxi, wall_hit) = move_taxi(cfg, s.taxi, a);
    let mut next = s.clone();
    next.taxi = taxi;
    let collected = pickup(s, taxi);
    if let Some(i) = collected {
        let cells = respawn_cells(cfg, s, taxi, i);
        next.passengers[i] = cells[rng.gen_range(0..cells.len())];
    }
    StepOutcome { next, collected, wall_hit }
}

/// Uniformly random valid state.
pub fn random_state(cfg: &GridConfig, rng: &mut SimRng) -> GridState {
    let mut free = cfg.free_cells();
    // partial Fisher-Yates over the first k+1 slots
    for i in 0..=cfg.k {
        let j = rng.gen_range(i..free.len());
        free.swap(i, j);
    }
    GridState::new(free[0], free[1..=cfg.k].to_vec())
}

/// Visit every valid state whose taxi stands on `taxi`, reusing one buffer.
/// Passenger tuples are visited in lexicographic cell-index order.
pub fn visit_states_with_taxi<F: FnMut(&GridState)>(cfg: &GridConfig, taxi: Cell, mut f: F) {
    let free: Vec<Cell> = cfg.free_cells().into_iter().filter(|&c| c != taxi).collect();
    let k = cfg.k;
    if free.len() < k {
        return;
    }
    let mut state = GridState::new(taxi, vec![Cell::default(); k]);
    let mut idx = vec![0usize; k];
    let mut used = vec![false; free.len()];
    // depth-first odometer over distinct cell choices
    let mut depth = 0usize;
    loop {
        if depth == k {
            f(&state);
            depth -= 1;
            used[idx[depth]] = false;
            idx[depth] += 1;
            continue;
        }
        while idx[depth] < free.len() && used[idx[depth]] {
            idx[depth] += 1;
        }
        if idx[depth] == free.len() {
            if depth == 0 {
                return;
            }
            idx[depth] = 0;
            depth -= 1;
            used[idx[depth]] = false;
            idx[depth] += 1;
            continue;
        }
        used[idx[depth]] = true;
        state.passengers[depth] = free[idx[depth]];
        depth += 1;
        if depth < k {
            idx[depth] = 0;
        }
    }
}

/// Visit every valid state of the plant.
pub fn visit_states<F: FnMut(&GridState)>(cfg: &GridConfig, mut f: F) {
    for taxi in cfg.free_cells() {
        visit_states_with_taxi(cfg, taxi, &mut f);
    }
}

/// Collect every valid state (small grids only).
pub fn all_states(cfg: &GridConfig) -> Vec<GridState> {
    let mut out = Vec::new();
    visit_states(cfg, |s| out.push(s.clone()));
    out
}
