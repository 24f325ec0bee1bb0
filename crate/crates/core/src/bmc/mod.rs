//! Bounded model checking of a magic book through an SMT solver, with
//! concrete replay of every witness.

mod encode;
pub mod sexp;
mod solver;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encode::{av, encode, xv, yv, BmcSpec, EncodeError, SmtScript};
pub use solver::{Model, Session, SolveResult, SolverConfig, SolverError, SolverMode};

use crate::magicbook::{book_action, TreePolicy};
use crate::plant::{self, Action, Cell, GridConfig, GridState};

/// Attached to every query that ends without a witness.
pub const UNSAT_CAVEAT: &str =
    "no run of the magic book of this length satisfies the query; nothing follows about the wizard";

#[derive(Debug, Error)]
pub enum BmcError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("model: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trace {
    pub states: Vec<GridState>,
    pub actions: Vec<Action>,
}

impl Trace {
    pub fn bound(&self) -> usize {
        self.actions.len()
    }

    /// Every step lands in the support of the previous state and action.
    pub fn is_consistent(&self, cfg: &GridConfig) -> bool {
        self.states.len() == self.actions.len() + 1
            && self.states.iter().all(|s| s.is_valid(cfg))
            && (0..self.bound()).all(|i| plant::in_support(cfg, &self.states[i], self.actions[i], &self.states[i + 1]))
    }

    /// 0-based passenger collected at each step, if any.
    pub fn collections(&self) -> Vec<Option<usize>> {
        (0..self.bound())
            .map(|i| self.states[i].passengers.iter().position(|&p| p == self.states[i + 1].taxi))
            .collect()
    }

    /// 0-based index of the first passenger collected.
    pub fn first_collected(&self) -> Option<usize> {
        self.collections().into_iter().flatten().next()
    }
}

/// Read a trace out of a model.
pub fn decode(cfg: &GridConfig, bound: usize, model: &Model) -> Result<Trace, BmcError> {
    let get = |name: String| model.get(&name).copied().ok_or_else(|| BmcError::Decode(format!("no value for {name}")));
    let coord = |v: i64| i32::try_from(v).map_err(|_| BmcError::Decode(format!("coordinate {v} out of range")));
    let mut states = Vec::with_capacity(bound + 1);
    for i in 0..=bound {
        let mut cells = Vec::with_capacity(cfg.k + 1);
        for j in 0..=cfg.k {
            cells.push(Cell::new(coord(get(xv(i, j))?)?, coord(get(yv(i, j))?)?));
        }
        states.push(GridState::new(cells[0], cells[1..].to_vec()));
    }
    let actions = (0..bound)
        .map(|i| {
            let v = get(av(i))?;
            usize::try_from(v)
                .ok()
                .and_then(Action::from_index)
                .ok_or_else(|| BmcError::Decode(format!("action value {v}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(Trace { states, actions })
}

/// Concrete meaning of `spec` on `trace`; `None` for raw constraints.
pub fn spec_holds(cfg: &GridConfig, spec: &BmcSpec, t: &Trace) -> Option<bool> {
    let l = t.bound();
    let s0 = &t.states[0];
    let stationary = |p: usize| t.states.iter().all(|s| s.passengers[p] == s0.passengers[p]);
    let first = |j: usize| {
        (1..=cfg.k).contains(&j)
            && (0..cfg.k).filter(|&p| p != j - 1).all(stationary)
            && t.states[l].passengers[j - 1] != s0.passengers[j - 1]
    };
    Some(match spec {
        BmcSpec::WallHit => (0..l).any(|i| plant::hits_wall(cfg, t.states[i].taxi, t.actions[i])),
        BmcSpec::NoPickupLasso => t.states[l].taxi == s0.taxi && (0..cfg.k).all(stationary),
        BmcSpec::PassengerFirst { j } => first(*j),
        BmcSpec::PassengerFirstNotClosest { j } => {
            first(*j) && (0..cfg.k).any(|m| m != j - 1 && s0.manhattan(j - 1) > s0.manhattan(m))
        }
        BmcSpec::Raw { .. } => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessReport {
    #[serde(flatten)]
    pub trace: Trace,
    pub spec: String,
    pub bound: usize,
    pub book_valid: bool,
    pub wizard_valid: bool,
    /// First step where the wizard would act differently.
    pub divergence: Option<usize>,
    /// First step breaking book consistency.
    pub book_divergence: Option<usize>,
    pub spec_holds: Option<bool>,
}

/// Replay `trace` under the book and under `wizard`.
pub fn check_witness(
    cfg: &GridConfig,
    book: &TreePolicy,
    spec: &BmcSpec,
    trace: Trace,
    wizard: &dyn Fn(&GridState) -> Action,
) -> WitnessReport {
    let l = trace.bound();
    let book_divergence = if trace.states.len() != l + 1 || !trace.states.iter().all(|s| s.is_valid(cfg)) {
        Some(0)
    } else {
        (0..l).find(|&i| {
            let (s, a) = (&trace.states[i], trace.actions[i]);
            book_action(book, s) != a || !plant::in_support(cfg, s, a, &trace.states[i + 1])
        })
    };
    let divergence = (0..l).find(|&i| wizard(&trace.states[i]) != trace.actions[i]);
    let holds = if book_divergence == Some(0) && trace.states.len() != l + 1 { Some(false) } else { spec_holds(cfg, spec, &trace) };
    WitnessReport {
        spec: spec.name(),
        bound: l,
        book_valid: book_divergence.is_none(),
        wizard_valid: divergence.is_none(),
        divergence,
        book_divergence,
        spec_holds: holds,
        trace,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    pub spec: String,
    pub bound: usize,
    pub reports: Vec<WitnessReport>,
    /// The last query was Unsat: every witness was found.
    pub exhausted: bool,
    /// The last query ran out of budget after this long.
    pub unknown: Option<Duration>,
    pub solve_time: Duration,
    pub assertions: usize,
    pub caveat: Option<String>,
}

impl Enumeration {
    pub fn wizard_valid_ratio(&self) -> f64 {
        if self.reports.is_empty() {
            return 0.0;
        }
        self.reports.iter().filter(|r| r.wizard_valid).count() as f64 / self.reports.len() as f64
    }

    pub fn per_trace(&self) -> Duration {
        self.solve_time / self.reports.len().max(1) as u32
    }
}

/// Up to `count` witnesses with pairwise distinct state sequences.
pub fn enumerate(
    cfg: &GridConfig,
    book: &TreePolicy,
    spec: &BmcSpec,
    bound: usize,
    count: usize,
    solver: &SolverConfig,
    wizard: &dyn Fn(&GridState) -> Action,
) -> Result<Enumeration, BmcError> {
    let started = Instant::now();
    let mut script = encode(cfg, book, spec, bound)?;
    let mut out = Enumeration {
        spec: spec.name(),
        bound,
        reports: Vec::new(),
        exhausted: false,
        unknown: None,
        solve_time: Duration::ZERO,
        assertions: script.num_assertions(),
        caveat: None,
    };
    let mut session = match solver.mode {
        SolverMode::Incremental => Some(solver.session(&script)?),
        SolverMode::File => None,
    };
    while out.reports.len() < count {
        let result = match session.as_mut() {
            Some(s) => s.check()?,
            None => solver.solve(&script, &format!("{}_l{bound}_{}", out.spec, out.reports.len()))?,
        };
        match result {
            SolveResult::Sat(model) => {
                let trace = decode(cfg, bound, &model)?;
                let values: Vec<i64> = script.state_vars().iter().map(|v| model[v]).collect();
                let block = script.blocking_clause(&values);
                match session.as_mut() {
                    Some(s) => s.assert(&block)?,
                    None => script.assertions.push(block),
                }
                out.reports.push(check_witness(cfg, book, spec, trace, wizard));
            }
            SolveResult::Unsat => {
                out.exhausted = true;
                out.caveat = Some(UNSAT_CAVEAT.to_string());
                break;
            }
            SolveResult::Unknown { elapsed, .. } => {
                out.unknown = Some(elapsed);
                break;
            }
        }
    }
    out.solve_time = started.elapsed();
    Ok(out)
}

/// Every book run of length `bound` satisfying `spec`, by depth-first
/// search over all nondeterministic respawns from every valid state.
pub fn brute_force(cfg: &GridConfig, book: &TreePolicy, spec: &BmcSpec, bound: usize) -> BTreeSet<Trace> {
    fn dfs(cfg: &GridConfig, book: &TreePolicy, spec: &BmcSpec, bound: usize, t: &mut Trace, out: &mut BTreeSet<Trace>) {
        if t.bound() == bound {
            if spec_holds(cfg, spec, t) == Some(true) {
                out.insert(t.clone());
            }
            return;
        }
        let s = t.states.last().unwrap().clone();
        let a = book_action(book, &s);
        for next in plant::support(cfg, &s, a) {
            t.states.push(next);
            t.actions.push(a);
            dfs(cfg, book, spec, bound, t, out);
            t.states.pop();
            t.actions.pop();
        }
    }
    let mut out = BTreeSet::new();
    for s in plant::all_states(cfg) {
        let mut t = Trace { states: vec![s], actions: Vec::new() };
        dfs(cfg, book, spec, bound, &mut t, &mut out);
    }
    out
}
