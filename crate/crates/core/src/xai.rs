//! Which passenger goes first: labeled initial states from BMC witnesses
//! and a small tree explaining them.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bmc::{self, check_witness, decode, encode, xv, yv, BmcError, BmcSpec, SolveResult, SolverConfig, WitnessReport};
use crate::magicbook::{fit_tree, Dataset, DecisionTree, TreePolicy};
use crate::par::{self, Exec};
use crate::plant::{Action, GridConfig, GridState};

/// 1-based passenger label. Prints as `p1`, `p2`, ...
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Passenger(pub usize);

impl fmt::Debug for Passenger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum XaiError {
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Bmc(#[from] BmcError),
}

/// Offsets, then distances `d1..dk`, then differences `di-dj` for `i < j`.
pub fn explain_features(s: &GridState) -> Vec<i32> {
    let mut f = s.features();
    let d: Vec<i32> = (0..s.passengers.len()).map(|i| s.manhattan(i)).collect();
    f.extend(&d);
    for i in 0..d.len() {
        for j in i + 1..d.len() {
            f.push(d[i] - d[j]);
        }
    }
    f
}

pub fn explain_feature_names(k: usize) -> Vec<String> {
    let mut names = crate::magicbook::feature_names(k);
    names.extend((1..=k).map(|i| format!("d{i}")));
    for i in 1..=k {
        for j in i + 1..=k {
            names.push(format!("d{i}-d{j}"));
        }
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XaiRow {
    pub state: GridState,
    pub label: Passenger,
    pub witness: WitnessReport,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct XaiDataset {
    pub rows: Vec<XaiRow>,
}

impl XaiDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.rows.iter().map(|r| serde_json::to_string(r).expect("serializable") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<XaiDataset, serde_json::Error> {
        let rows = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(XaiDataset { rows })
    }

    pub fn labeled(&self) -> Dataset<Passenger> {
        let width = self.rows.first().map_or(0, |r| explain_features(&r.state).len());
        let mut d = Dataset::new(width);
        for r in &self.rows {
            d.push(&explain_features(&r.state), r.label).expect("one grid per dataset");
        }
        d
    }

    /// Rows whose witness replays under `book` with label `j` collected
    /// strictly first.
    pub fn verify(&self, cfg: &GridConfig, book: &TreePolicy, wizard: &dyn Fn(&GridState) -> Action) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| {
                let r = &self.rows[i];
                let spec = BmcSpec::PassengerFirst { j: r.label.0 };
                let again = check_witness(cfg, book, &spec, r.witness.trace.clone(), wizard);
                !(again.book_valid
                    && again.spec_holds == Some(true)
                    && r.witness.trace.states[0] == r.state
                    && r.witness.trace.first_collected() == Some(r.label.0 - 1))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatherOptions {
    pub per_label: usize,
    pub bounds: Vec<usize>,
    /// Keep only witnesses the wizard also follows.
    pub wizard_valid_only: bool,
    /// Solver calls allowed per (label, bound).
    pub max_queries: usize,
}

impl Default for GatherOptions {
    fn default() -> Self {
        GatherOptions { per_label: 100, bounds: vec![6, 7, 8, 9], wizard_valid_only: true, max_queries: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub label: Passenger,
    pub wanted: usize,
    pub got: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gathered {
    pub dataset: XaiDataset,
    pub shortfall: Vec<Shortfall>,
    /// Rejected witnesses the wizard does not follow.
    pub rejected: usize,
}

fn block_prefix(states: &[GridState]) -> String {
    let mut eqs = Vec::new();
    for (i, s) in states.iter().enumerate() {
        for (j, c) in std::iter::once(&s.taxi).chain(&s.passengers).enumerate() {
            eqs.push(format!("(= {} {}) (= {} {})", xv(i, j), c.x, yv(i, j), c.y));
        }
    }
    format!("(assert (not (and {})))", eqs.join(" "))
}

/// Witnessed initial states for label `j` across the bounds.
fn gather_label(
    cfg: &GridConfig,
    book: &TreePolicy,
    wizard: &(dyn Fn(&GridState) -> Action + Sync),
    opts: &GatherOptions,
    solver: &SolverConfig,
    j: usize,
) -> Result<(Vec<XaiRow>, usize), BmcError> {
    let spec = BmcSpec::PassengerFirst { j };
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    let mut rejected = 0;
    for &bound in &opts.bounds {
        if rows.len() >= opts.per_label {
            break;
        }
        let script = encode(cfg, book, &spec, bound)?;
        let mut session = solver.session(&script)?;
        // earlier bounds' initial states are not needed again
        for s in &seen {
            session.assert(&block_prefix(std::slice::from_ref(s)))?;
        }
        for _ in 0..opts.max_queries {
            if rows.len() >= opts.per_label {
                break;
            }
            let model = match session.check()? {
                SolveResult::Sat(m) => m,
                SolveResult::Unsat | SolveResult::Unknown { .. } => break,
            };
            let trace = decode(cfg, bound, &model)?;
            let report = check_witness(cfg, book, &spec, trace, wizard);
            let ok = report.book_valid
                && report.spec_holds == Some(true)
                && report.trace.first_collected() == Some(j - 1)
                && (report.wizard_valid || !opts.wizard_valid_only);
            if ok {
                let s0 = report.trace.states[0].clone();
                session.assert(&block_prefix(std::slice::from_ref(&s0)))?;
                seen.insert(s0.clone());
                rows.push(XaiRow { state: s0, label: Passenger(j), witness: report });
            } else {
                // every run through this prefix fails the same way
                let upto = match report.divergence {
                    Some(d) if opts.wizard_valid_only => d,
                    _ => bound,
                };
                rejected += 1;
                session.assert(&block_prefix(&report.trace.states[..=upto]))?;
            }
        }
    }
    Ok((rows, rejected))
}

/// Up to `per_label` witnessed initial states per passenger, with
/// duplicates across labels dropped.
pub fn gather(
    cfg: &GridConfig,
    book: &TreePolicy,
    wizard: &(dyn Fn(&GridState) -> Action + Sync),
    opts: &GatherOptions,
    solver: &SolverConfig,
    exec: Exec,
) -> Result<Gathered, BmcError> {
    let per = par::map_range(exec, cfg.k, |i| gather_label(cfg, book, wizard, opts, solver, i + 1));
    let mut dataset = XaiDataset::default();
    let mut shortfall = Vec::new();
    let mut rejected = 0;
    let mut seen = BTreeSet::new();
    for (i, r) in per.into_iter().enumerate() {
        let (rows, rej) = r?;
        rejected += rej;
        if rows.len() < opts.per_label {
            shortfall.push(Shortfall { label: Passenger(i + 1), wanted: opts.per_label, got: rows.len() });
        }
        dataset.rows.extend(rows.into_iter().filter(|r| seen.insert(r.state.clone())));
    }
    Ok(Gathered { dataset, shortfall, rejected })
}

/// CART explanation tree of depth at most `max_depth`.
pub fn explain_tree(d: &XaiDataset, max_depth: usize) -> Result<DecisionTree<Passenger>, XaiError> {
    if d.is_empty() {
        return Err(XaiError::Empty);
    }
    fit_tree(&d.labeled(), Some(max_depth)).map_err(|_| XaiError::Empty)
}

pub fn explain_dot(t: &DecisionTree<Passenger>, k: usize) -> String {
    crate::dot::tree_to_dot(t, &explain_feature_names(k))
}

pub use bmc::UNSAT_CAVEAT;
