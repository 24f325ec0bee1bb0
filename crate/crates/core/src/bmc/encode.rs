//! SMT-LIB (QF_LIA) encoding of `ℓ` plant steps under a tree policy.
//!
//! Object 0 is the taxi, objects `1..=k` the passengers; `x_i_j`, `y_i_j`
//! hold object `j`'s cell at step `i` and `a_i` the action index played at
//! step `i`. Respawns are nondeterministic: a collected passenger may land
//! on any free cell not occupied at the next step.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sexp;
use crate::magicbook::{Literal, TreePolicy};
use crate::plant::{Action, GridConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BmcSpec {
    /// Some step plays an action that runs into a wall or the border.
    WallHit,
    /// The taxi ends where it started and no passenger is ever collected.
    NoPickupLasso,
    /// Passenger `j` (1-based) has moved by step `ℓ`; every other passenger
    /// stays put throughout.
    PassengerFirst { j: usize },
    /// As `PassengerFirst`, and initially some other passenger is strictly
    /// closer to the taxi than `j`.
    PassengerFirstNotClosest { j: usize },
    /// Extra `(assert ...)` commands over the trace variables.
    Raw { smt: String },
}

impl BmcSpec {
    pub fn name(&self) -> String {
        match self {
            BmcSpec::WallHit => "wall_hit".into(),
            BmcSpec::NoPickupLasso => "no_pickup_lasso".into(),
            BmcSpec::PassengerFirst { j } => format!("passenger_first_{j}"),
            BmcSpec::PassengerFirstNotClosest { j } => format!("passenger_first_not_closest_{j}"),
            BmcSpec::Raw { .. } => "raw".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("bound must be at least 1")]
    ZeroBound,
    #[error("passenger {j} outside 1..={k}")]
    BadPassenger { j: usize, k: usize },
    #[error("book: {0}")]
    Book(String),
    #[error("raw constraint: {0}")]
    Raw(String),
}

fn int(v: i64) -> String {
    if v < 0 {
        format!("(- {})", -v)
    } else {
        v.to_string()
    }
}

pub fn xv(i: usize, j: usize) -> String {
    format!("x_{i}_{j}")
}

pub fn yv(i: usize, j: usize) -> String {
    format!("y_{i}_{j}")
}

pub fn av(i: usize) -> String {
    format!("a_{i}")
}

fn and(parts: &[String]) -> String {
    match parts {
        [] => "true".into(),
        [p] => p.clone(),
        _ => format!("(and {})", parts.join(" ")),
    }
}

fn or(parts: &[String]) -> String {
    match parts {
        [] => "false".into(),
        [p] => p.clone(),
        _ => format!("(or {})", parts.join(" ")),
    }
}

fn same_cell(i: usize, j: usize, i2: usize, j2: usize) -> String {
    format!("(and (= {} {}) (= {} {}))", xv(i, j), xv(i2, j2), yv(i, j), yv(i2, j2))
}

/// Feature `f` at step `i`: an offset of passenger `f / 2 + 1`.
fn feature(i: usize, f: usize) -> String {
    let p = f / 2 + 1;
    if f.is_multiple_of(2) {
        format!("(- {} {})", xv(i, p), xv(i, 0))
    } else {
        format!("(- {} {})", yv(i, p), yv(i, 0))
    }
}

fn literal(i: usize, l: &Literal) -> String {
    if l.le {
        format!("(<= {} {})", feature(i, l.feat), int(l.floor() as i64))
    } else {
        format!("(>= {} {})", feature(i, l.feat), int(l.floor() as i64 + 1))
    }
}

/// Whether `a` at step `i` is blocked by the border or a wall.
fn blocked(cfg: &GridConfig, i: usize, a: Action) -> String {
    let (x, y) = (xv(i, 0), yv(i, 0));
    let last = cfg.n - 1;
    let mut parts = vec![match a {
        Action::Up => format!("(= {y} {last})"),
        Action::Right => format!("(= {x} {last})"),
        Action::Down => format!("(= {y} 0)"),
        Action::Left => format!("(= {x} 0)"),
    }];
    let (dx, dy) = a.delta();
    for w in &cfg.walls {
        let (sx, sy) = (w.x - dx, w.y - dy);
        if cfg.in_bounds(crate::plant::Cell::new(sx, sy)) {
            parts.push(format!("(and (= {x} {sx}) (= {y} {sy}))"));
        }
    }
    or(&parts)
}

fn abs(t: &str) -> String {
    format!("(ite (>= {t} 0) {t} (- {t}))")
}

/// Initial manhattan distance between the taxi and passenger `p`.
fn distance0(p: usize) -> String {
    let dx = format!("(- {} {})", xv(0, p), xv(0, 0));
    let dy = format!("(- {} {})", yv(0, p), yv(0, 0));
    format!("(+ {} {})", abs(&dx), abs(&dy))
}

/// A complete query minus `(check-sat)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmtScript {
    pub bound: usize,
    pub k: usize,
    pub decls: Vec<String>,
    pub assertions: Vec<String>,
}

impl SmtScript {
    pub fn state_vars(&self) -> Vec<String> {
        (0..=self.bound).flat_map(|i| (0..=self.k).flat_map(move |j| [xv(i, j), yv(i, j)])).collect()
    }

    pub fn action_vars(&self) -> Vec<String> {
        (0..self.bound).map(av).collect()
    }

    /// Number of `(assert ...)` commands.
    pub fn num_assertions(&self) -> usize {
        self.assertions.len()
    }

    /// Forbid exactly this assignment of all state variables.
    pub fn blocking_clause(&self, values: &[i64]) -> String {
        let eqs: Vec<String> =
            self.state_vars().iter().zip(values).map(|(v, &x)| format!("(= {v} {})", int(x))).collect();
        format!("(assert (not {}))", and(&eqs))
    }

    pub fn block(&mut self, values: &[i64]) {
        let c = self.blocking_clause(values);
        self.assertions.push(c);
    }

    /// SMT-LIB text without `(check-sat)`.
    pub fn to_smt2(&self) -> String {
        let mut out = String::from("(set-logic QF_LIA)\n");
        for d in &self.decls {
            let _ = writeln!(out, "{d}");
        }
        for a in &self.assertions {
            let _ = writeln!(out, "{a}");
        }
        out
    }
}

/// Compile plant, policy and `spec` over `bound` steps.
pub fn encode(cfg: &GridConfig, book: &TreePolicy, spec: &BmcSpec, bound: usize) -> Result<SmtScript, EncodeError> {
    if bound == 0 {
        return Err(EncodeError::ZeroBound);
    }
    let k = cfg.k;
    book.validate(cfg.num_features()).map_err(|e| EncodeError::Book(e.to_string()))?;
    let mut decls = Vec::new();
    let mut asserts = Vec::new();
    let mut assert = |s: String| asserts.push(format!("(assert {s})"));
    let last = cfg.n - 1;

    for i in 0..=bound {
        for j in 0..=k {
            decls.push(format!("(declare-fun {} () Int)", xv(i, j)));
            decls.push(format!("(declare-fun {} () Int)", yv(i, j)));
        }
    }
    for i in 0..bound {
        decls.push(format!("(declare-fun {} () Int)", av(i)));
    }

    // domain, walls, distinct occupancy
    for i in 0..=bound {
        for j in 0..=k {
            let (x, y) = (xv(i, j), yv(i, j));
            assert(format!("(and (<= 0 {x}) (<= {x} {last}) (<= 0 {y}) (<= {y} {last}))"));
            for w in &cfg.walls {
                assert(format!("(not (and (= {x} {}) (= {y} {})))", w.x, w.y));
            }
            for j2 in j + 1..=k {
                assert(format!("(not {})", same_cell(i, j, i, j2)));
            }
        }
    }

    for i in 0..bound {
        let a = av(i);
        assert(format!("(and (<= 0 {a}) (<= {a} 3))"));
        // taxi motion
        let (x, y, x1, y1) = (xv(i, 0), yv(i, 0), xv(i + 1, 0), yv(i + 1, 0));
        for act in Action::ALL {
            let (dx, dy) = act.delta();
            assert(format!(
                "(=> (= {a} {}) (ite {} (and (= {x1} {x}) (= {y1} {y})) (and (= {x1} (+ {x} {})) (= {y1} (+ {y} {})))))",
                act.index(),
                blocked(cfg, i, act),
                int(dx as i64),
                int(dy as i64)
            ));
        }
        // a passenger stays unless the taxi lands on it
        for p in 1..=k {
            assert(format!("(=> (not {}) {})", same_cell(i + 1, 0, i, p), same_cell(i + 1, p, i, p)));
        }
    }

    // policy
    let paths: Vec<_> = book.trees.iter().map(|t| t.paths()).collect();
    let single = book.is_single();
    for i in 0..bound {
        let a = av(i);
        if single {
            for p in &paths[0] {
                let lits: Vec<String> = p.literals.iter().map(|l| literal(i, l)).collect();
                let head = format!("(= {a} {})", p.leaf.index());
                assert(if lits.is_empty() { head } else { format!("(=> {} {head})", and(&lits)) });
            }
            continue;
        }
        for (t, tp) in paths.iter().enumerate() {
            let v = format!("v_{i}_{t}");
            decls.push(format!("(declare-fun {v} () Int)"));
            for p in tp {
                let lits: Vec<String> = p.literals.iter().map(|l| literal(i, l)).collect();
                let head = format!("(= {v} {})", p.leaf.index());
                assert(if lits.is_empty() { head } else { format!("(=> {} {head})", and(&lits)) });
            }
        }
        for act in 0..4 {
            let c = format!("c_{i}_{act}");
            decls.push(format!("(declare-fun {c} () Int)"));
            let terms: Vec<String> = (0..book.trees.len()).map(|t| format!("(ite (= v_{i}_{t} {act}) 1 0)")).collect();
            let sum = if terms.len() == 1 { terms[0].clone() } else { format!("(+ {})", terms.join(" ")) };
            assert(format!("(= {c} {sum})"));
        }
        // votes: beat earlier actions strictly, later ones or tie
        for act in 0..4 {
            let cmp: Vec<String> = (0..4)
                .filter(|&b| b != act)
                .map(|b| {
                    let op = if b < act { ">" } else { ">=" };
                    format!("({op} c_{i}_{act} c_{i}_{b})")
                })
                .collect();
            assert(format!("(=> (= {a} {act}) {})", and(&cmp)));
        }
    }

    // specification
    let stationary = |p: usize| -> Vec<String> { (1..=bound).map(|i| same_cell(i, p, 0, p)).collect() };
    let check_j = |j: usize| if j == 0 || j > k { Err(EncodeError::BadPassenger { j, k }) } else { Ok(()) };
    match spec {
        BmcSpec::WallHit => {
            let hits: Vec<String> = (0..bound)
                .flat_map(|i| {
                    Action::ALL.into_iter().map(move |act| (i, act))
                })
                .map(|(i, act)| format!("(and (= {} {}) {})", av(i), act.index(), blocked(cfg, i, act)))
                .collect();
            assert(or(&hits));
        }
        BmcSpec::NoPickupLasso => {
            assert(same_cell(bound, 0, 0, 0));
            for p in 1..=k {
                for s in stationary(p) {
                    assert(s);
                }
            }
        }
        BmcSpec::PassengerFirst { j } | BmcSpec::PassengerFirstNotClosest { j } => {
            let j = *j;
            check_j(j)?;
            for p in (1..=k).filter(|&p| p != j) {
                for s in stationary(p) {
                    assert(s);
                }
            }
            assert(format!("(not {})", same_cell(bound, j, 0, j)));
            if matches!(spec, BmcSpec::PassengerFirstNotClosest { .. }) {
                let closer: Vec<String> =
                    (1..=k).filter(|&p| p != j).map(|p| format!("(> {} {})", distance0(j), distance0(p))).collect();
                assert(or(&closer));
            }
        }
        BmcSpec::Raw { smt } => {
            let forms = sexp::parse_all(smt).map_err(|e| EncodeError::Raw(e.to_string()))?;
            for f in forms {
                match f.as_list() {
                    Some([head, _]) if head.as_atom() == Some("assert") => asserts.push(f.to_string()),
                    _ => return Err(EncodeError::Raw(format!("expected (assert ...), got {f}"))),
                }
            }
        }
    }
    Ok(SmtScript { bound, k, decls, assertions: asserts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magicbook::{DecisionTree, Forest, Node};
    use crate::plant::Cell;

    fn split_book() -> TreePolicy {
        Forest::single(DecisionTree {
            nodes: vec![
                Node::Split { feat: 0, thr: -0.5, lo: 1, hi: 2 },
                Node::Leaf { leaf: Action::Left },
                Node::Leaf { leaf: Action::Right },
            ],
        })
    }

    #[test]
    fn literals_use_floor() {
        let l = Literal { feat: 2, thr: -0.5, le: true };
        assert_eq!(literal(3, &l), "(<= (- x_3_2 x_3_0) (- 1))");
        let l = Literal { feat: 1, thr: 2.5, le: false };
        assert_eq!(literal(0, &l), "(>= (- y_0_1 y_0_0) 3)");
    }

    #[test]
    fn depth_zero_book_fixes_actions() {
        let cfg = GridConfig::new(4, 1);
        let s = encode(&cfg, &Forest::single(DecisionTree::leaf(Action::Down)), &BmcSpec::WallHit, 3).unwrap();
        for i in 0..3 {
            assert!(s.assertions.contains(&format!("(assert (= a_{i} 2))")));
        }
    }

    #[test]
    fn lasso_constraints() {
        let cfg = GridConfig::new(4, 2);
        let s = encode(&cfg, &Forest::single(DecisionTree::leaf(Action::Down)), &BmcSpec::NoPickupLasso, 2).unwrap();
        assert!(s.assertions.contains(&"(assert (and (= x_2_0 x_0_0) (= y_2_0 y_0_0)))".to_string()));
        for p in 1..=2 {
            for i in 1..=2 {
                assert!(s.assertions.contains(&format!("(assert {})", same_cell(i, p, 0, p))));
            }
        }
    }

    #[test]
    fn passenger_first_shape() {
        let cfg = GridConfig::new(5, 3);
        let book = split_book();
        let s = encode(&cfg, &Forest::single(DecisionTree::leaf(Action::Up)), &BmcSpec::PassengerFirst { j: 2 }, 4).unwrap();
        let stationary = |p: usize| (1..=4).all(|i| s.assertions.contains(&format!("(assert {})", same_cell(i, p, 0, p))));
        assert!(stationary(1) && stationary(3) && !stationary(2));
        assert!(s.assertions.contains(&format!("(assert (not {}))", same_cell(4, 2, 0, 2))));
        assert!(encode(&cfg, &book, &BmcSpec::PassengerFirst { j: 4 }, 4).is_err());
        assert!(encode(&cfg, &book, &BmcSpec::PassengerFirst { j: 0 }, 4).is_err());
        let s = encode(&GridConfig::new(5, 1), &book, &BmcSpec::PassengerFirst { j: 1 }, 3).unwrap();
        let spec_part: Vec<_> = s.assertions.iter().filter(|a| a.contains("(not (and (= x_3_1 x_0_1)")).collect();
        assert_eq!(spec_part.len(), 1);
    }

    #[test]
    fn size_is_linear_in_bound() {
        let cfg = GridConfig::new(6, 2).with_walls([Cell::new(2, 2)]);
        let book = split_book();
        let sizes: Vec<usize> =
            (1..=6).map(|l| encode(&cfg, &book, &BmcSpec::NoPickupLasso, l).unwrap().num_assertions()).collect();
        let d = sizes[1] - sizes[0];
        assert!(sizes.windows(2).all(|w| w[1] - w[0] == d), "{sizes:?}");
    }

    #[test]
    fn script_is_deterministic_and_parses() {
        let cfg = GridConfig::new(4, 2).with_walls([Cell::new(1, 1)]);
        let book = Forest { trees: vec![split_book().trees[0].clone(), DecisionTree::leaf(Action::Up)] };
        let a = encode(&cfg, &book, &BmcSpec::PassengerFirstNotClosest { j: 1 }, 3).unwrap().to_smt2();
        let b = encode(&cfg, &book, &BmcSpec::PassengerFirstNotClosest { j: 1 }, 3).unwrap().to_smt2();
        assert_eq!(a, b);
        let forms = sexp::parse_all(&a).unwrap();
        assert!(forms.len() > 50);
        assert!(a.contains("(=> (= a_0 1) (and (> c_0_1 c_0_0) (>= c_0_1 c_0_2) (>= c_0_1 c_0_3)))"));
    }

    #[test]
    fn raw_spec_is_checked() {
        let cfg = GridConfig::new(4, 1);
        let book = split_book();
        let ok = BmcSpec::Raw { smt: "(assert (= x_0_0 1))".into() };
        assert!(encode(&cfg, &book, &ok, 1).unwrap().assertions.contains(&"(assert (= x_0_0 1))".to_string()));
        assert!(encode(&cfg, &book, &BmcSpec::Raw { smt: "(assert (= x_0_0 1)".into() }, 1).is_err());
        assert!(encode(&cfg, &book, &BmcSpec::Raw { smt: "(check-sat)".into() }, 1).is_err());
    }

    #[test]
    fn blocking_clause_binds_state_vars() {
        let cfg = GridConfig::new(4, 1);
        let s = encode(&cfg, &split_book(), &BmcSpec::WallHit, 1).unwrap();
        assert_eq!(s.state_vars(), vec!["x_0_0", "y_0_0", "x_0_1", "y_0_1", "x_1_0", "y_1_0", "x_1_1", "y_1_1"]);
        assert_eq!(
            s.blocking_clause(&[0, 1, 2, -3, 0, 0, 0, 0]),
            "(assert (not (and (= x_0_0 0) (= y_0_0 1) (= x_0_1 2) (= y_0_1 (- 3)) (= x_1_0 0) (= y_1_0 0) (= x_1_1 0) (= y_1_1 0))))"
        );
    }
}
