//! Decision trees and random forests over integer feature vectors.
//!
//! Every split tests `feature ≤ c` with `c` a half-integer, so no integer
//! feature vector ever sits on a boundary. Trees are stored as a flat node
//! array with the root at index 0; children always have larger indices.

mod cart;
mod eval;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{Action, GridState};
use crate::policy::Policy;
use crate::rng::SimRng;

pub use cart::{fit_forest, fit_tree, FitOptions, MaxFeatures};
pub use eval::{
    collect_dataset, dataset_from_states, fidelity, fidelity_on, performance, visited_states, Fidelity,
    Performance,
};

#[derive(Debug, Error, PartialEq)]
pub enum BookError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature vector has length {got}, expected {expected}")]
    Width { got: usize, expected: usize },
    #[error("forest has no trees")]
    NoTrees,
    #[error("malformed tree {tree}: {msg}")]
    Malformed { tree: usize, msg: String },
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("invalid book JSON: {0}")]
    Parse(serde_json::Error),
    #[error(transparent)]
    Book(BookError),
}

/// Labels a tree can predict. `Ord` fixes the tie-break order.
pub trait Label: Copy + Ord + Eq + std::fmt::Debug + Send + Sync {}
impl<T: Copy + Ord + Eq + std::fmt::Debug + Send + Sync> Label for T {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node<L> {
    Split { feat: usize, thr: f64, lo: usize, hi: usize },
    Leaf { leaf: L },
}

/// One signed literal `feature ≤ thr` (`le`) or `feature > thr` (`!le`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Literal {
    pub feat: usize,
    pub thr: f64,
    pub le: bool,
}

impl Literal {
    /// Largest integer on the `≤` side.
    pub fn floor(&self) -> i32 {
        self.thr.floor() as i32
    }

    pub fn holds(&self, features: &[i32]) -> bool {
        (features[self.feat] as f64 <= self.thr) == self.le
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreePath<L> {
    pub literals: Vec<Literal>,
    pub leaf: L,
    /// Index of the leaf node.
    pub node: usize,
}

impl<L> TreePath<L> {
    pub fn holds(&self, features: &[i32]) -> bool {
        self.literals.iter().all(|l| l.holds(features))
    }

    /// Per-feature integer interval `[lo, hi]` described by the path,
    /// intersected with `bounds`. `None` when some interval is empty.
    pub fn intervals(&self, bounds: &[(i32, i32)]) -> Option<Vec<(i32, i32)>> {
        let mut out = bounds.to_vec();
        for l in &self.literals {
            let iv = &mut out[l.feat];
            if l.le {
                iv.1 = iv.1.min(l.floor());
            } else {
                iv.0 = iv.0.max(l.floor() + 1);
            }
        }
        out.iter().all(|&(lo, hi)| lo <= hi).then_some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L: Label> DecisionTree<L> {
    pub fn leaf(label: L) -> Self {
        DecisionTree { nodes: vec![Node::Leaf { leaf: label }] }
    }

    /// Index of the leaf reached by `features`.
    pub fn leaf_index(&self, features: &[i32]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feat, thr, lo, hi } => {
                    i = if features[feat] as f64 <= thr { lo } else { hi };
                }
            }
        }
    }

    pub fn predict(&self, features: &[i32]) -> L {
        self.label_of(self.leaf_index(features))
    }

    /// Label of leaf node `i`. Panics on internal nodes.
    pub fn label_of(&self, i: usize) -> L {
        match self.nodes[i] {
            Node::Leaf { leaf } => leaf,
            Node::Split { .. } => panic!("node {i} is not a leaf"),
        }
    }

    pub fn path(&self, features: &[i32]) -> TreePath<L> {
        let mut literals = Vec::new();
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { leaf } => return TreePath { literals, leaf, node: i },
                Node::Split { feat, thr, lo, hi } => {
                    let le = features[feat] as f64 <= thr;
                    literals.push(Literal { feat, thr, le });
                    i = if le { lo } else { hi };
                }
            }
        }
    }

    /// Every root-to-leaf path, in node order of the leaves.
    pub fn paths(&self) -> Vec<TreePath<L>> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((i, lits)) = stack.pop() {
            match self.nodes[i] {
                Node::Leaf { leaf } => out.push(TreePath { literals: lits, leaf, node: i }),
                Node::Split { feat, thr, lo, hi } => {
                    let mut l = lits.clone();
                    l.push(Literal { feat, thr, le: true });
                    let mut h = lits;
                    h.push(Literal { feat, thr, le: false });
                    stack.push((hi, h));
                    stack.push((lo, l));
                }
            }
        }
        out.sort_by_key(|p| p.node);
        out
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| matches!(self.nodes[i], Node::Leaf { .. })).collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn depth(&self) -> usize {
        fn go<L>(nodes: &[Node<L>], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { lo, hi, .. } => 1 + go(nodes, lo).max(go(nodes, hi)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Structural checks: in-range forward child links, each node reached
    /// exactly once, half-integer thresholds, features below `width`.
    fn check(&self, width: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Split { feat, thr, lo, hi } = *n {
                if feat >= width {
                    return Err(format!("node {i} splits on feature {feat} of {width}"));
                }
                if !thr.is_finite() || (thr - 0.5).fract() != 0.0 {
                    return Err(format!("node {i} threshold {thr} is not a half-integer"));
                }
                for c in [lo, hi] {
                    if c <= i || c >= self.nodes.len() {
                        return Err(format!("node {i} has bad child {c}"));
                    }
                    parents[c] += 1;
                }
            }
        }
        if let Some(i) = (1..self.nodes.len()).find(|&i| parents[i] != 1) {
            return Err(format!("node {i} has {} parents", parents[i]));
        }
        Ok(())
    }
}

/// A voting ensemble; a single tree is a forest of one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Forest<L> {
    pub trees: Vec<DecisionTree<L>>,
}

/// The magic book: a forest over plant features voting on actions.
pub type TreePolicy = Forest<Action>;

impl<L: Label> Forest<L> {
    pub fn single(tree: DecisionTree<L>) -> Self {
        Forest { trees: vec![tree] }
    }

    pub fn is_single(&self) -> bool {
        self.trees.len() == 1
    }

    pub fn validate(&self, width: usize) -> Result<(), BookError> {
        if self.trees.is_empty() {
            return Err(BookError::NoTrees);
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.check(width).map_err(|msg| BookError::Malformed { tree: t, msg })?;
        }
        Ok(())
    }

    pub fn leaf_tuple(&self, features: &[i32]) -> Vec<usize> {
        self.trees.iter().map(|t| t.leaf_index(features)).collect()
    }

    /// Most voted label among `labels`; ties go to the smallest label.
    pub fn tally(labels: impl IntoIterator<Item = L>) -> L {
        let mut counts: Vec<(L, usize)> = Vec::new();
        for l in labels {
            match counts.iter_mut().find(|(x, _)| *x == l) {
                Some(c) => c.1 += 1,
                None => counts.push((l, 1)),
            }
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|c| c.0)
            .expect("empty vote")
    }

    pub fn predict(&self, features: &[i32]) -> L {
        if let [t] = self.trees.as_slice() {
            return t.predict(features);
        }
        Self::tally(self.trees.iter().map(|t| t.predict(features)))
    }

    /// Vote outcome of a leaf tuple as returned by [`Forest::leaf_tuple`].
    pub fn vote_of_leaves(&self, leaves: &[usize]) -> L {
        Self::tally(self.trees.iter().zip(leaves).map(|(t, &i)| t.label_of(i)))
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(|t| t.depth()).max().unwrap_or(0)
    }
}

impl TreePolicy {
    pub fn from_json(s: &str, width: usize) -> Result<Self, LoadError> {
        let f: TreePolicy = serde_json::from_str(s).map_err(LoadError::Parse)?;
        f.validate(width).map_err(LoadError::Book)?;
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }
}

/// `book_action`: the forest's vote on the state's features.
pub fn book_action(book: &TreePolicy, s: &GridState) -> Action {
    book.predict(&s.features())
}

impl Policy for TreePolicy {
    fn act(&self, s: &GridState, _rng: &mut SimRng) -> Action {
        book_action(self, s)
    }
}

/// Labeled rows of integer features.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset<L> {
    pub width: usize,
    pub features: Vec<i32>,
    pub labels: Vec<L>,
}

pub type LabeledDataset = Dataset<Action>;

impl<L: Label> Dataset<L> {
    pub fn new(width: usize) -> Self {
        Dataset { width, features: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, features: &[i32], label: L) -> Result<(), BookError> {
        if features.len() != self.width {
            return Err(BookError::Width { got: features.len(), expected: self.width });
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[i32] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[i32], L)> + '_ {
        (0..self.len()).map(move |i| (self.row(i), self.labels[i]))
    }

    pub fn extend(&mut self, other: Dataset<L>) {
        assert_eq!(self.width, other.width);
        self.features.extend(other.features);
        self.labels.extend(other.labels);
    }
}

/// Display names for the plant features: `dx1, dy1, dx2, ...`.
pub fn feature_names(k: usize) -> Vec<String> {
    (1..=k).flat_map(|i| [format!("dx{i}"), format!("dy{i}")]).collect()
}
