//! CART fitting with Gini impurity.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BookError, Dataset, DecisionTree, Forest, Label, Node};
use crate::par::{self, Exec};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `ceil(sqrt(width))` candidate features per split.
    #[default]
    Sqrt,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub n_trees: usize,
    /// `None` grows until every leaf is pure or unsplittable.
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub max_features: MaxFeatures,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { n_trees: 5, max_depth: Some(7), bootstrap: true, max_features: MaxFeatures::Sqrt, seed: 0 }
    }
}

impl FitOptions {
    /// A single deterministic tree over all rows and all features.
    pub fn tree(max_depth: Option<usize>) -> Self {
        FitOptions { n_trees: 1, max_depth, bootstrap: false, max_features: MaxFeatures::All, seed: 0 }
    }

    pub fn forest(n_trees: usize, max_depth: Option<usize>, seed: u64) -> Self {
        FitOptions { n_trees, max_depth, seed, ..Default::default() }
    }
}

/// Plain CART on the whole dataset.
pub fn fit_tree<L: Label>(d: &Dataset<L>, max_depth: Option<usize>) -> Result<DecisionTree<L>, BookError> {
    let prep = Prepared::new(d)?;
    let mut idx: Vec<u32> = (0..d.len() as u32).collect();
    Ok(prep.grow(&mut idx, max_depth, MaxFeatures::All, None))
}

/// Random forest. Each tree draws its bootstrap sample and feature subsets
/// from its own sub-stream `("forest", t)` of `opts.seed`, so the result
/// does not depend on `exec`.
pub fn fit_forest<L: Label>(d: &Dataset<L>, opts: &FitOptions, exec: Exec) -> Result<Forest<L>, BookError> {
    if opts.n_trees == 0 {
        return Err(BookError::NoTrees);
    }
    let prep = Prepared::new(d)?;
    let n = d.len();
    let trees = par::map_range(exec, opts.n_trees, |t| {
        let mut r = rng::stream(opts.seed, "forest", t as u64);
        let mut idx: Vec<u32> = if opts.bootstrap {
            (0..n).map(|_| r.gen_range(0..n as u32)).collect()
        } else {
            (0..n as u32).collect()
        };
        prep.grow(&mut idx, opts.max_depth, opts.max_features, Some(&mut r))
    });
    Ok(Forest { trees })
}

struct Prepared<'a, L> {
    d: &'a Dataset<L>,
    classes: Vec<L>,
    y: Vec<u32>,
}

struct Split {
    feat: usize,
    thr: f64,
    score: f64,
}

impl<'a, L: Label> Prepared<'a, L> {
    fn new(d: &'a Dataset<L>) -> Result<Self, BookError> {
        if d.is_empty() {
            return Err(BookError::EmptyDataset);
        }
        let mut classes = d.labels.clone();
        classes.sort();
        classes.dedup();
        let y = d.labels.iter().map(|l| classes.binary_search(l).unwrap() as u32).collect();
        Ok(Prepared { d, classes, y })
    }

    fn grow(
        &self,
        idx: &mut [u32],
        max_depth: Option<usize>,
        mf: MaxFeatures,
        mut rng: Option<&mut SimRng>,
    ) -> DecisionTree<L> {
        let mut nodes = Vec::new();
        self.build(idx, 0, max_depth, mf, &mut rng, &mut nodes);
        DecisionTree { nodes }
    }

    fn counts(&self, idx: &[u32]) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        for &i in idx {
            c[self.y[i as usize] as usize] += 1;
        }
        c
    }

    fn build(
        &self,
        idx: &mut [u32],
        depth: usize,
        max_depth: Option<usize>,
        mf: MaxFeatures,
        rng: &mut Option<&mut SimRng>,
        nodes: &mut Vec<Node<L>>,
    ) -> usize {
        let me = nodes.len();
        let counts = self.counts(idx);
        // majority, smallest class on ties
        let major = (0..counts.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
        nodes.push(Node::Leaf { leaf: self.classes[major] });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || max_depth.is_some_and(|m| depth >= m) {
            return me;
        }
        let Some(split) = self.best_split(idx, mf, rng) else {
            return me;
        };
        let w = self.d.width;
        let x = &self.d.features;
        let mut mid = 0;
        for i in 0..idx.len() {
            if (x[idx[i] as usize * w + split.feat] as f64) <= split.thr {
                idx.swap(i, mid);
                mid += 1;
            }
        }
        let (l, h) = idx.split_at_mut(mid);
        let lo = self.build(l, depth + 1, max_depth, mf, rng, nodes);
        let hi = self.build(h, depth + 1, max_depth, mf, rng, nodes);
        nodes[me] = Node::Split { feat: split.feat, thr: split.thr, lo, hi };
        me
    }

    fn best_split(&self, idx: &[u32], mf: MaxFeatures, rng: &mut Option<&mut SimRng>) -> Option<Split> {
        let w = self.d.width;
        let mut order: Vec<usize> = (0..w).collect();
        let quota = match mf {
            MaxFeatures::All => w,
            MaxFeatures::Sqrt => {
                if let Some(r) = rng.as_deref_mut() {
                    order.shuffle(r);
                }
                ((w as f64).sqrt().ceil() as usize).max(1)
            }
        };
        let mut best: Option<Split> = None;
        let mut tried = 0;
        for &j in &order {
            if tried == quota {
                break;
            }
            let Some(s) = self.best_on_feature(idx, j) else { continue };
            tried += 1;
            if best.as_ref().is_none_or(|b| s.score > b.score + 1e-9 * idx.len() as f64) {
                best = Some(s);
            }
        }
        best
    }

    /// Best threshold on feature `j`, scored by `Σ c²/n` over both sides
    /// (larger is purer). `None` when the feature is constant.
    fn best_on_feature(&self, idx: &[u32], j: usize) -> Option<Split> {
        let w = self.d.width;
        let x = &self.d.features;
        let nc = self.classes.len();
        let val = |i: u32| x[i as usize * w + j];
        let (mut vmin, mut vmax) = (i32::MAX, i32::MIN);
        for &i in idx {
            let v = val(i);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        if vmin == vmax {
            return None;
        }
        // per distinct value, ascending: (value, class counts)
        let mut groups: Vec<(i32, Vec<usize>)> = Vec::new();
        let range = (vmax as i64 - vmin as i64 + 1) as usize;
        if range <= 2 * idx.len() + 64 {
            let mut dense = vec![0usize; range * nc];
            for &i in idx {
                dense[(val(i) - vmin) as usize * nc + self.y[i as usize] as usize] += 1;
            }
            for (off, c) in dense.chunks(nc).enumerate() {
                if c.iter().any(|&n| n > 0) {
                    groups.push((vmin + off as i32, c.to_vec()));
                }
            }
        } else {
            let mut pairs: Vec<(i32, u32)> = idx.iter().map(|&i| (val(i), self.y[i as usize])).collect();
            pairs.sort_unstable();
            for (v, c) in pairs {
                match groups.last_mut() {
                    Some((gv, gc)) if *gv == v => gc[c as usize] += 1,
                    _ => {
                        let mut gc = vec![0; nc];
                        gc[c as usize] = 1;
                        groups.push((v, gc));
                    }
                }
            }
        }
        let total = self.counts(idx);
        let n = idx.len() as f64;
        let mut left = vec![0usize; nc];
        let mut nl = 0usize;
        let mut best: Option<Split> = None;
        for g in 0..groups.len() - 1 {
            for (l, c) in left.iter_mut().zip(&groups[g].1) {
                *l += c;
                nl += c;
            }
            let nr = n - nl as f64;
            let sl: f64 = left.iter().map(|&c| (c * c) as f64).sum::<f64>() / nl as f64;
            let sr: f64 = left.iter().zip(&total).map(|(&l, &t)| ((t - l) * (t - l)) as f64).sum::<f64>() / nr;
            let score = sl + sr;
            if best.as_ref().is_none_or(|b| score > b.score + 1e-9 * n) {
                let m = (groups[g].0 as i64 + groups[g + 1].0 as i64).div_euclid(2);
                best = Some(Split { feat: j, thr: m as f64 + 0.5, score });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::Action::{self, *};

    fn data(rows: &[(&[i32], Action)]) -> Dataset<Action> {
        let mut d = Dataset::new(rows[0].0.len());
        for (f, a) in rows {
            d.push(f, *a).unwrap();
        }
        d
    }

    fn accuracy<L: Label>(t: &DecisionTree<L>, d: &Dataset<L>) -> f64 {
        d.rows().filter(|(f, l)| t.predict(f) == *l).count() as f64 / d.len() as f64
    }

    #[test]
    fn separable_toy_set() {
        let mut rows = vec![];
        for _ in 0..10 {
            rows.push((&[0, 0][..], Up));
            rows.push((&[3, 0][..], Right));
        }
        let d = data(&rows);
        let t = fit_tree(&d, None).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.nodes[0], Node::Split { feat: 0, thr: 1.5, lo: 1, hi: 2 });
        assert_eq!(accuracy(&t, &d), 1.0);
    }

    #[test]
    fn thresholds_stay_half_integers_for_even_gaps() {
        let d = data(&[(&[0], Up), (&[2], Down)]);
        let t = fit_tree(&d, None).unwrap();
        assert_eq!(t.nodes[0], Node::Split { feat: 0, thr: 1.5, lo: 1, hi: 2 });
        let d = data(&[(&[-4], Up), (&[-2], Down)]);
        let t = fit_tree(&d, None).unwrap();
        assert_eq!(t.nodes[0], Node::Split { feat: 0, thr: -2.5, lo: 1, hi: 2 });
    }

    #[test]
    fn degenerate_fits() {
        let d = data(&[(&[0, 1], Left), (&[2, 3], Left)]);
        assert_eq!(fit_tree(&d, None).unwrap(), DecisionTree::leaf(Left));
        let d = data(&[(&[0], Left), (&[1], Down), (&[2], Down), (&[3], Left)]);
        // 2-2 tie goes to Down, which precedes Left
        assert_eq!(fit_tree(&d, Some(0)).unwrap(), DecisionTree::leaf(Down));
        assert_eq!(fit_tree(&Dataset::<Action>::new(2), None), Err(BookError::EmptyDataset));
    }

    #[test]
    fn unbounded_depth_fits_consistent_data() {
        // xor over two features needs a zero-gain first split
        let d = data(&[(&[0, 0], Up), (&[1, 1], Up), (&[0, 1], Down), (&[1, 0], Down)]);
        let t = fit_tree(&d, None).unwrap();
        assert_eq!(accuracy(&t, &d), 1.0);
        let mut r = rng::from_seed(3);
        let mut d = Dataset::new(3);
        for _ in 0..400 {
            let f: Vec<i32> = (0..3).map(|_| r.gen_range(-6..=6)).collect();
            let a = Action::ALL[((f[0] * f[1] + f[2]).rem_euclid(4)) as usize];
            d.push(&f, a).unwrap();
        }
        let t = fit_tree(&d, None).unwrap();
        assert_eq!(accuracy(&t, &d), 1.0);
        assert!(t.check(3).is_ok());
        let shallow = fit_tree(&d, Some(3)).unwrap();
        assert!(shallow.depth() <= 3);
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        // wide value range forces the sorting path
        let d = data(&[(&[0], Up), (&[1_000_000], Down), (&[5], Up)]);
        let t = fit_tree(&d, None).unwrap();
        assert_eq!(t.nodes[0], Node::Split { feat: 0, thr: 500_002.5, lo: 1, hi: 2 });
    }

    #[test]
    fn forest_degenerates_to_tree() {
        let mut r = rng::from_seed(1);
        let mut d = Dataset::new(4);
        for _ in 0..300 {
            let f: Vec<i32> = (0..4).map(|_| r.gen_range(-5..=5)).collect();
            let a = if f[0] + f[3] > 0 { Right } else if f[1] > 1 { Up } else { Left };
            d.push(&f, a).unwrap();
        }
        let t = fit_tree(&d, Some(5)).unwrap();
        let f = fit_forest(&d, &FitOptions::tree(Some(5)), Exec::Sequential).unwrap();
        assert_eq!(f.trees, vec![t]);
    }

    #[test]
    fn forest_is_seeded_and_exec_independent() {
        let mut r = rng::from_seed(2);
        let mut d = Dataset::new(6);
        for _ in 0..500 {
            let f: Vec<i32> = (0..6).map(|_| r.gen_range(-9..=9)).collect();
            d.push(&f, Action::ALL[(f[2].rem_euclid(4)) as usize]).unwrap();
        }
        let o = FitOptions::forest(5, Some(6), 11);
        let a = fit_forest(&d, &o, Exec::Sequential).unwrap();
        let b = fit_forest(&d, &o, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trees.len(), 5);
        assert!(a.max_depth() <= 6);
        assert_ne!(a.trees[0], a.trees[1]);
        let c = fit_forest(&d, &FitOptions::forest(5, Some(6), 12), Exec::Sequential).unwrap();
        assert_ne!(a, c);
    }
}
