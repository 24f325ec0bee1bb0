//! Graphviz export of decision trees.

use std::fmt::{Debug, Write};

use crate::magicbook::{DecisionTree, Forest, Label, Node};

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn write_tree<L: Label>(out: &mut String, t: &DecisionTree<L>, names: &[String], prefix: &str, label: &impl Fn(L) -> String) {
    for (i, n) in t.nodes.iter().enumerate() {
        match *n {
            Node::Split { feat, thr, lo, hi } => {
                let name = names.get(feat).cloned().unwrap_or_else(|| format!("f{feat}"));
                let _ = writeln!(out, "  {prefix}{i} [shape=box, label=\"{} <= {thr}\"];", escape(&name));
                let _ = writeln!(out, "  {prefix}{i} -> {prefix}{lo} [label=\"true\"];");
                let _ = writeln!(out, "  {prefix}{i} -> {prefix}{hi} [label=\"false\"];");
            }
            Node::Leaf { leaf } => {
                let _ = writeln!(out, "  {prefix}{i} [shape=ellipse, label=\"{}\"];", escape(&label(leaf)));
            }
        }
    }
}

/// One `digraph`; leaves are labeled with `Debug` of the label, lowercased.
pub fn tree_to_dot<L: Label + Debug>(t: &DecisionTree<L>, names: &[String]) -> String {
    let mut out = String::from("digraph tree {\n");
    write_tree(&mut out, t, names, "n", &|l| format!("{l:?}").to_lowercase());
    out.push_str("}\n");
    out
}

/// All trees of a forest as clusters of one `digraph`.
pub fn forest_to_dot<L: Label + Debug>(f: &Forest<L>, names: &[String]) -> String {
    let mut out = String::from("digraph forest {\n");
    for (k, t) in f.trees.iter().enumerate() {
        let _ = writeln!(out, "  subgraph cluster_{k} {{\n  label=\"tree {k}\";");
        write_tree(&mut out, t, names, &format!("t{k}_"), &|l| format!("{l:?}").to_lowercase());
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magicbook::feature_names;
    use crate::plant::Action;

    /// Minimal recognizer for the subset of DOT emitted above.
    fn well_formed(dot: &str) -> bool {
        let mut depth = 0i32;
        let mut in_str = false;
        let mut prev = ' ';
        for ch in dot.chars() {
            match ch {
                '"' if prev != '\\' => in_str = !in_str,
                '{' if !in_str => depth += 1,
                '}' if !in_str => {
                    depth -= 1;
                    if depth < 0 {
                        return false;
                    }
                }
                _ => {}
            }
            prev = ch;
        }
        let head = dot.starts_with("digraph ");
        let stmts = dot.lines().skip(1).all(|l| {
            let l = l.trim();
            l.is_empty() || l == "}" || l.ends_with(';') || l.ends_with('{') || l.starts_with("subgraph")
        });
        depth == 0 && !in_str && head && stmts
    }

    fn sample() -> DecisionTree<Action> {
        DecisionTree {
            nodes: vec![
                Node::Split { feat: 1, thr: -0.5, lo: 1, hi: 2 },
                Node::Leaf { leaf: Action::Down },
                Node::Leaf { leaf: Action::Up },
            ],
        }
    }

    #[test]
    fn tree_dot() {
        let d = tree_to_dot(&sample(), &feature_names(1));
        assert!(well_formed(&d), "{d}");
        assert!(d.contains("n0 [shape=box, label=\"dy1 <= -0.5\"];"));
        assert!(d.contains("n0 -> n1 [label=\"true\"];"));
        assert!(d.contains("n2 [shape=ellipse, label=\"up\"];"));
    }

    #[test]
    fn forest_dot() {
        let f = Forest { trees: vec![sample(), DecisionTree::leaf(Action::Left)] };
        let d = forest_to_dot(&f, &[]);
        assert!(well_formed(&d), "{d}");
        assert!(d.contains("t1_0 [shape=ellipse, label=\"left\"];"));
        assert!(d.contains("f1 <= -0.5"));
    }

    #[test]
    fn names_are_escaped() {
        let d = tree_to_dot(&sample(), &["a".into(), "q\"uote".into()]);
        assert!(well_formed(&d));
        assert!(d.contains("q\\\"uote"));
    }
}
