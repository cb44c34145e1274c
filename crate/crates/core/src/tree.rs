//! Binary axis-aligned trees shared by policies, explanation trees and
//! guidance trees.
//!
//! Routing rule: a row goes left when `x[feature] < threshold`, otherwise
//! right. Ties therefore go right.

use std::fmt::Write as _;
use std::ops::Index;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::{ExperimentTable, ScalarizationWeights};
use crate::error::{Error, Result};

/// A tree node. Serializes as `{feature, threshold, left, right}` for
/// internal nodes and as the bare leaf payload object for leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node<L> {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node<L>>,
        right: Box<Node<L>>,
    },
    Leaf(L),
}

impl<L> Node<L> {
    pub fn split(feature: usize, threshold: f64, left: Node<L>, right: Node<L>) -> Self {
        Node::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf(_))
    }

    pub fn route<X>(&self, x: &X) -> &L
    where
        X: Index<usize, Output = f64> + ?Sized,
    {
        self.route_with_index(x).1
    }

    /// Leaf reached by `x` and its position in left-to-right leaf order.
    pub fn route_with_index<X>(&self, x: &X) -> (usize, &L)
    where
        X: Index<usize, Output = f64> + ?Sized,
    {
        let mut node = self;
        let mut offset = 0;
        loop {
            match node {
                Node::Leaf(l) => return (offset, l),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if x[*feature] < *threshold {
                        node = left;
                    } else {
                        offset += left.n_leaves();
                        node = right;
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&L> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a L>) {
        match self {
            Node::Leaf(l) => out.push(l),
            Node::Split { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    pub fn map_leaves<M>(self, f: &mut impl FnMut(L) -> M) -> Node<M> {
        match self {
            Node::Leaf(l) => Node::Leaf(f(l)),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let left = left.map_leaves(f);
                let right = right.map_leaves(f);
                Node::split(feature, threshold, left, right)
            }
        }
    }

    /// Root-to-leaf predicates, in left-to-right leaf order.
    pub fn paths(&self) -> Vec<(Predicate, &L)> {
        let mut out = Vec::new();
        self.collect_paths(&mut Vec::new(), &mut out);
        out
    }

    fn collect_paths<'a>(&'a self, prefix: &mut Vec<Clause>, out: &mut Vec<(Predicate, &'a L)>) {
        match self {
            Node::Leaf(l) => out.push((Predicate(prefix.clone()), l)),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                prefix.push(Clause {
                    feature: *feature,
                    op: Op::Lt,
                    threshold: *threshold,
                });
                left.collect_paths(prefix, out);
                prefix.pop();
                prefix.push(Clause {
                    feature: *feature,
                    op: Op::Ge,
                    threshold: *threshold,
                });
                right.collect_paths(prefix, out);
                prefix.pop();
            }
        }
    }

    /// Largest feature index used by any split.
    pub fn max_feature(&self) -> Option<usize> {
        match self {
            Node::Leaf(_) => None,
            Node::Split {
                feature,
                left,
                right,
                ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }

    /// Routes `rows` and groups them by leaf, in leaf order. Each group keeps
    /// the input order.
    pub fn partition(&self, features: ArrayView2<'_, f64>, rows: &[usize]) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_leaves()];
        for &i in rows {
            let row = features.row(i);
            let (leaf, _) = self.route_with_index(&row);
            groups[leaf].push(i);
        }
        groups
    }
}

/// A tree plus the feature names it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub feature_names: Vec<String>,
    pub root: Node<L>,
}

impl<L> Tree<L> {
    pub fn new(feature_names: Vec<String>, root: Node<L>) -> Self {
        Self {
            feature_names,
            root,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn check_schema(&self, n_features: usize) -> Result<()> {
        if self.feature_names.len() != n_features {
            return Err(Error::dim(format!(
                "tree was fitted on {} features, input has {n_features}",
                self.feature_names.len()
            )));
        }
        if let Some(f) = self.root.max_feature() {
            if f >= n_features {
                return Err(Error::dim(format!(
                    "tree splits on feature {f} but input has {n_features}"
                )));
            }
        }
        Ok(())
    }
}

/// Leaf payload of a policy tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmLeaf {
    pub arm: usize,
}

/// Deterministic policy `Π: ℝ^P → {0..K}` as a tree with arm-labelled leaves.
pub type PolicyTree = Tree<ArmLeaf>;

impl PolicyTree {
    pub fn constant(feature_names: Vec<String>, arm: usize) -> Self {
        Tree::new(feature_names, Node::Leaf(ArmLeaf { arm }))
    }

    /// Fails if any leaf names an arm outside `0..n_arms`.
    pub fn check_arms(&self, n_arms: usize) -> Result<()> {
        match self.root.leaves().into_iter().find(|l| l.arm >= n_arms) {
            Some(l) => Err(Error::dim(format!(
                "policy assigns arm {} but only {n_arms} arms exist",
                l.arm
            ))),
            None => Ok(()),
        }
    }
}

/// Arm assigned to `x` by `policy`.
pub fn apply_policy<X>(policy: &PolicyTree, x: &X) -> usize
where
    X: Index<usize, Output = f64> + ?Sized,
{
    policy.root.route(x).arm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub feature: usize,
    pub op: Op,
    pub threshold: f64,
}

impl Clause {
    pub fn matches<X>(&self, x: &X) -> bool
    where
        X: Index<usize, Output = f64> + ?Sized,
    {
        match self.op {
            Op::Lt => x[self.feature] < self.threshold,
            Op::Ge => x[self.feature] >= self.threshold,
        }
    }
}

/// Conjunction of clauses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Predicate(pub Vec<Clause>);

impl Predicate {
    pub fn clauses(&self) -> &[Clause] {
        &self.0
    }

    pub fn matches<X>(&self, x: &X) -> bool
    where
        X: Index<usize, Output = f64> + ?Sized,
    {
        self.0.iter().all(|c| c.matches(x))
    }

    /// Per-feature ranges, e.g. `4.5 <= days < 10.5 and ast < 40`.
    pub fn describe(&self, feature_names: &[String]) -> String {
        if self.0.is_empty() {
            return "all".to_string();
        }
        let mut features: Vec<usize> = self.0.iter().map(|c| c.feature).collect();
        features.sort_unstable();
        features.dedup();
        let parts: Vec<String> = features
            .into_iter()
            .map(|f| {
                let lower = self
                    .0
                    .iter()
                    .filter(|c| c.feature == f && c.op == Op::Ge)
                    .map(|c| c.threshold)
                    .reduce(f64::max);
                let upper = self
                    .0
                    .iter()
                    .filter(|c| c.feature == f && c.op == Op::Lt)
                    .map(|c| c.threshold)
                    .reduce(f64::min);
                let name = feature_name(feature_names, f);
                match (lower, upper) {
                    (Some(lo), Some(hi)) => {
                        format!("{} <= {name} < {}", fmt_threshold(lo), fmt_threshold(hi))
                    }
                    (Some(lo), None) => format!("{name} >= {}", fmt_threshold(lo)),
                    (None, Some(hi)) => format!("{name} < {}", fmt_threshold(hi)),
                    (None, None) => unreachable!(),
                }
            })
            .collect();
        parts.join(" and ")
    }
}

pub(crate) fn feature_name(names: &[String], f: usize) -> String {
    names.get(f).cloned().unwrap_or_else(|| format!("feature{f}"))
}

/// Compact threshold text for human-facing renderings. JSON keeps full
/// precision.
pub fn fmt_threshold(t: f64) -> String {
    if t == 0.0 {
        return "0".into();
    }
    if t.abs() >= 1e-3 && t.abs() < 1e6 {
        let s = format!("{t:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" {
            "0".into()
        } else {
            s.to_string()
        }
    } else {
        format!("{t:.3e}")
    }
}

/// Mean scalarized outcome of one arm within a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStat {
    pub count: usize,
    pub mean: Option<f64>,
}

/// A set of rows selected by a conjunctive predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub row_indices: Vec<usize>,
    pub predicate: Predicate,
    pub arm_stats: Vec<ArmStat>,
}

impl Segment {
    pub(crate) fn from_rows(
        row_indices: Vec<usize>,
        predicate: Predicate,
        table: &ExperimentTable,
        scalarized: &[f64],
    ) -> Self {
        let mut sums = vec![0.0; table.n_arms()];
        let mut counts = vec![0usize; table.n_arms()];
        for &i in &row_indices {
            let w = table.treatment()[i];
            sums[w] += scalarized[i];
            counts[w] += 1;
        }
        let arm_stats = counts
            .iter()
            .zip(&sums)
            .map(|(&count, &s)| ArmStat {
                count,
                mean: (count > 0).then(|| s / count as f64),
            })
            .collect();
        Self {
            row_indices,
            predicate,
            arm_stats,
        }
    }
}

/// One segment per leaf, in left-to-right leaf order. Segments partition the
/// table's rows; an out-of-sample table may leave some segment empty.
pub fn unroll_tree<L>(
    tree: &Tree<L>,
    table: &ExperimentTable,
    weights: &ScalarizationWeights,
) -> Result<Vec<Segment>> {
    tree.check_schema(table.n_features())?;
    let scalarized = table.scalarized_outcomes(weights)?;
    let all: Vec<usize> = (0..table.n_rows()).collect();
    let groups = tree.root.partition(table.features(), &all);
    Ok(tree
        .root
        .paths()
        .into_iter()
        .zip(groups)
        .map(|((pred, _), rows)| Segment::from_rows(rows, pred, table, &scalarized))
        .collect())
}

/// Nested if-else text. `leaf_text` renders the action clause, e.g.
/// `assign control`.
pub fn render_if_else<L>(
    root: &Node<L>,
    feature_names: &[String],
    leaf_text: &dyn Fn(&L) -> String,
) -> String {
    let mut out = String::new();
    match root {
        Node::Leaf(l) => {
            let text = leaf_text(l);
            let mut chars = text.chars();
            let cap = match chars.next() {
                Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
                None => String::new(),
            };
            let _ = writeln!(out, "{cap} for everyone.");
        }
        _ => render_node(root, feature_names, leaf_text, 0, &mut out),
    }
    out
}

fn render_node<L>(
    node: &Node<L>,
    names: &[String],
    leaf_text: &dyn Fn(&L) -> String,
    indent: usize,
    out: &mut String,
) {
    let pad = "  ".repeat(indent);
    if let Node::Split {
        feature,
        threshold,
        left,
        right,
    } = node
    {
        let cond = format!("{} < {}", feature_name(names, *feature), fmt_threshold(*threshold));
        match left.as_ref() {
            Node::Leaf(l) => {
                let _ = writeln!(out, "{pad}If {cond}, {}.", leaf_text(l));
            }
            inner => {
                let _ = writeln!(out, "{pad}If {cond}:");
                render_node(inner, names, leaf_text, indent + 1, out);
            }
        }
        match right.as_ref() {
            Node::Leaf(l) => {
                let _ = writeln!(out, "{pad}Otherwise, {}.", leaf_text(l));
            }
            inner => {
                let _ = writeln!(out, "{pad}Otherwise:");
                render_node(inner, names, leaf_text, indent + 1, out);
            }
        }
    }
}

/// Human name of an arm: `control`, `treatment`, or `treatment k`.
pub fn arm_label(arm: usize, n_arms: usize) -> String {
    match arm {
        0 => "control".to_string(),
        1 if n_arms <= 2 => "treatment".to_string(),
        k => format!("treatment {k}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn names(p: usize) -> Vec<String> {
        crate::data::default_feature_names(p)
    }

    fn stump() -> PolicyTree {
        Tree::new(
            names(2),
            Node::split(0, 0.0, Node::Leaf(ArmLeaf { arm: 0 }), Node::Leaf(ArmLeaf { arm: 2 })),
        )
    }

    #[test]
    fn apply_policy_examples() {
        let leaf = PolicyTree::constant(names(2), 1);
        assert_eq!(apply_policy(&leaf, &[3.0, -7.0][..]), 1);
        let t = stump();
        assert_eq!(apply_policy(&t, &[-1.0, 5.0][..]), 0);
        assert_eq!(apply_policy(&t, &[0.0, 5.0][..]), 2);
    }

    #[test]
    fn unroll_depth_zero_and_one() {
        let table = ExperimentTable::new(
            array![[-1.0], [1.0], [-1.0], [1.0]],
            vec![0, 1, 1, 0],
            array![[1.0], [2.0], [3.0], [4.0]],
            None,
            names(1),
        )
        .unwrap();
        let w = ScalarizationWeights::ones(1);
        let leaf = PolicyTree::constant(names(1), 0);
        let segs = unroll_tree(&leaf, &table, &w).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].row_indices, vec![0, 1, 2, 3]);
        assert!(segs[0].predicate.0.is_empty());

        let t = Tree::new(
            names(1),
            Node::split(0, 0.0, Node::Leaf(ArmLeaf { arm: 0 }), Node::Leaf(ArmLeaf { arm: 1 })),
        );
        let segs = unroll_tree(&t, &table, &w).unwrap();
        assert_eq!(segs[0].row_indices, vec![0, 2]);
        assert_eq!(segs[1].row_indices, vec![1, 3]);
        assert_eq!(segs[0].arm_stats[1].mean, Some(3.0));
        assert_eq!(segs[1].arm_stats[0].mean, Some(4.0));
    }

    #[test]
    fn unroll_schema_mismatch() {
        let table = ExperimentTable::new(array![[1.0]], vec![0], array![[1.0]], None, names(1))
            .unwrap();
        let err = unroll_tree(&stump(), &table, &ScalarizationWeights::ones(1)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn json_shape() {
        let json = serde_json::to_string(&stump().root).unwrap();
        assert_eq!(
            json,
            r#"{"feature":0,"threshold":0.0,"left":{"arm":0},"right":{"arm":2}}"#
        );
        let back: Node<ArmLeaf> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, stump().root);
    }

    #[test]
    fn predicate_description() {
        let p = Predicate(vec![
            Clause { feature: 0, op: Op::Ge, threshold: 4.5 },
            Clause { feature: 1, op: Op::Lt, threshold: 40.0 },
            Clause { feature: 0, op: Op::Lt, threshold: 10.5 },
        ]);
        let n = vec!["days".to_string(), "ast".to_string()];
        assert_eq!(p.describe(&n), "4.5 <= days < 10.5 and ast < 40");
    }

    #[test]
    fn if_else_rendering() {
        let t = Tree::new(
            names(1),
            Node::split(
                0,
                -0.019,
                Node::Leaf(ArmLeaf { arm: 0 }),
                Node::Leaf(ArmLeaf { arm: 1 }),
            ),
        );
        let text = render_if_else(&t.root, &t.feature_names, &|l: &ArmLeaf| {
            format!("assign {}", arm_label(l.arm, 2))
        });
        assert_eq!(text, "If feature0 < -0.019, assign control.\nOtherwise, assign treatment.\n");
    }

    fn arb_tree(depth: u32) -> impl Strategy<Value = Node<ArmLeaf>> {
        let leaf = (0usize..3).prop_map(|arm| Node::Leaf(ArmLeaf { arm }));
        leaf.prop_recursive(depth, 16, 2, |inner| {
            (0usize..2, -2.0f64..2.0, inner.clone(), inner)
                .prop_map(|(f, t, l, r)| Node::split(f, t, l, r))
        })
    }

    proptest! {
        #[test]
        fn unroll_partitions_rows(
            root in arb_tree(4),
            xs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40),
        ) {
            let n = xs.len();
            let features = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { xs[i].0 } else { xs[i].1 });
            let table = ExperimentTable::with_arm_count(
                features, vec![0; n], Array2::zeros((n, 1)), None, names(2), 3,
            ).unwrap();
            let tree = Tree::new(names(2), root);
            let segs = unroll_tree(&tree, &table, &ScalarizationWeights::ones(1)).unwrap();
            prop_assert_eq!(segs.len(), tree.root.n_leaves());
            let mut seen = vec![0usize; n];
            for s in &segs {
                for &i in &s.row_indices {
                    seen[i] += 1;
                    let row = table.feature_row(i);
                    prop_assert!(s.predicate.matches(&row));
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn apply_is_deterministic(root in arb_tree(4), x0 in -3.0f64..3.0, x1 in -3.0f64..3.0) {
            let tree = Tree::new(names(2), root);
            let x = [x0, x1];
            prop_assert_eq!(apply_policy(&tree, &x[..]), apply_policy(&tree, &x[..]));
        }
    }
}
