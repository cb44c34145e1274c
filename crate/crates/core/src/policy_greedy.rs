//! Policy trees learned directly from HTE predictions.
//!
//! `greedy_tree_search` grows a tree whose node value is the best per-arm
//! sum of scalarized predictions; `distill_policy` fits a Gini
//! classification tree to the naive per-row argmax policy.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{argmax_lowest, ExperimentTable, PotentialPredictionMatrix, ScalarizationWeights};
use crate::error::{Error, Result};
use crate::split::{grow, SplitCriterion, SplitSearch, DEFAULT_MAX_THRESHOLDS};
use crate::tree::{ArmLeaf, Node, PolicyTree, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_thresholds: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            max_depth: 2,
            min_leaf: 1,
            max_thresholds: DEFAULT_MAX_THRESHOLDS,
        }
    }
}

impl GreedyConfig {
    fn search(&self) -> Result<SplitSearch> {
        if self.min_leaf == 0 {
            return Err(Error::config("min_leaf must be at least 1"));
        }
        if self.max_thresholds == 0 {
            return Err(Error::config("max_thresholds must be at least 1"));
        }
        Ok(SplitSearch {
            min_leaf: self.min_leaf,
            max_thresholds: self.max_thresholds,
        })
    }
}

/// Per-arm sums `M̂_j(S)` of a segment and the best of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub arm_sums: Vec<f64>,
    pub best_value: f64,
    pub best_arm: usize,
}

impl NodeValue {
    pub fn of(values: &Array2<f64>, rows: &[usize]) -> Self {
        let arm_sums: Vec<f64> = (0..values.ncols())
            .map(|k| rows.iter().map(|&i| values[[i, k]]).sum())
            .collect();
        let best_arm = argmax_lowest(arm_sums.iter().copied());
        Self {
            best_value: arm_sums[best_arm],
            best_arm,
            arm_sums,
        }
    }
}

/// Sum of per-column maxima, `max_j L_j + max_j R_j`.
pub(crate) struct ColumnSums<'a> {
    pub values: &'a Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct SumStats {
    sums: Vec<f64>,
    abs_max: f64,
}

fn best_sum(s: &SumStats) -> f64 {
    s.sums.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl SplitCriterion for ColumnSums<'_> {
    type Stats = SumStats;

    fn node_stats(&self, rows: &[usize]) -> SumStats {
        let mut s = SumStats {
            sums: vec![0.0; self.values.ncols()],
            abs_max: 0.0,
        };
        for &i in rows {
            self.add(&mut s, i);
        }
        s
    }

    fn empty_like(&self, parent: &SumStats) -> SumStats {
        SumStats {
            sums: vec![0.0; parent.sums.len()],
            abs_max: 0.0,
        }
    }

    fn add(&self, s: &mut SumStats, row: usize) {
        let r = self.values.row(row);
        for (acc, v) in s.sums.iter_mut().zip(r) {
            *acc += v;
        }
        s.abs_max += r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }

    fn remove(&self, s: &mut SumStats, row: usize) {
        let r = self.values.row(row);
        for (acc, v) in s.sums.iter_mut().zip(r) {
            *acc -= v;
        }
        s.abs_max -= r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }

    fn baseline(&self, parent: &SumStats) -> Option<f64> {
        Some(best_sum(parent))
    }

    fn score(&self, left: &SumStats, right: &SumStats) -> Option<f64> {
        Some(best_sum(left) + best_sum(right))
    }

    fn scale(&self, parent: &SumStats) -> f64 {
        parent.abs_max
    }
}

/// Greedy tree over an `N × A` value matrix; each leaf holds the column
/// with the largest sum over its rows (ties to the lowest column).
pub(crate) fn greedy_columns_tree(
    features: ArrayView2<'_, f64>,
    values: &Array2<f64>,
    rows: &[usize],
    max_depth: usize,
    search: &SplitSearch,
) -> Node<usize> {
    let crit = ColumnSums { values };
    grow(&crit, features, rows, Some(max_depth), search)
        .map_leaves(&mut |leaf_rows: Vec<usize>| NodeValue::of(values, &leaf_rows).best_arm)
}

pub fn greedy_tree_search(
    table: &ExperimentTable,
    preds: &PotentialPredictionMatrix,
    weights: &ScalarizationWeights,
    config: &GreedyConfig,
) -> Result<PolicyTree> {
    preds.check_against(table)?;
    let values = preds.scalarized(weights)?;
    greedy_tree_from_values(table.features(), table.feature_names(), &values, config)
}

/// Greedy search on an explicit per-row, per-arm value matrix.
pub fn greedy_tree_from_values(
    features: ArrayView2<'_, f64>,
    feature_names: &[String],
    values: &Array2<f64>,
    config: &GreedyConfig,
) -> Result<PolicyTree> {
    let search = config.search()?;
    if features.nrows() == 0 {
        return Err(Error::Invalid("cannot learn a policy from zero rows".into()));
    }
    if values.nrows() != features.nrows() || values.ncols() == 0 {
        return Err(Error::dim(format!(
            "value matrix is {}×{} for {} rows",
            values.nrows(),
            values.ncols(),
            features.nrows()
        )));
    }
    let rows: Vec<usize> = (0..features.nrows()).collect();
    let root = greedy_columns_tree(features, values, &rows, config.max_depth, &search)
        .map_leaves(&mut |arm| ArmLeaf { arm });
    Ok(Tree::new(feature_names.to_vec(), root))
}

/// In-sample predicted value `(1/N) Σ_i Ŷ_i^(Π(X_i))`.
pub fn predicted_policy_value(
    policy: &PolicyTree,
    table: &ExperimentTable,
    preds: &PotentialPredictionMatrix,
    weights: &ScalarizationWeights,
) -> Result<f64> {
    preds.check_against(table)?;
    policy.check_schema(table.n_features())?;
    policy.check_arms(preds.n_arms())?;
    let values = preds.scalarized(weights)?;
    let total: f64 = (0..table.n_rows())
        .map(|i| values[[i, policy.root.route(&table.feature_row(i)).arm]])
        .sum();
    Ok(total / table.n_rows() as f64)
}

/// Weighted Gini impurity `n − Σ_c n_c² / n`.
struct Gini<'a> {
    labels: &'a [usize],
    n_classes: usize,
}

fn impurity(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    if n == 0.0 {
        return 0.0;
    }
    n - counts.iter().map(|c| c * c).sum::<f64>() / n
}

impl SplitCriterion for Gini<'_> {
    type Stats = Vec<f64>;

    fn node_stats(&self, rows: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_classes];
        for &i in rows {
            c[self.labels[i]] += 1.0;
        }
        c
    }

    fn empty_like(&self, _: &Vec<f64>) -> Vec<f64> {
        vec![0.0; self.n_classes]
    }

    fn add(&self, s: &mut Vec<f64>, row: usize) {
        s[self.labels[row]] += 1.0;
    }

    fn remove(&self, s: &mut Vec<f64>, row: usize) {
        s[self.labels[row]] -= 1.0;
    }

    fn baseline(&self, parent: &Vec<f64>) -> Option<f64> {
        Some(-impurity(parent))
    }

    fn score(&self, left: &Vec<f64>, right: &Vec<f64>) -> Option<f64> {
        Some(-(impurity(left) + impurity(right)))
    }

    fn scale(&self, parent: &Vec<f64>) -> f64 {
        parent.iter().sum()
    }
}

/// CART classifier on per-row arm labels; leaves take the majority label.
pub fn distill_policy(
    table: &ExperimentTable,
    labels: &[usize],
    config: &GreedyConfig,
) -> Result<PolicyTree> {
    let search = config.search()?;
    if labels.len() != table.n_rows() {
        return Err(Error::dim(format!(
            "{} labels for {} rows",
            labels.len(),
            table.n_rows()
        )));
    }
    let n_classes = labels.iter().copied().max().map_or(1, |m| m + 1).max(table.n_arms());
    let crit = Gini { labels, n_classes };
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    let root = grow(&crit, table.features(), &rows, Some(config.max_depth), &search)
        .map_leaves(&mut |leaf_rows: Vec<usize>| ArmLeaf {
            arm: argmax_lowest(crit.node_stats(&leaf_rows)),
        });
    Ok(Tree::new(table.feature_names().to_vec(), root))
}

/// Fraction of rows whose policy arm equals the label.
pub fn training_accuracy(policy: &PolicyTree, table: &ExperimentTable, labels: &[usize]) -> f64 {
    let hits = (0..table.n_rows())
        .filter(|&i| policy.root.route(&table.feature_row(i)).arm == labels[i])
        .count();
    hits as f64 / table.n_rows() as f64
}
