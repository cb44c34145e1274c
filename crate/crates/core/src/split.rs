//! Greedy axis-aligned split search shared by every tree learner.
//!
//! Candidate thresholds are midpoints between consecutive distinct feature
//! values within a node. When a feature has more than `max_thresholds`
//! distinct boundaries, boundaries are thinned to row-count quantiles.
//!
//! Candidates are visited feature-major (ascending feature index, then
//! ascending threshold). A candidate is eligible when its score exceeds the
//! criterion's baseline by more than `SPLIT_TOLERANCE × scale`, and it replaces
//! the incumbent only when it beats the incumbent by the same margin. Exact
//! ties therefore resolve to the lowest feature, then the lowest threshold.

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::tree::Node;

/// Relative margin for "strictly greater" comparisons between split scores.
pub const SPLIT_TOLERANCE: f64 = 1e-9;

/// Default cap on candidate thresholds per feature per node.
pub const DEFAULT_MAX_THRESHOLDS: usize = 256;

const PARALLEL_MIN_WORK: usize = 8192;

/// `candidate > incumbent` beyond floating-point noise at magnitude `scale`.
pub fn strictly_greater(candidate: f64, incumbent: f64, scale: f64) -> bool {
    candidate > incumbent + SPLIT_TOLERANCE * scale.abs()
}

/// Midpoint of two consecutive distinct values, clamped so that `lo` routes
/// left and `hi` routes right under the strict `<` rule.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = 0.5 * (lo + hi);
    if t > lo && t <= hi {
        t
    } else {
        hi
    }
}

pub(crate) trait SplitCriterion: Sync {
    type Stats: Clone + Send + Sync;

    /// Sufficient statistics of a node's rows.
    fn node_stats(&self, rows: &[usize]) -> Self::Stats;
    /// Empty statistics compatible with `parent` (same centering etc).
    fn empty_like(&self, parent: &Self::Stats) -> Self::Stats;
    fn add(&self, stats: &mut Self::Stats, row: usize);
    fn remove(&self, stats: &mut Self::Stats, row: usize);
    /// Value a split must strictly exceed; `None` if the node cannot split.
    fn baseline(&self, parent: &Self::Stats) -> Option<f64>;
    /// Split score, higher is better; `None` if this split is ineligible.
    fn score(&self, left: &Self::Stats, right: &Self::Stats) -> Option<f64>;
    /// Magnitude used for the tolerance in comparisons at this node.
    fn scale(&self, parent: &Self::Stats) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SplitSearch {
    pub min_leaf: usize,
    pub max_thresholds: usize,
}

impl Default for SplitSearch {
    fn default() -> Self {
        Self {
            min_leaf: 1,
            max_thresholds: DEFAULT_MAX_THRESHOLDS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FoundSplit {
    pub feature: usize,
    pub threshold: f64,
    pub score: f64,
}

/// Rows of one node, kept sorted by each feature.
#[derive(Debug, Clone)]
pub(crate) struct NodeRows {
    ids: Vec<usize>,
    by_feature: Vec<Vec<usize>>,
}

impl NodeRows {
    pub fn new(features: ArrayView2<'_, f64>, rows: &[usize]) -> Self {
        let mut ids = rows.to_vec();
        ids.sort_unstable();
        let by_feature = (0..features.ncols())
            .map(|f| {
                let mut order = ids.clone();
                // stable on ascending ids, so equal values keep row order
                order.sort_by(|&a, &b| features[[a, f]].total_cmp(&features[[b, f]]));
                order
            })
            .collect();
        Self { ids, by_feature }
    }

    /// Row ids in ascending order.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn split(self, features: ArrayView2<'_, f64>, feature: usize, threshold: f64) -> (Self, Self) {
        let goes_left = |i: usize| features[[i, feature]] < threshold;
        let (l_ids, r_ids): (Vec<usize>, Vec<usize>) = self.ids.iter().partition(|&&i| goes_left(i));
        let mut l_by = Vec::with_capacity(self.by_feature.len());
        let mut r_by = Vec::with_capacity(self.by_feature.len());
        for order in self.by_feature {
            let (l, r): (Vec<usize>, Vec<usize>) = order.into_iter().partition(|&i| goes_left(i));
            l_by.push(l);
            r_by.push(r);
        }
        (
            Self {
                ids: l_ids,
                by_feature: l_by,
            },
            Self {
                ids: r_ids,
                by_feature: r_by,
            },
        )
    }
}

/// Boundary positions `b` (left part = `sorted[..=b]`) at which the value
/// strictly increases, thinned to at most `cap` by row-count quantiles.
pub(crate) fn candidate_boundaries(values: &[f64], cap: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..values.len().saturating_sub(1))
        .filter(|&b| values[b] < values[b + 1])
        .collect();
    if cap == 0 || all.len() <= cap {
        return all;
    }
    let n = values.len();
    let mut picked = Vec::with_capacity(cap);
    let mut pos = 0;
    for q in 1..=cap {
        let target = (q * n).div_ceil(cap + 1);
        while pos < all.len() && all[pos] + 1 < target {
            pos += 1;
        }
        if pos == all.len() {
            break;
        }
        if picked.last() != Some(&all[pos]) {
            picked.push(all[pos]);
        }
    }
    picked
}

fn feature_candidates<C: SplitCriterion>(
    crit: &C,
    features: ArrayView2<'_, f64>,
    order: &[usize],
    feature: usize,
    parent: &C::Stats,
    baseline: f64,
    scale: f64,
    search: &SplitSearch,
) -> Vec<(f64, f64)> {
    let values: Vec<f64> = order.iter().map(|&i| features[[i, feature]]).collect();
    let boundaries = candidate_boundaries(&values, search.max_thresholds);
    let n = order.len();
    let mut left = crit.empty_like(parent);
    let mut right = parent.clone();
    let mut moved = 0;
    let mut out = Vec::new();
    for b in boundaries {
        while moved <= b {
            crit.add(&mut left, order[moved]);
            crit.remove(&mut right, order[moved]);
            moved += 1;
        }
        if moved < search.min_leaf || n - moved < search.min_leaf {
            continue;
        }
        if let Some(s) = crit.score(&left, &right) {
            if strictly_greater(s, baseline, scale) {
                out.push((midpoint(values[b], values[b + 1]), s));
            }
        }
    }
    out
}

/// Best eligible split of `node`, or `None`.
pub(crate) fn best_split<C: SplitCriterion>(
    crit: &C,
    features: ArrayView2<'_, f64>,
    node: &NodeRows,
    parent: &C::Stats,
    search: &SplitSearch,
) -> Option<FoundSplit> {
    let baseline = crit.baseline(parent)?;
    let scale = crit.scale(parent);
    let n_features = node.by_feature.len();
    let per_feature = |f: usize| {
        feature_candidates(crit, features, &node.by_feature[f], f, parent, baseline, scale, search)
    };
    let candidates: Vec<Vec<(f64, f64)>> = if node.len() * n_features >= PARALLEL_MIN_WORK {
        (0..n_features).into_par_iter().map(per_feature).collect()
    } else {
        (0..n_features).map(per_feature).collect()
    };
    let mut best: Option<FoundSplit> = None;
    for (feature, cands) in candidates.into_iter().enumerate() {
        for (threshold, score) in cands {
            let better = match &best {
                None => true,
                Some(b) => strictly_greater(score, b.score, scale),
            };
            if better {
                best = Some(FoundSplit {
                    feature,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

/// Maximum depth; `None` grows until no eligible split remains.
pub(crate) fn depth_allows(max_depth: Option<usize>, depth: usize) -> bool {
    max_depth.is_none_or(|d| depth < d)
}

/// Greedy recursive growth. Leaves carry their row ids in ascending order.
pub(crate) fn grow<C: SplitCriterion>(
    crit: &C,
    features: ArrayView2<'_, f64>,
    rows: &[usize],
    max_depth: Option<usize>,
    search: &SplitSearch,
) -> Node<Vec<usize>> {
    grow_node(crit, features, NodeRows::new(features, rows), 0, max_depth, search)
}

fn grow_node<C: SplitCriterion>(
    crit: &C,
    features: ArrayView2<'_, f64>,
    node: NodeRows,
    depth: usize,
    max_depth: Option<usize>,
    search: &SplitSearch,
) -> Node<Vec<usize>> {
    if !depth_allows(max_depth, depth) || node.len() < 2 {
        return Node::Leaf(node.ids);
    }
    let stats = crit.node_stats(node.ids());
    match best_split(crit, features, &node, &stats, search) {
        None => Node::Leaf(node.ids),
        Some(s) => {
            let (l, r) = node.split(features, s.feature, s.threshold);
            let left = grow_node(crit, features, l, depth + 1, max_depth, search);
            let right = grow_node(crit, features, r, depth + 1, max_depth, search);
            Node::split(s.feature, s.threshold, left, right)
        }
    }
}
