//! Explanation trees for a black-box HTE model.
//!
//! A multitask regression tree is fitted to the teacher's predicted
//! treatment effects for one contrast (arm `k` vs control), with a weighted
//! squared-error loss summed over outcomes. Leaves without enough treated
//! and control rows are pruned away, leaf estimates come from a held-out
//! estimation half when `honest` is set, and every leaf reports per-outcome
//! normal-approximation confidence intervals.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{ExperimentTable, PotentialPredictionMatrix, ScalarizationWeights};
use crate::error::{Error, Result};
use crate::split::{grow, SplitCriterion, SplitSearch, DEFAULT_MAX_THRESHOLDS};
use crate::tree::{unroll_tree, Node, Segment, Tree};

/// Predicted effects `T̂_ij = Ŷ_ij^(k) − Ŷ_ij^(0)` for one contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectMatrix {
    values: Array2<f64>,
    contrast_arm: usize,
}

impl EffectMatrix {
    pub fn new(values: Array2<f64>, contrast_arm: usize) -> Result<Self> {
        if contrast_arm == 0 {
            return Err(Error::InvalidContrast {
                arm: 0,
                max: usize::MAX,
            });
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation {
                row: i,
                column: format!("effect_{j}"),
                detail: format!("non-finite effect {v}"),
            });
        }
        Ok(Self {
            values,
            contrast_arm,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn contrast_arm(&self) -> usize {
        self.contrast_arm
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_outcomes(&self) -> usize {
        self.values.ncols()
    }
}

pub fn pairwise_effects(preds: &PotentialPredictionMatrix, k: usize) -> Result<EffectMatrix> {
    let max = preds.n_arms().saturating_sub(1);
    if k == 0 || k > max {
        return Err(Error::InvalidContrast { arm: k, max });
    }
    let values = Array2::from_shape_fn((preds.n_rows(), preds.n_outcomes()), |(i, j)| {
        preds.get(i, k, j) - preds.get(i, 0, j)
    });
    EffectMatrix::new(values, k)
}

/// How per-outcome residuals combine into the node loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    /// `Σ_j c_j (T̂_ij − F̂_j)²`.
    #[default]
    SumOfSquares,
    /// `(Σ_j c_j (T̂_ij − F̂_j))²`: residuals may cancel across outcomes.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MtdtConfig {
    /// `None` grows until no split lowers the loss.
    pub max_depth: Option<usize>,
    /// Minimum treated and minimum control estimation rows per leaf.
    pub n_min: usize,
    pub honest: bool,
    pub seed: u64,
    pub ci_level: f64,
    pub loss: LossForm,
    pub min_leaf: usize,
    pub max_thresholds: usize,
}

impl Default for MtdtConfig {
    fn default() -> Self {
        Self {
            max_depth: Some(3),
            n_min: 10,
            honest: true,
            seed: 0,
            ci_level: 0.95,
            loss: LossForm::SumOfSquares,
            min_leaf: 1,
            max_thresholds: DEFAULT_MAX_THRESHOLDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectLeaf {
    /// Per-outcome mean effect over the leaf's estimation rows.
    pub effect: Vec<f64>,
    /// Per-outcome `[low, high]` interval.
    pub ci: Vec<[f64; 2]>,
    pub n_treated: usize,
    pub n_control: usize,
    pub n_estimation: usize,
    /// Set when this leaf replaced a subtree during overlap pruning.
    pub pruned: bool,
}

/// Multitask effect tree for one treatment contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationTree {
    pub contrast_arm: usize,
    pub weights: ScalarizationWeights,
    pub tree: Tree<EffectLeaf>,
}

impl ExplanationTree {
    pub fn predict<X>(&self, x: &X) -> &EffectLeaf
    where
        X: std::ops::Index<usize, Output = f64> + ?Sized,
    {
        self.tree.root.route(x)
    }

    pub fn scalarized_effect(&self, leaf: &EffectLeaf) -> f64 {
        self.weights.dot(leaf.effect.iter().copied())
    }
}

/// A fitted explanation tree and the honest partition it was fitted with.
#[derive(Debug, Clone)]
pub struct MtdtFit {
    pub tree: ExplanationTree,
    pub structure_rows: Vec<usize>,
    pub estimation_rows: Vec<usize>,
}

/// Weighted multi-output squared error, centered on the node mean.
struct MultiSse<'a> {
    targets: &'a Array2<f64>,
    weights: &'a [f64],
}

#[derive(Debug, Clone)]
struct MultiSums {
    shift: Vec<f64>,
    count: f64,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl MultiSse<'_> {
    fn sse(&self, s: &MultiSums) -> f64 {
        if s.count == 0.0 {
            return 0.0;
        }
        self.weights
            .iter()
            .zip(s.sum.iter().zip(&s.sumsq))
            .map(|(c, (sum, sq))| c * (sq - sum * sum / s.count).max(0.0))
            .sum()
    }
}

impl SplitCriterion for MultiSse<'_> {
    type Stats = MultiSums;

    fn node_stats(&self, rows: &[usize]) -> MultiSums {
        let j = self.targets.ncols();
        let n = rows.len().max(1) as f64;
        let shift = (0..j)
            .map(|o| rows.iter().map(|&i| self.targets[[i, o]]).sum::<f64>() / n)
            .collect();
        let mut s = MultiSums {
            shift,
            count: 0.0,
            sum: vec![0.0; j],
            sumsq: vec![0.0; j],
        };
        for &i in rows {
            self.add(&mut s, i);
        }
        s
    }

    fn empty_like(&self, parent: &MultiSums) -> MultiSums {
        let j = parent.shift.len();
        MultiSums {
            shift: parent.shift.clone(),
            count: 0.0,
            sum: vec![0.0; j],
            sumsq: vec![0.0; j],
        }
    }

    fn add(&self, s: &mut MultiSums, row: usize) {
        s.count += 1.0;
        for o in 0..s.sum.len() {
            let v = self.targets[[row, o]] - s.shift[o];
            s.sum[o] += v;
            s.sumsq[o] += v * v;
        }
    }

    fn remove(&self, s: &mut MultiSums, row: usize) {
        s.count -= 1.0;
        for o in 0..s.sum.len() {
            let v = self.targets[[row, o]] - s.shift[o];
            s.sum[o] -= v;
            s.sumsq[o] -= v * v;
        }
    }

    fn baseline(&self, parent: &MultiSums) -> Option<f64> {
        Some(-self.sse(parent))
    }

    fn score(&self, left: &MultiSums, right: &MultiSums) -> Option<f64> {
        Some(-(self.sse(left) + self.sse(right)))
    }

    fn scale(&self, parent: &MultiSums) -> f64 {
        self.weights
            .iter()
            .zip(&parent.sumsq)
            .map(|(c, sq)| c.abs() * sq)
            .sum()
    }
}

/// `mean ± z · sd / √m` with the sample standard deviation.
pub fn leaf_confidence_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::UndefinedVariance(m));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("confidence level {level} must lie in (0, 1)")));
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let half = z_quantile(level) * var.sqrt() / (m as f64).sqrt();
    Ok((mean - half, mean + half))
}

fn z_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

fn honest_halves(n: usize, honest: bool, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let all: Vec<usize> = (0..n).collect();
    if !honest {
        return (all.clone(), all);
    }
    let mut order = all;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = order.split_at(n / 2);
    let mut structure = a.to_vec();
    let mut estimation = b.to_vec();
    structure.sort_unstable();
    estimation.sort_unstable();
    (structure, estimation)
}

struct Overlap {
    rows: Vec<usize>,
    treated: usize,
    control: usize,
    pruned: bool,
}

fn overlap_of(rows: Vec<usize>, table: &ExperimentTable, arm: usize, pruned: bool) -> Overlap {
    let w = table.treatment();
    Overlap {
        treated: rows.iter().filter(|&&i| w[i] == arm).count(),
        control: rows.iter().filter(|&&i| w[i] == 0).count(),
        rows,
        pruned,
    }
}

/// Collapses every parent with a child leaf lacking `n_min` treated or
/// control rows, bottom-up, until all leaves comply.
fn prune(node: Node<Overlap>, n_min: usize, table: &ExperimentTable, arm: usize) -> Node<Overlap> {
    match node {
        Node::Leaf(l) => Node::Leaf(l),
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let left = prune(*left, n_min, table, arm);
            let right = prune(*right, n_min, table, arm);
            let violates = |n: &Node<Overlap>| match n {
                Node::Leaf(l) => l.treated < n_min || l.control < n_min,
                _ => false,
            };
            if violates(&left) || violates(&right) {
                let mut rows: Vec<usize> = left
                    .leaves()
                    .into_iter()
                    .chain(right.leaves())
                    .flat_map(|l| l.rows.iter().copied())
                    .collect();
                rows.sort_unstable();
                Node::Leaf(overlap_of(rows, table, arm, true))
            } else {
                Node::split(feature, threshold, left, right)
            }
        }
    }
}

pub fn fit_mtdt(
    effects: &EffectMatrix,
    weights: &ScalarizationWeights,
    table: &ExperimentTable,
    config: &MtdtConfig,
) -> Result<MtdtFit> {
    let n = table.n_rows();
    if effects.n_rows() != n {
        return Err(Error::dim(format!(
            "{} effect rows for a table of {n} rows",
            effects.n_rows()
        )));
    }
    weights.check_len(effects.n_outcomes())?;
    if weights.as_slice().iter().any(|&c| c < 0.0) {
        return Err(Error::config("distillation loss weights must be non-negative"));
    }
    if config.n_min == 0 {
        return Err(Error::config("n_min must be at least 1"));
    }
    if 2 * config.n_min > n {
        return Err(Error::config(format!(
            "n_min = {} exceeds half the table ({n} rows)",
            config.n_min
        )));
    }
    let arm = effects.contrast_arm();
    if arm >= table.n_arms() {
        return Err(Error::InvalidContrast {
            arm,
            max: table.n_arms().saturating_sub(1),
        });
    }
    let counts = table.arm_counts();
    for a in [0, arm] {
        if counts[a] == 0 {
            return Err(Error::InsufficientOverlap {
                arm: a,
                detail: "no rows in this arm".into(),
            });
        }
    }

    let (structure_rows, estimation_rows) = honest_halves(n, config.honest, config.seed);

    let (targets, loss_weights) = match config.loss {
        LossForm::SumOfSquares => (effects.values().clone(), weights.as_slice().to_vec()),
        LossForm::Literal => {
            let s = Array2::from_shape_fn((n, 1), |(i, _)| {
                weights.dot(effects.values().row(i).iter().copied())
            });
            (s, vec![1.0])
        }
    };
    let crit = MultiSse {
        targets: &targets,
        weights: &loss_weights,
    };
    let search = SplitSearch {
        min_leaf: config.min_leaf.max(1),
        max_thresholds: config.max_thresholds,
    };
    let structure = grow(&crit, table.features(), &structure_rows, config.max_depth, &search);

    let groups = structure.partition(table.features(), &estimation_rows);
    let mut groups = groups.into_iter();
    let with_estimation = structure.map_leaves(&mut |_| {
        overlap_of(groups.next().unwrap_or_default(), table, arm, false)
    });
    let pruned = prune(with_estimation, config.n_min, table, arm);
    if let Node::Leaf(root) = &pruned {
        if root.treated < config.n_min || root.control < config.n_min {
            let (a, have) = if root.control < config.n_min {
                (0, root.control)
            } else {
                (arm, root.treated)
            };
            return Err(Error::InsufficientOverlap {
                arm: a,
                detail: format!(
                    "{have} estimation rows, need at least n_min = {}",
                    config.n_min
                ),
            });
        }
    }

    let mut failure = None;
    let root = pruned.map_leaves(&mut |o: Overlap| {
        let j = effects.n_outcomes();
        let mut effect = Vec::with_capacity(j);
        let mut ci = Vec::with_capacity(j);
        for o_idx in 0..j {
            let samples: Vec<f64> = o.rows.iter().map(|&i| effects.values()[[i, o_idx]]).collect();
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let (lo, hi) = match leaf_confidence_interval(&samples, config.ci_level) {
                Ok(b) => b,
                Err(e) => {
                    failure.get_or_insert(e);
                    (mean, mean)
                }
            };
            effect.push(mean);
            ci.push([lo.min(mean), hi.max(mean)]);
        }
        EffectLeaf {
            effect,
            ci,
            n_treated: o.treated,
            n_control: o.control,
            n_estimation: o.rows.len(),
            pruned: o.pruned,
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(MtdtFit {
        tree: ExplanationTree {
            contrast_arm: arm,
            weights: weights.clone(),
            tree: Tree::new(table.feature_names().to_vec(), root),
        },
        structure_rows,
        estimation_rows,
    })
}

/// One explanation tree per treated arm `1..=K`.
pub fn fit_all_contrasts(
    preds: &PotentialPredictionMatrix,
    weights: &ScalarizationWeights,
    table: &ExperimentTable,
    config: &MtdtConfig,
) -> Result<Vec<MtdtFit>> {
    preds.check_against(table)?;
    (1..preds.n_arms())
        .map(|k| fit_mtdt(&pairwise_effects(preds, k)?, weights, table, config))
        .collect()
}

/// One leaf of an explanation tree, unrolled against a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub leaf: usize,
    pub description: String,
    pub effect: Vec<f64>,
    pub ci: Vec<[f64; 2]>,
    pub scalarized_effect: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub segment: Segment,
}

/// Leaves unrolled into segments, ordered by scalarized effect ascending.
pub fn segment_report(tree: &ExplanationTree, table: &ExperimentTable) -> Result<Vec<SegmentReport>> {
    let segments = unroll_tree(&tree.tree, table, &ScalarizationWeights::ones(table.n_outcomes()))?;
    let mut out: Vec<SegmentReport> = segments
        .into_iter()
        .zip(tree.tree.root.leaves())
        .enumerate()
        .map(|(leaf_idx, (segment, leaf))| SegmentReport {
            leaf: leaf_idx,
            description: segment.predicate.describe(&tree.tree.feature_names),
            effect: leaf.effect.clone(),
            ci: leaf.ci.clone(),
            scalarized_effect: tree.scalarized_effect(leaf),
            n_treated: leaf.n_treated,
            n_control: leaf.n_control,
            segment,
        })
        .collect();
    out.sort_by(|a, b| a.scalarized_effect.total_cmp(&b.scalarized_effect));
    Ok(out)
}

/// ASCII bar chart of per-segment scalarized effects with intervals.
pub fn render_segment_bars(reports: &[SegmentReport], width: usize) -> String {
    let max_abs = reports
        .iter()
        .map(|r| r.scalarized_effect.abs())
        .fold(0.0f64, f64::max);
    let half = (width / 2).max(1);
    let mut out = String::new();
    for (n, r) in reports.iter().enumerate() {
        let len = if max_abs > 0.0 {
            ((r.scalarized_effect.abs() / max_abs) * half as f64).round() as usize
        } else {
            0
        };
        let (neg, pos) = if r.scalarized_effect < 0.0 {
            (format!("{:>half$}", "#".repeat(len)), " ".repeat(half))
        } else {
            (" ".repeat(half), format!("{:<half$}", "#".repeat(len)))
        };
        let intervals: Vec<String> = r
            .effect
            .iter()
            .zip(&r.ci)
            .map(|(e, [lo, hi])| format!("{e:.4} ±{:.4}", (hi - lo) / 2.0))
            .collect();
        let _ = writeln!(
            out,
            "{:>3} {neg}|{pos} {} (n={}) {}",
            n + 1,
            intervals.join(", "),
            r.segment.row_indices.len(),
            r.description
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_feature_names;
    use ndarray::Array3;

    fn alternating_table(x: &[f64]) -> ExperimentTable {
        let n = x.len();
        ExperimentTable::new(
            Array2::from_shape_fn((n, 1), |(i, _)| x[i]),
            (0..n).map(|i| i % 2).collect(),
            Array2::zeros((n, 1)),
            None,
            default_feature_names(1),
        )
        .unwrap()
    }

    fn effects_from(f: impl Fn(usize) -> f64, n: usize) -> EffectMatrix {
        EffectMatrix::new(Array2::from_shape_fn((n, 1), |(i, _)| f(i)), 1).unwrap()
    }

    #[test]
    fn pairwise_effect_examples() {
        let p = PotentialPredictionMatrix::new(
            Array3::from_shape_vec((1, 2, 1), vec![1.0, 3.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(pairwise_effects(&p, 1).unwrap().values()[[0, 0]], 2.0);

        let p = PotentialPredictionMatrix::new(
            Array3::from_shape_vec((1, 3, 2), vec![1.0, 2.0, 9.0, 9.0, 4.0, 0.0]).unwrap(),
        )
        .unwrap();
        let e = pairwise_effects(&p, 2).unwrap();
        assert_eq!(e.values().row(0).to_vec(), vec![3.0, -2.0]);
        assert!(matches!(pairwise_effects(&p, 0), Err(Error::InvalidContrast { .. })));
        assert!(matches!(pairwise_effects(&p, 3), Err(Error::InvalidContrast { .. })));

        let same = PotentialPredictionMatrix::new(Array3::from_elem((4, 2, 2), 1.5)).unwrap();
        assert!(pairwise_effects(&same, 1).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_effects_give_single_leaf() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let t = alternating_table(&x);
        let e = effects_from(|_| 0.75, 40);
        let cfg = MtdtConfig { n_min: 2, ..Default::default() };
        let fit = fit_mtdt(&e, &ScalarizationWeights::ones(1), &t, &cfg).unwrap();
        assert!(fit.tree.tree.root.is_leaf());
        let leaf = fit.tree.tree.root.leaves()[0];
        assert_eq!(leaf.effect, vec![0.75]);
        assert_eq!(leaf.ci, vec![[0.75, 0.75]]);
    }

    #[test]
    fn step_effects_split_between_clusters() {
        let x: Vec<f64> = (0..40).map(|i| if i < 20 { -1.0 - i as f64 * 0.1 } else { 1.0 + i as f64 * 0.1 }).collect();
        let t = alternating_table(&x);
        let e = effects_from(|i| if x[i] < 0.0 { 1.0 } else { -1.0 }, 40);
        let cfg = MtdtConfig { max_depth: Some(1), n_min: 2, honest: false, ..Default::default() };
        let fit = fit_mtdt(&e, &ScalarizationWeights::ones(1), &t, &cfg).unwrap();
        match &fit.tree.tree.root {
            Node::Split { feature, threshold, left, right } => {
                assert_eq!(*feature, 0);
                // midpoint between the largest negative (-1.0) and smallest positive (3.0) value
                assert_eq!(*threshold, 1.0);
                assert_eq!(left.leaves()[0].effect, vec![1.0]);
                assert_eq!(right.leaves()[0].effect, vec![-1.0]);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn honest_estimates_use_estimation_half() {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64).collect();
        let t = alternating_table(&x);
        let e = effects_from(|i| if x[i] < 100.0 { 2.0 } else { 0.0 } + (i % 7) as f64 * 0.1, n);
        let cfg = MtdtConfig { max_depth: Some(1), n_min: 5, honest: true, seed: 3, ..Default::default() };
        let fit = fit_mtdt(&e, &ScalarizationWeights::ones(1), &t, &cfg).unwrap();
        let groups_est = fit.tree.tree.root.partition(t.features(), &fit.estimation_rows);
        let groups_str = fit.tree.tree.root.partition(t.features(), &fit.structure_rows);
        let mut differs = false;
        for ((leaf, est), st) in fit.tree.tree.root.leaves().iter().zip(&groups_est).zip(&groups_str) {
            let mean = |g: &Vec<usize>| g.iter().map(|&i| e.values()[[i, 0]]).sum::<f64>() / g.len() as f64;
            assert_eq!(leaf.effect[0], mean(est));
            differs |= mean(est) != mean(st);
        }
        assert!(differs);
    }

    #[test]
    fn confidence_interval_examples() {
        let (lo, hi) = leaf_confidence_interval(&[2.0, 2.0, 2.0], 0.95).unwrap();
        assert_eq!((lo, hi), (2.0, 2.0));
        let (lo, hi) = leaf_confidence_interval(&[0.0, 0.0, 4.0, 4.0], 0.95).unwrap();
        let sd = (16.0f64 / 3.0).sqrt();
        let half = 1.96 * sd / 2.0;
        assert!(((lo + hi) / 2.0 - 2.0).abs() < 1e-12);
        assert!(((hi - lo) / 2.0 - half).abs() / half < 1e-4);
        assert!(matches!(leaf_confidence_interval(&[1.0], 0.95), Err(Error::UndefinedVariance(1))));
    }

    #[test]
    fn overlap_pruning_collapses_thin_leaves() {
        // Effects separate x < 5 from the rest, but the small side holds only
        // control rows.
        let n = 60;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let w: Vec<usize> = (0..n).map(|i| if i < 5 { 0 } else { i % 2 }).collect();
        let t = ExperimentTable::new(
            Array2::from_shape_fn((n, 1), |(i, _)| x[i]),
            w,
            Array2::zeros((n, 1)),
            None,
            default_feature_names(1),
        )
        .unwrap();
        let e = effects_from(|i| if i < 5 { 3.0 } else { 0.0 }, n);
        let cfg = MtdtConfig { max_depth: Some(1), n_min: 3, honest: false, ..Default::default() };
        let fit = fit_mtdt(&e, &ScalarizationWeights::ones(1), &t, &cfg).unwrap();
        let leaf = match &fit.tree.tree.root {
            Node::Leaf(l) => l,
            _ => panic!("thin leaf should have been pruned"),
        };
        assert!(leaf.pruned);
        assert_eq!(leaf.n_estimation, n);
    }

    #[test]
    fn zero_training_loss_when_unrestricted() {
        // blocks of four rows share an effect and contain both arms
        let n = 48;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let t = alternating_table(&x);
        let e = effects_from(|i| ((i / 4) as f64 * 1.7).sin(), n);
        let cfg = MtdtConfig { max_depth: None, n_min: 1, honest: false, ..Default::default() };
        let fit = fit_mtdt(&e, &ScalarizationWeights::ones(1), &t, &cfg).unwrap();
        for i in 0..n {
            let row = t.feature_row(i);
            assert_eq!(fit.tree.predict(&row).effect[0], e.values()[[i, 0]]);
        }
    }

    #[test]
    fn configuration_errors() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let t = alternating_table(&x);
        let e = effects_from(|_| 0.0, 10);
        let cfg = MtdtConfig { n_min: 6, ..Default::default() };
        assert!(matches!(fit_mtdt(&e, &ScalarizationWeights::ones(1), &t, &cfg), Err(Error::Config(_))));

        let all_control = ExperimentTable::with_arm_count(
            Array2::from_shape_fn((10, 1), |(i, _)| i as f64),
            vec![0; 10],
            Array2::zeros((10, 1)),
            None,
            default_feature_names(1),
            2,
        )
        .unwrap();
        let cfg = MtdtConfig { n_min: 1, ..Default::default() };
        assert!(matches!(
            fit_mtdt(&e, &ScalarizationWeights::ones(1), &all_control, &cfg),
            Err(Error::InsufficientOverlap { arm: 1, .. })
        ));
    }

    #[test]
    fn report_orders_segments_and_replays_membership() {
        let n = 80;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let t = alternating_table(&x);
        let e = effects_from(|i| if i < 40 { 1.0 } else { -2.0 }, n);
        let cfg = MtdtConfig { max_depth: Some(2), n_min: 2, honest: false, ..Default::default() };
        let fit = fit_mtdt(&e, &ScalarizationWeights::ones(1), &t, &cfg).unwrap();
        let report = segment_report(&fit.tree, &t).unwrap();
        assert_eq!(report.len(), 2);
        assert!(report[0].scalarized_effect < report[1].scalarized_effect);
        for r in &report {
            let replay: Vec<usize> = (0..n)
                .filter(|&i| r.segment.predicate.matches(&t.feature_row(i)))
                .collect();
            assert_eq!(replay, r.segment.row_indices);
        }
        let bars = render_segment_bars(&report, 20);
        assert_eq!(bars.lines().count(), 2);
    }

    #[test]
    fn depth_zero_report() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let t = alternating_table(&x);
        let e = effects_from(|_| 0.5, 20);
        let cfg = MtdtConfig { n_min: 2, ..Default::default() };
        let fit = fit_mtdt(&e, &ScalarizationWeights::ones(1), &t, &cfg).unwrap();
        let report = segment_report(&fit.tree, &t).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].effect, vec![0.5]);
        assert_eq!(report[0].description, "all");
    }
}
