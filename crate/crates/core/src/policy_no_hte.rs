//! Policies learned from experiment data alone, by splitting on segment
//! average treatment effects.
//!
//! `A_j(S)` is the treated-minus-control difference of mean scalarized
//! outcomes within `S`. The segment metric `A(S)` is the largest `A_j(S)`
//! over eligible arms, counting `A_0 = 0`; an arm is eligible when both it
//! and control have at least `min_arm_per_child` rows in `S`.

use std::fmt::Write as _;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::{argmax_lowest, ExperimentTable, ScalarizationWeights};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::split::{grow, SplitCriterion, SplitSearch, DEFAULT_MAX_THRESHOLDS};
use crate::tree::{arm_label, ArmLeaf, PolicyTree, Predicate, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoHteConfig {
    pub max_depth: usize,
    pub min_arm_per_child: usize,
    /// Rounds of the iterative variant.
    pub iterations: usize,
    /// Arm for rows no harvested segment matches.
    pub default_arm: Option<usize>,
    pub max_thresholds: usize,
}

impl Default for NoHteConfig {
    fn default() -> Self {
        Self {
            max_depth: 2,
            min_arm_per_child: 25,
            iterations: 3,
            default_arm: None,
            max_thresholds: DEFAULT_MAX_THRESHOLDS,
        }
    }
}

/// `A_j(S)` on the given rows; `None` when arm `j` or control is absent.
pub fn segment_ate(
    table: &ExperimentTable,
    rows: &[usize],
    arm: usize,
    weights: &ScalarizationWeights,
) -> Result<Option<f64>> {
    let y = table.scalarized_outcomes(weights)?;
    let stats = ArmSums::of(&y, table.treatment(), table.n_arms(), rows);
    Ok(stats.ate(arm, 1))
}

#[derive(Debug, Clone)]
struct ArmSums {
    counts: Vec<usize>,
    sums: Vec<f64>,
}

impl ArmSums {
    fn of(y: &[f64], w: &[usize], n_arms: usize, rows: &[usize]) -> Self {
        let mut s = Self {
            counts: vec![0; n_arms],
            sums: vec![0.0; n_arms],
        };
        for &i in rows {
            s.counts[w[i]] += 1;
            s.sums[w[i]] += y[i];
        }
        s
    }

    fn mean(&self, arm: usize) -> f64 {
        self.sums[arm] / self.counts[arm] as f64
    }

    fn ate(&self, arm: usize, min: usize) -> Option<f64> {
        let min = min.max(1);
        if arm >= self.counts.len() || self.counts[arm] < min || self.counts[0] < min {
            return None;
        }
        Some(if arm == 0 { 0.0 } else { self.mean(arm) - self.mean(0) })
    }

    fn ates(&self, min: usize) -> Vec<Option<f64>> {
        (0..self.counts.len()).map(|j| self.ate(j, min)).collect()
    }

    /// `A(S)`, or `None` when control is ineligible.
    fn metric(&self, min: usize) -> Option<f64> {
        self.ate(0, min)?;
        Some(
            self.ates(min)
                .into_iter()
                .flatten()
                .fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Arm maximizing `A_j(S)`; ties go to the lowest arm.
    fn action(&self, min: usize) -> usize {
        let min = if self.ate(0, min).is_some() { min } else { 1 };
        argmax_lowest(
            self.ates(min)
                .into_iter()
                .map(|a| a.unwrap_or(f64::NEG_INFINITY)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Combine {
    Min,
    Max,
}

struct SegmentAteCriterion<'a> {
    y: &'a [f64],
    w: &'a [usize],
    n_arms: usize,
    min: usize,
    combine: Combine,
}

#[derive(Debug, Clone)]
struct AteStats {
    arms: ArmSums,
    abs_max: f64,
}

impl SplitCriterion for SegmentAteCriterion<'_> {
    type Stats = AteStats;

    fn node_stats(&self, rows: &[usize]) -> AteStats {
        AteStats {
            arms: ArmSums::of(self.y, self.w, self.n_arms, rows),
            abs_max: rows.iter().fold(0.0f64, |m, &i| m.max(self.y[i].abs())),
        }
    }

    fn empty_like(&self, _: &AteStats) -> AteStats {
        AteStats {
            arms: ArmSums {
                counts: vec![0; self.n_arms],
                sums: vec![0.0; self.n_arms],
            },
            abs_max: 0.0,
        }
    }

    fn add(&self, s: &mut AteStats, row: usize) {
        s.arms.counts[self.w[row]] += 1;
        s.arms.sums[self.w[row]] += self.y[row];
    }

    fn remove(&self, s: &mut AteStats, row: usize) {
        s.arms.counts[self.w[row]] -= 1;
        s.arms.sums[self.w[row]] -= self.y[row];
    }

    fn baseline(&self, parent: &AteStats) -> Option<f64> {
        parent.arms.metric(self.min)
    }

    fn score(&self, left: &AteStats, right: &AteStats) -> Option<f64> {
        let (l, r) = (left.arms.metric(self.min)?, right.arms.metric(self.min)?);
        Some(match self.combine {
            Combine::Min => l.min(r),
            Combine::Max => l.max(r),
        })
    }

    fn scale(&self, parent: &AteStats) -> f64 {
        parent.abs_max
    }
}

/// A segment found by a No-HTE learner, with its effect table at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteSegment {
    pub predicate: Predicate,
    pub description: String,
    pub action: usize,
    /// `A_j(S)` for `j = 0..=K`; `null` where arm `j` is ineligible.
    pub ate: Vec<Option<f64>>,
    pub metric: Option<f64>,
    pub counts: Vec<usize>,
    pub rows: Vec<usize>,
}

/// Ordered rules; the first rule whose predicate matches decides the arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleListPolicy {
    pub feature_names: Vec<String>,
    pub rules: Vec<Rule>,
    pub default_arm: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub predicate: Predicate,
    pub arm: usize,
}

impl RuleListPolicy {
    pub fn check_schema(&self, n_features: usize, n_arms: usize) -> Result<()> {
        if self.feature_names.len() != n_features {
            return Err(Error::dim(format!(
                "policy expects {} features, table has {n_features}",
                self.feature_names.len()
            )));
        }
        let max_feature = self
            .rules
            .iter()
            .flat_map(|r| r.predicate.clauses().iter().map(|c| c.feature))
            .max();
        if max_feature.is_some_and(|f| f >= n_features) {
            return Err(Error::dim("rule references a missing feature"));
        }
        if self.max_arm() >= n_arms {
            return Err(Error::dim(format!(
                "policy assigns arm {} but only {n_arms} arms exist",
                self.max_arm()
            )));
        }
        Ok(())
    }

    pub fn max_arm(&self) -> usize {
        self.rules
            .iter()
            .map(|r| r.arm)
            .chain([self.default_arm])
            .max()
            .unwrap_or(0)
    }

    pub fn render(&self, n_arms: usize) -> String {
        let default = arm_label(self.default_arm, n_arms);
        if self.rules.is_empty() {
            return format!("Assign {default} for everyone.\n");
        }
        let mut out = String::new();
        for (n, r) in self.rules.iter().enumerate() {
            let lead = if n == 0 { "If" } else { "Otherwise, if" };
            let _ = writeln!(
                out,
                "{lead} {}, assign {}.",
                r.predicate.describe(&self.feature_names),
                arm_label(r.arm, n_arms)
            );
        }
        let _ = writeln!(out, "Otherwise, assign {default}.");
        out
    }
}

impl Policy for RuleListPolicy {
    fn assign(&self, x: ArrayView1<'_, f64>) -> usize {
        self.rules
            .iter()
            .find(|r| r.predicate.matches(&x))
            .map_or(self.default_arm, |r| r.arm)
    }

    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn max_arm(&self) -> usize {
        RuleListPolicy::max_arm(self)
    }
}

#[derive(Debug, Clone)]
pub struct NoHteGreedyFit {
    pub segments: Vec<AteSegment>,
    pub policy: PolicyTree,
}

#[derive(Debug, Clone)]
pub struct NoHteIterativeFit {
    /// Harvested segments in harvest order.
    pub segments: Vec<AteSegment>,
    pub policy: RuleListPolicy,
    pub rounds_run: usize,
}

struct Prepared {
    y: Vec<f64>,
    search: SplitSearch,
}

fn prepare(table: &ExperimentTable, weights: &ScalarizationWeights, config: &NoHteConfig) -> Result<Prepared> {
    if config.min_arm_per_child == 0 {
        return Err(Error::config("min_arm_per_child must be at least 1"));
    }
    if config.max_thresholds == 0 {
        return Err(Error::config("max_thresholds must be at least 1"));
    }
    let counts = table.arm_counts();
    if counts[0] == 0 {
        return Err(Error::InsufficientOverlap {
            arm: 0,
            detail: "no control rows".into(),
        });
    }
    if counts.iter().skip(1).all(|&c| c == 0) {
        return Err(Error::InsufficientOverlap {
            arm: 1,
            detail: "no treated rows in any arm".into(),
        });
    }
    if let Some(d) = config.default_arm {
        if d >= table.n_arms() {
            return Err(Error::config(format!(
                "default arm {d} exceeds arm count {}",
                table.n_arms()
            )));
        }
    }
    Ok(Prepared {
        y: table.scalarized_outcomes(weights)?,
        search: SplitSearch {
            min_leaf: 1,
            max_thresholds: config.max_thresholds,
        },
    })
}

fn describe_segment(
    predicate: Predicate,
    rows: Vec<usize>,
    table: &ExperimentTable,
    y: &[f64],
    min: usize,
) -> AteSegment {
    let stats = ArmSums::of(y, table.treatment(), table.n_arms(), &rows);
    AteSegment {
        description: predicate.describe(table.feature_names()),
        predicate,
        action: stats.action(min),
        ate: stats.ates(min),
        metric: stats.metric(min),
        counts: stats.counts.clone(),
        rows,
    }
}

/// Grows a tree in which both children of every split improve on `A(S)`.
pub fn fit_no_hte_greedy(
    table: &ExperimentTable,
    weights: &ScalarizationWeights,
    config: &NoHteConfig,
) -> Result<NoHteGreedyFit> {
    let prep = prepare(table, weights, config)?;
    let crit = SegmentAteCriterion {
        y: &prep.y,
        w: table.treatment(),
        n_arms: table.n_arms(),
        min: config.min_arm_per_child,
        combine: Combine::Min,
    };
    let all: Vec<usize> = (0..table.n_rows()).collect();
    let grown = grow(&crit, table.features(), &all, Some(config.max_depth), &prep.search);
    let predicates: Vec<Predicate> = grown.paths().into_iter().map(|(p, _)| p).collect();
    let mut predicates = predicates.into_iter();
    let mut segments = Vec::new();
    let root = grown.map_leaves(&mut |rows: Vec<usize>| {
        let seg = describe_segment(
            predicates.next().unwrap_or_default(),
            rows,
            table,
            &prep.y,
            config.min_arm_per_child,
        );
        let arm = seg.action;
        segments.push(seg);
        ArmLeaf { arm }
    });
    Ok(NoHteGreedyFit {
        segments,
        policy: Tree::new(table.feature_names().to_vec(), root),
    })
}

/// Repeatedly grows a tree under the relaxed `max` rule, harvests its best
/// leaf and removes that leaf's rows.
pub fn fit_no_hte_iterative(
    table: &ExperimentTable,
    weights: &ScalarizationWeights,
    config: &NoHteConfig,
) -> Result<NoHteIterativeFit> {
    let prep = prepare(table, weights, config)?;
    if config.iterations == 0 {
        return Err(Error::config("iterations must be at least 1"));
    }
    let min = config.min_arm_per_child;
    let crit = SegmentAteCriterion {
        y: &prep.y,
        w: table.treatment(),
        n_arms: table.n_arms(),
        min,
        combine: Combine::Max,
    };
    let mut remaining: Vec<usize> = (0..table.n_rows()).collect();
    let mut segments: Vec<AteSegment> = Vec::new();
    let mut rounds_run = 0;
    for _ in 0..config.iterations {
        if crit.node_stats(&remaining).arms.metric(min).is_none() {
            break;
        }
        rounds_run += 1;
        let grown = grow(&crit, table.features(), &remaining, Some(config.max_depth), &prep.search);
        if grown.is_leaf() {
            break;
        }
        let mut best: Option<AteSegment> = None;
        for (pred, rows) in grown.paths() {
            let seg = describe_segment(pred, rows.clone(), table, &prep.y, min);
            let better = match (&best, seg.metric) {
                (_, None) => false,
                (None, Some(_)) => true,
                (Some(b), Some(m)) => m > b.metric.unwrap_or(f64::NEG_INFINITY),
            };
            if better {
                best = Some(seg);
            }
        }
        let Some(seg) = best else { break };
        remaining.retain(|i| seg.rows.binary_search(i).is_err());
        segments.push(seg);
        if remaining.is_empty() {
            break;
        }
    }
    let default_arm = match config.default_arm {
        Some(d) => d,
        None if !segments.is_empty() => 0,
        None => {
            let all: Vec<usize> = (0..table.n_rows()).collect();
            crit.node_stats(&all).arms.action(min)
        }
    };
    let policy = RuleListPolicy {
        feature_names: table.feature_names().to_vec(),
        rules: segments
            .iter()
            .map(|s| Rule {
                predicate: s.predicate.clone(),
                arm: s.action,
            })
            .collect(),
        default_arm,
    };
    Ok(NoHteIterativeFit {
        segments,
        policy,
        rounds_run,
    })
}
