//! Interpretable ensembles: shallow guidance trees whose leaves pick one of
//! several constituent policies.
//!
//! Both learners reduce to the greedy column-sum tree search with one
//! column per constituent policy. GUIDE-OPE uses per-row IPS credits
//! `1(W_i = Π_q(X_i)) · Y_i / p_i`, so every candidate's score is exactly its
//! IPS value on the search table. GUIDE-UniformExplore uses outcomes that
//! reveal `Y_i` on the logged arm and fall back to HTE predictions elsewhere.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ExperimentTable, PotentialPredictionMatrix, ScalarizationWeights};
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyModel};
use crate::policy_greedy::greedy_columns_tree;
use crate::split::{SplitSearch, DEFAULT_MAX_THRESHOLDS};
use crate::tree::{render_if_else, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRef {
    pub policy: usize,
}

/// A named constituent policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constituent {
    pub id: String,
    pub policy: PolicyModel,
}

/// Tree whose leaves name a constituent by its 0-based position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTree {
    pub feature_names: Vec<String>,
    pub root: Node<PolicyRef>,
    pub constituents: Vec<Constituent>,
}

impl GuidanceTree {
    pub fn check_schema(&self, n_features: usize, n_arms: usize) -> Result<()> {
        if self.feature_names.len() != n_features {
            return Err(Error::dim(format!(
                "guidance tree expects {} features, table has {n_features}",
                self.feature_names.len()
            )));
        }
        if self.root.max_feature().is_some_and(|f| f >= n_features) {
            return Err(Error::dim("guidance tree references a missing feature"));
        }
        if let Some(l) = self.root.leaves().iter().find(|l| l.policy >= self.constituents.len()) {
            return Err(Error::dim(format!(
                "guidance leaf names policy {} of {}",
                l.policy,
                self.constituents.len()
            )));
        }
        for c in &self.constituents {
            c.policy.check_schema(n_features, n_arms)?;
        }
        Ok(())
    }

    pub fn max_arm(&self) -> usize {
        self.constituents
            .iter()
            .map(|c| c.policy.max_arm())
            .max()
            .unwrap_or(0)
    }

    /// `If feature1 < -0.426, follow Distill-Policy.` style text followed by
    /// each constituent that the tree uses.
    pub fn render(&self, n_arms: usize) -> String {
        let mut out = render_if_else(&self.root, &self.feature_names, &|l| {
            format!("follow {}", self.constituents[l.policy].id)
        });
        let mut used: Vec<usize> = self.root.leaves().iter().map(|l| l.policy).collect();
        used.sort_unstable();
        used.dedup();
        for q in used {
            let c = &self.constituents[q];
            let _ = write!(out, "\n{}:\n{}", c.id, c.policy.render(n_arms));
        }
        out
    }
}

impl Policy for GuidanceTree {
    fn assign(&self, x: ArrayView1<'_, f64>) -> usize {
        let q = self.root.route(&x).policy;
        self.constituents[q].policy.assign(x)
    }

    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn max_arm(&self) -> usize {
        GuidanceTree::max_arm(self)
    }
}

/// Routes `x` to a constituent and applies it.
pub fn apply_ensemble(gt: &GuidanceTree, x: ArrayView1<'_, f64>) -> usize {
    gt.assign(x)
}

/// Per-row `Y_i / p_i(W_i)` on scalarized outcomes.
fn ips_credits(table: &ExperimentTable, weights: &ScalarizationWeights) -> Result<Vec<f64>> {
    let y = table.scalarized_outcomes(weights)?;
    let p = table.propensities_or_uniform();
    y.iter()
        .zip(&p)
        .enumerate()
        .map(|(i, (y, &p))| {
            if p > 0.0 {
                Ok(y / p)
            } else {
                Err(Error::Validation {
                    row: i,
                    column: "p".into(),
                    detail: format!("propensity {p} must be positive"),
                })
            }
        })
        .collect()
}

/// Inverse propensity estimate `(1/N) Σ_{i: W_i = Π(X_i)} Y_i / p_i`.
/// Tables without a propensity column are treated as uniformly randomized.
pub fn ope_ips(policy: &dyn Policy, table: &ExperimentTable, weights: &ScalarizationWeights) -> Result<f64> {
    if policy.n_features() != table.n_features() {
        return Err(Error::dim(format!(
            "policy expects {} features, table has {}",
            policy.n_features(),
            table.n_features()
        )));
    }
    let credits = ips_credits(table, weights)?;
    let w = table.treatment();
    let total: f64 = table
        .features()
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, x)| policy.assign(x.view()) == w[*i])
        .map(|(i, _)| credits[i])
        .sum();
    Ok(total / table.n_rows() as f64)
}

fn check_constituents(constituents: &[Constituent], table: &ExperimentTable) -> Result<()> {
    if constituents.len() < 2 {
        return Err(Error::config(format!(
            "an ensemble needs at least two policies, got {}",
            constituents.len()
        )));
    }
    for c in constituents {
        c.policy.check_schema(table.n_features(), table.n_arms())?;
    }
    Ok(())
}

fn assignments(constituents: &[Constituent], table: &ExperimentTable) -> Vec<Vec<usize>> {
    constituents
        .iter()
        .map(|c| c.policy.assign_all(table.features()))
        .collect()
}

fn search(min_leaf: usize, max_thresholds: usize) -> Result<SplitSearch> {
    if min_leaf == 0 || max_thresholds == 0 {
        return Err(Error::config("min_leaf and max_thresholds must be at least 1"));
    }
    Ok(SplitSearch {
        min_leaf,
        max_thresholds,
    })
}

fn guidance_tree(
    table: &ExperimentTable,
    values: &Array2<f64>,
    constituents: Vec<Constituent>,
    depth: usize,
    search: &SplitSearch,
) -> GuidanceTree {
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    let root = greedy_columns_tree(table.features(), values, &rows, depth, search)
        .map_leaves(&mut |policy| PolicyRef { policy });
    GuidanceTree {
        feature_names: table.feature_names().to_vec(),
        root,
        constituents,
    }
}

/// How explored outcomes are credited to constituent policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExploreCredit {
    /// Every policy is credited with `O_i` at the arm it would assign.
    #[default]
    AllPolicies,
    /// Only the explored policy `A_i` is credited, scaled by `Q`.
    ExploredOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExploreConfig {
    pub depth: usize,
    pub seed: u64,
    pub min_leaf: usize,
    pub credit: ExploreCredit,
    pub max_thresholds: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            seed: 0,
            min_leaf: 1,
            credit: ExploreCredit::AllPolicies,
            max_thresholds: DEFAULT_MAX_THRESHOLDS,
        }
    }
}

/// The explored dataset `(X_i, A_i, O_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreRecord {
    /// Explored policy `A_i` per row.
    pub policy: Vec<usize>,
    /// Arm assigned by the explored policy.
    pub arm: Vec<usize>,
    /// Whether that arm matched the logged arm, revealing `Y_i`.
    pub revealed: Vec<bool>,
    /// `O_i` at that arm.
    pub outcome: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExploreFit {
    pub tree: GuidanceTree,
    pub record: ExploreRecord,
}

pub fn guide_uniform_explore(
    table: &ExperimentTable,
    preds: &PotentialPredictionMatrix,
    constituents: Vec<Constituent>,
    weights: &ScalarizationWeights,
    config: &ExploreConfig,
) -> Result<ExploreFit> {
    check_constituents(&constituents, table)?;
    preds.check_against(table)?;
    let search = search(config.min_leaf, config.max_thresholds)?;
    let yhat = preds.scalarized(weights)?;
    let y = table.scalarized_outcomes(weights)?;
    let w = table.treatment();
    let n = table.n_rows();
    let q_count = constituents.len();
    let assigned = assignments(&constituents, table);
    let reveal = |i: usize, k: usize| if k == w[i] { y[i] } else { yhat[[i, k]] };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let explored: Vec<usize> = (0..n).map(|_| rng.random_range(0..q_count)).collect();
    let arm: Vec<usize> = (0..n).map(|i| assigned[explored[i]][i]).collect();
    let record = ExploreRecord {
        revealed: (0..n).map(|i| arm[i] == w[i]).collect(),
        outcome: (0..n).map(|i| reveal(i, arm[i])).collect(),
        policy: explored,
        arm,
    };

    let values = match config.credit {
        ExploreCredit::AllPolicies => {
            Array2::from_shape_fn((n, q_count), |(i, q)| reveal(i, assigned[q][i]))
        }
        ExploreCredit::ExploredOnly => Array2::from_shape_fn((n, q_count), |(i, q)| {
            if record.policy[i] == q {
                q_count as f64 * record.outcome[i]
            } else {
                0.0
            }
        }),
    };
    Ok(ExploreFit {
        tree: guidance_tree(table, &values, constituents, config.depth, &search),
        record,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpeConfig {
    pub depth: usize,
    pub min_leaf: usize,
    pub max_thresholds: usize,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self {
            depth: 1,
            min_leaf: 1,
            max_thresholds: DEFAULT_MAX_THRESHOLDS,
        }
    }
}

/// Guidance tree maximizing the IPS value over single policies and over
/// `(feature, threshold, Π_k, Π_q)` splits. Depths above 1 recurse greedily.
pub fn guide_ope(
    table: &ExperimentTable,
    constituents: Vec<Constituent>,
    weights: &ScalarizationWeights,
    config: &OpeConfig,
) -> Result<GuidanceTree> {
    check_constituents(&constituents, table)?;
    let search = search(config.min_leaf, config.max_thresholds)?;
    let credits = ips_credits(table, weights)?;
    let w = table.treatment();
    let assigned = assignments(&constituents, table);
    let values = Array2::from_shape_fn((table.n_rows(), constituents.len()), |(i, q)| {
        if assigned[q][i] == w[i] {
            credits[i]
        } else {
            0.0
        }
    });
    Ok(guidance_tree(table, &values, constituents, config.depth, &search))
}
