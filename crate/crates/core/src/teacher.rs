//! Potential-outcome teachers: a built-in T-learner over least-squares
//! gradient-boosted regression trees, and the naive argmax policy implied by
//! any teacher's predictions.

use ndarray::{Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{argmax_lowest, ExperimentTable, PotentialPredictionMatrix, ScalarizationWeights};
use crate::error::{Error, Result};
use crate::split::{grow, SplitCriterion, SplitSearch, DEFAULT_MAX_THRESHOLDS};
use crate::tree::Node;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Minimum rows per arm required to fit that arm's regressors.
    pub min_arm_rows: usize,
    /// Recorded for provenance; boosting here uses no subsampling, so the
    /// fit is deterministic regardless of seed.
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 1,
            min_arm_rows: 20,
            seed: 0,
        }
    }
}

impl TeacherConfig {
    /// A single unboosted regression tree per arm and outcome.
    pub fn single_tree(max_depth: usize) -> Self {
        Self {
            n_trees: 1,
            max_depth,
            learning_rate: 1.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::config("min_leaf must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueLeaf {
    pub value: f64,
}

/// Least-squares boosted ensemble: `base + lr · Σ tree(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedRegressor {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Node<ValueLeaf>>,
}

impl BoostedRegressor {
    pub fn fit(features: ArrayView2<'_, f64>, targets: &[f64], config: &TeacherConfig) -> Self {
        let n = targets.len();
        let base = if n == 0 {
            0.0
        } else {
            targets.iter().sum::<f64>() / n as f64
        };
        let mut current = vec![base; n];
        let mut residual = vec![0.0; n];
        let rows: Vec<usize> = (0..n).collect();
        let search = SplitSearch {
            min_leaf: config.min_leaf,
            max_thresholds: DEFAULT_MAX_THRESHOLDS,
        };
        let mut trees = Vec::with_capacity(config.n_trees);
        for _ in 0..config.n_trees {
            for i in 0..n {
                residual[i] = targets[i] - current[i];
            }
            let crit = SquaredError { targets: &residual };
            let structure = grow(&crit, features, &rows, Some(config.max_depth), &search);
            let tree = structure.map_leaves(&mut |leaf_rows: Vec<usize>| ValueLeaf {
                value: mean_of(leaf_rows.iter().map(|&i| residual[i])),
            });
            for (i, c) in current.iter_mut().enumerate() {
                let row = features.row(i);
                *c += config.learning_rate * tree.route(&row).value;
            }
            trees.push(tree);
        }
        Self {
            base,
            learning_rate: config.learning_rate,
            trees,
        }
    }

    pub fn predict_row<X>(&self, x: &X) -> f64
    where
        X: std::ops::Index<usize, Output = f64> + ?Sized,
    {
        self.base
            + self.learning_rate * self.trees.iter().map(|t| t.route(x).value).sum::<f64>()
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Node statistics centered on the node mean to keep the SSE stable.
#[derive(Debug, Clone)]
pub(crate) struct CenteredSums {
    shift: f64,
    count: f64,
    sum: f64,
    sumsq: f64,
}

impl CenteredSums {
    fn sse(&self) -> f64 {
        if self.count == 0.0 {
            0.0
        } else {
            (self.sumsq - self.sum * self.sum / self.count).max(0.0)
        }
    }
}

struct SquaredError<'a> {
    targets: &'a [f64],
}

impl SplitCriterion for SquaredError<'_> {
    type Stats = CenteredSums;

    fn node_stats(&self, rows: &[usize]) -> CenteredSums {
        let shift = mean_of(rows.iter().map(|&i| self.targets[i]));
        let mut s = CenteredSums {
            shift,
            count: 0.0,
            sum: 0.0,
            sumsq: 0.0,
        };
        for &i in rows {
            self.add(&mut s, i);
        }
        s
    }

    fn empty_like(&self, parent: &CenteredSums) -> CenteredSums {
        CenteredSums {
            shift: parent.shift,
            count: 0.0,
            sum: 0.0,
            sumsq: 0.0,
        }
    }

    fn add(&self, s: &mut CenteredSums, row: usize) {
        let v = self.targets[row] - s.shift;
        s.count += 1.0;
        s.sum += v;
        s.sumsq += v * v;
    }

    fn remove(&self, s: &mut CenteredSums, row: usize) {
        let v = self.targets[row] - s.shift;
        s.count -= 1.0;
        s.sum -= v;
        s.sumsq -= v * v;
    }

    fn baseline(&self, parent: &CenteredSums) -> Option<f64> {
        Some(-parent.sse())
    }

    fn score(&self, left: &CenteredSums, right: &CenteredSums) -> Option<f64> {
        Some(-(left.sse() + right.sse()))
    }

    fn scale(&self, parent: &CenteredSums) -> f64 {
        parent.sumsq
    }
}

/// T-learner: one boosted regressor per (arm, outcome), each trained only on
/// the rows observed in that arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TLearnerModel {
    pub config: TeacherConfig,
    pub feature_names: Vec<String>,
    pub n_arms: usize,
    pub n_outcomes: usize,
    /// Indexed `arm * n_outcomes + outcome`.
    pub regressors: Vec<BoostedRegressor>,
}

impl TLearnerModel {
    pub fn regressor(&self, arm: usize, outcome: usize) -> &BoostedRegressor {
        &self.regressors[arm * self.n_outcomes + outcome]
    }
}

pub fn fit_tlearner(train: &ExperimentTable, config: &TeacherConfig) -> Result<TLearnerModel> {
    config.validate()?;
    let counts = train.arm_counts();
    let needed = config.min_arm_rows.max(1);
    if let Some((arm, &c)) = counts.iter().enumerate().find(|(_, &c)| c < needed) {
        return Err(Error::InsufficientOverlap {
            arm,
            detail: format!("{c} training rows, need at least {needed}"),
        });
    }
    let n_outcomes = train.n_outcomes();
    let arm_data: Vec<(Array2<f64>, Vec<usize>)> = (0..train.n_arms())
        .map(|k| {
            let rows = train.arm_rows(k);
            (train.features().select(ndarray::Axis(0), &rows), rows)
        })
        .collect();
    let regressors = (0..train.n_arms() * n_outcomes)
        .into_par_iter()
        .map(|idx| {
            let (k, j) = (idx / n_outcomes, idx % n_outcomes);
            let (x, rows) = &arm_data[k];
            let y: Vec<f64> = rows.iter().map(|&i| train.outcomes()[[i, j]]).collect();
            BoostedRegressor::fit(x.view(), &y, config)
        })
        .collect();
    Ok(TLearnerModel {
        config: config.clone(),
        feature_names: train.feature_names().to_vec(),
        n_arms: train.n_arms(),
        n_outcomes,
        regressors,
    })
}

/// Full `N × (K + 1) × J` prediction cube from features alone.
pub fn predict_potential(
    model: &TLearnerModel,
    features: ArrayView2<'_, f64>,
) -> Result<PotentialPredictionMatrix> {
    if features.ncols() != model.feature_names.len() {
        return Err(Error::dim(format!(
            "model expects {} features, got {}",
            model.feature_names.len(),
            features.ncols()
        )));
    }
    let n = features.nrows();
    let (arms, outs) = (model.n_arms, model.n_outcomes);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = features.row(i);
            model.regressors.iter().map(|r| r.predict_row(&x)).collect()
        })
        .collect();
    let cube = Array3::from_shape_fn((n, arms, outs), |(i, k, j)| rows[i][k * outs + j]);
    PotentialPredictionMatrix::new(cube)
}

/// Per-row argmax of scalarized predictions; ties go to the lowest arm.
pub fn naive_hte_policy(
    preds: &PotentialPredictionMatrix,
    weights: &ScalarizationWeights,
) -> Result<Vec<usize>> {
    let s = preds.scalarized(weights)?;
    Ok(s.rows()
        .into_iter()
        .map(|r| argmax_lowest(r.iter().copied()))
        .collect())
}
