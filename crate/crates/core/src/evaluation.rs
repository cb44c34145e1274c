//! Ground-truth metrics for policies and effect estimates, plus cross-seed
//! aggregation of metric reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{argmax_lowest, ExperimentTable, OracleOutcomes, ScalarizationWeights};
use crate::error::{Error, Result};
use crate::policy::Policy;

/// Pairwise summation; the result depends only on the order of `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m).powi(2)).collect();
    pairwise_sum(&sq) / values.len() as f64
}

/// Per-row regret terms `max_k Y_i^(k) − Y_i^(arm_i)` on scalarized potentials.
fn regret_terms(arms: &[usize], oracle: &OracleOutcomes, weights: &ScalarizationWeights) -> Result<Vec<f64>> {
    if arms.len() != oracle.n_rows() {
        return Err(Error::dim(format!(
            "{} assignments for an oracle of {} rows",
            arms.len(),
            oracle.n_rows()
        )));
    }
    let s = oracle.scalarized(weights)?;
    arms.iter()
        .enumerate()
        .map(|(i, &a)| {
            if a >= s.ncols() {
                return Err(Error::dim(format!("arm {a} at row {i} exceeds oracle arm count {}", s.ncols())));
            }
            let best = s.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(best - s[[i, a]])
        })
        .collect()
}

fn policy_arms(policy: &dyn Policy, table: &ExperimentTable, oracle: &OracleOutcomes) -> Result<Vec<usize>> {
    oracle.check_against(table)?;
    if policy.n_features() != table.n_features() {
        return Err(Error::dim(format!(
            "policy expects {} features, table has {}",
            policy.n_features(),
            table.n_features()
        )));
    }
    Ok(policy.assign_all(table.features()))
}

/// Summed regret of a fixed assignment.
pub fn assignment_regret(arms: &[usize], oracle: &OracleOutcomes, weights: &ScalarizationWeights) -> Result<f64> {
    Ok(pairwise_sum(&regret_terms(arms, oracle, weights)?))
}

/// `R(Π) = Σ_i max_k Y_i^(k) − Y_i^(Π(X_i))`.
pub fn regret(
    policy: &dyn Policy,
    table: &ExperimentTable,
    oracle: &OracleOutcomes,
    weights: &ScalarizationWeights,
) -> Result<f64> {
    assignment_regret(&policy_arms(policy, table, oracle)?, oracle, weights)
}

pub fn regret_per_capita(
    policy: &dyn Policy,
    table: &ExperimentTable,
    oracle: &OracleOutcomes,
    weights: &ScalarizationWeights,
) -> Result<f64> {
    Ok(regret(policy, table, oracle, weights)? / table.n_rows() as f64)
}

/// Mean scalarized potential outcome under a fixed assignment.
pub fn assignment_value(arms: &[usize], oracle: &OracleOutcomes, weights: &ScalarizationWeights) -> Result<f64> {
    if arms.len() != oracle.n_rows() {
        return Err(Error::dim(format!(
            "{} assignments for an oracle of {} rows",
            arms.len(),
            oracle.n_rows()
        )));
    }
    let s = oracle.scalarized(weights)?;
    let v: Vec<f64> = arms
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            s.get((i, a))
                .copied()
                .ok_or_else(|| Error::dim(format!("arm {a} at row {i} exceeds oracle arm count {}", s.ncols())))
        })
        .collect::<Result<_>>()?;
    Ok(mean(&v))
}

/// `(1/N) Σ_i Y_i^(Π(X_i))` on scalarized potentials.
pub fn true_policy_value(
    policy: &dyn Policy,
    table: &ExperimentTable,
    oracle: &OracleOutcomes,
    weights: &ScalarizationWeights,
) -> Result<f64> {
    assignment_value(&policy_arms(policy, table, oracle)?, oracle, weights)
}

/// Row-wise best arm of the oracle; ties go to the lowest arm.
pub fn oracle_assignment(oracle: &OracleOutcomes, weights: &ScalarizationWeights) -> Result<Vec<usize>> {
    let s = oracle.scalarized(weights)?;
    Ok(s.rows().into_iter().map(|r| argmax_lowest(r.iter().copied())).collect())
}

/// Scalarized true effects `Y_i^(k) − Y_i^(0)`.
pub fn true_effects(oracle: &OracleOutcomes, contrast: usize, weights: &ScalarizationWeights) -> Result<Vec<f64>> {
    let max = oracle.n_arms().saturating_sub(1);
    if contrast == 0 || contrast > max {
        return Err(Error::InvalidContrast { arm: contrast, max });
    }
    let s = oracle.scalarized(weights)?;
    Ok(s.rows().into_iter().map(|r| r[contrast] - r[0]).collect())
}

/// Root-mean-square error between predicted and true effects.
pub fn pehe(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::dim(format!(
            "{} predicted effects for {} true effects",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Invalid("PEHE of zero rows".into()));
    }
    let sq: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).collect();
    Ok(mean(&sq).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupVariances {
    /// Size-weighted mean of within-segment population variances.
    pub within: f64,
    /// Population variance of the segment means.
    pub between: f64,
}

/// Within- and between-segment variance of per-row effects.
pub fn subgroup_variances(segments: &[Vec<f64>]) -> Result<SubgroupVariances> {
    if segments.is_empty() {
        return Err(Error::Invalid("no segments".into()));
    }
    if let Some(i) = segments.iter().position(Vec::is_empty) {
        return Err(Error::Invalid(format!("segment {i} is empty")));
    }
    let total: usize = segments.iter().map(Vec::len).sum();
    let weighted: Vec<f64> = segments
        .iter()
        .map(|s| population_variance(s) * s.len() as f64)
        .collect();
    let means: Vec<f64> = segments.iter().map(|s| mean(s)).collect();
    Ok(SubgroupVariances {
        within: pairwise_sum(&weighted) / total as f64,
        between: population_variance(&means),
    })
}

/// One method's metrics on one seed. Unavailable metrics are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub regret: Option<f64>,
    pub regret_per_capita: Option<f64>,
    pub value: Option<f64>,
    pub pehe: Option<f64>,
    pub within_var: Option<f64>,
    pub between_var: Option<f64>,
}

impl MetricsReport {
    pub fn empty(method: impl Into<String>, seed: u64) -> Self {
        Self {
            method: method.into(),
            seed,
            regret: None,
            regret_per_capita: None,
            value: None,
            pehe: None,
            within_var: None,
            between_var: None,
        }
    }

    fn fields(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("regret", self.regret),
            ("regret_per_capita", self.regret_per_capita),
            ("value", self.value),
            ("pehe", self.pehe),
            ("within_var", self.within_var),
            ("between_var", self.between_var),
        ]
    }
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let m = mean(values);
        let sd = if values.len() > 1 {
            let sq: Vec<f64> = values.iter().map(|v| (v - m).powi(2)).collect();
            (pairwise_sum(&sq) / (values.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean: m, sd, n: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub seeds: usize,
    pub metrics: BTreeMap<String, MeanSd>,
}

/// Groups reports by method, in order of first appearance.
pub fn aggregate_reports(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|method| {
            let group: Vec<&MetricsReport> = reports.iter().filter(|r| r.method == method).collect();
            let mut metrics = BTreeMap::new();
            for (idx, (name, _)) in group[0].fields().iter().enumerate() {
                let vals: Vec<f64> = group.iter().filter_map(|r| r.fields()[idx].1).collect();
                if let Some(ms) = MeanSd::of(&vals) {
                    metrics.insert(name.to_string(), ms);
                }
            }
            AggregateRow {
                method: method.to_string(),
                seeds: group.len(),
                metrics,
            }
        })
        .collect()
}

const REPORT_COLUMNS: [&str; 6] = ["regret", "regret_per_capita", "value", "pehe", "within_var", "between_var"];

/// Fixed-width `mean ± sd` table, one row per method.
pub fn render_aggregate(rows: &[AggregateRow]) -> String {
    let cols: Vec<&str> = REPORT_COLUMNS
        .iter()
        .copied()
        .filter(|c| rows.iter().any(|r| r.metrics.contains_key(*c)))
        .collect();
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:>5}", "method", "seeds");
    for c in &cols {
        let _ = write!(out, "  {c:>21}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<width$}  {:>5}", r.method, r.seeds);
        for c in &cols {
            let cell = r
                .metrics
                .get(*c)
                .map_or_else(|| "-".to_string(), |m| format!("{:.4} ± {:.4}", m.mean, m.sd));
            let _ = write!(out, "  {cell:>21}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_feature_names;
    use crate::tree::PolicyTree;
    use ndarray::{Array2, Array3};
    use proptest::prelude::*;

    fn oracle(rows: &[[f64; 2]]) -> OracleOutcomes {
        OracleOutcomes::new(Array3::from_shape_fn((rows.len(), 2, 1), |(i, k, _)| rows[i][k])).unwrap()
    }

    #[test]
    fn regret_examples() {
        let o = oracle(&[[1.0, 3.0], [2.0, 0.0]]);
        let w = ScalarizationWeights::ones(1);
        assert_eq!(assignment_regret(&[1, 1], &o, &w).unwrap(), 2.0);
        let best = oracle_assignment(&o, &w).unwrap();
        assert_eq!(best, vec![1, 0]);
        assert_eq!(assignment_regret(&best, &o, &w).unwrap(), 0.0);
        assert!(assignment_regret(&[1], &o, &w).is_err());

        let t = ExperimentTable::new(
            Array2::zeros((2, 1)),
            vec![0, 1],
            Array2::zeros((2, 1)),
            None,
            default_feature_names(1),
        )
        .unwrap();
        let p = PolicyTree::constant(default_feature_names(1), 1);
        assert_eq!(regret(&p, &t, &o, &w).unwrap(), 2.0);
        assert_eq!(regret_per_capita(&p, &t, &o, &w).unwrap(), 1.0);
        assert_eq!(true_policy_value(&p, &t, &o, &w).unwrap(), 1.5);
    }

    #[test]
    fn pehe_examples() {
        assert_eq!(pehe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((pehe(&[1.5, 2.5, -0.5], &[1.0, 2.0, -1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pehe(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), (2.5f64).sqrt());
        assert!(pehe(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn subgroup_examples() {
        let one = subgroup_variances(&[vec![1.0, 3.0]]).unwrap();
        assert_eq!(one.between, 0.0);
        assert_eq!(one.within, 1.0);
        let v = subgroup_variances(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!((v.within, v.between), (0.0, 1.0));
        assert!(subgroup_variances(&[vec![1.0], vec![]]).is_err());
        assert!(subgroup_variances(&[]).is_err());
    }

    #[test]
    fn aggregate_groups_by_method() {
        let mut a = MetricsReport::empty("greedy", 0);
        a.regret = Some(1.0);
        let mut b = MetricsReport::empty("greedy", 1);
        b.regret = Some(3.0);
        let mut c = MetricsReport::empty("distill", 0);
        c.pehe = Some(0.5);
        let rows = aggregate_reports(&[a, c, b]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, "greedy");
        let r = rows[0].metrics["regret"];
        assert_eq!((r.mean, r.n), (2.0, 2));
        assert!((r.sd - 2f64.sqrt()).abs() < 1e-15);
        let text = render_aggregate(&rows);
        assert!(text.contains("2.0000 ± 1.4142"));
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn pehe_is_permutation_invariant(
            pairs in proptest::collection::vec((-100i32..100, -100i32..100), 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let p: Vec<f64> = pairs.iter().map(|(a, _)| f64::from(*a) / 8.0).collect();
            let t: Vec<f64> = pairs.iter().map(|(_, b)| f64::from(*b) / 8.0).collect();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let tp: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            let a = pehe(&p, &t).unwrap();
            let b = pehe(&pp, &tp).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn regret_value_identity(
            rows in proptest::collection::vec((-50i32..50, -50i32..50, 0usize..2), 1..50),
        ) {
            let o = oracle(&rows.iter().map(|(a, b, _)| [f64::from(*a), f64::from(*b)]).collect::<Vec<_>>());
            let arms: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let w = ScalarizationWeights::ones(1);
            let n = rows.len() as f64;
            let best: Vec<f64> = rows.iter().map(|(a, b, _)| f64::from(*a.max(b))).collect();
            let r = assignment_regret(&arms, &o, &w).unwrap();
            let v = assignment_value(&arms, &o, &w).unwrap();
            prop_assert!(r >= 0.0);
            prop_assert!((r - n * (mean(&best) - v)).abs() <= 1e-9 * r.abs().max(1.0));
        }

        #[test]
        fn equal_means_have_no_between_variance(
            c in -10i32..10,
            devs in proptest::collection::vec(proptest::collection::vec(0i32..10, 1..4), 1..6),
        ) {
            let c = f64::from(c);
            let segs: Vec<Vec<f64>> = devs
                .iter()
                .map(|d| d.iter().flat_map(|&x| [c + f64::from(x), c - f64::from(x)]).collect())
                .collect();
            prop_assert_eq!(subgroup_variances(&segs).unwrap().between, 0.0);
        }
    }
}
