//! Shared data model: experiment tables, per-arm predictions, outcome
//! scalarization and the train/validation/test split.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logged experiment: features, assigned arm, observed outcomes and an
/// optional assignment propensity per row. Arm 0 is control.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    features: Array2<f64>,
    treatment: Vec<usize>,
    outcomes: Array2<f64>,
    propensity: Option<Vec<f64>>,
    feature_names: Vec<String>,
    n_arms: usize,
}

impl ExperimentTable {
    /// Builds a validated table. The arm count is `max(treatment) + 1`; use
    /// [`ExperimentTable::with_arm_count`] when some arms may be absent.
    pub fn new(
        features: Array2<f64>,
        treatment: Vec<usize>,
        outcomes: Array2<f64>,
        propensity: Option<Vec<f64>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n_arms = treatment.iter().copied().max().map_or(1, |m| m + 1);
        Self::with_arm_count(features, treatment, outcomes, propensity, feature_names, n_arms)
    }

    pub fn with_arm_count(
        features: Array2<f64>,
        treatment: Vec<usize>,
        outcomes: Array2<f64>,
        propensity: Option<Vec<f64>>,
        feature_names: Vec<String>,
        n_arms: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Invalid("experiment table has no rows".into()));
        }
        if treatment.len() != n || outcomes.nrows() != n {
            return Err(Error::dim(format!(
                "features have {n} rows, treatment {} and outcomes {}",
                treatment.len(),
                outcomes.nrows()
            )));
        }
        if outcomes.ncols() == 0 {
            return Err(Error::dim("at least one outcome column is required"));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::dim(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        for (a, name) in feature_names.iter().enumerate() {
            if feature_names[..a].contains(name) {
                return Err(Error::Invalid(format!("duplicate feature name `{name}`")));
            }
        }
        for ((i, j), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::Validation {
                    row: i,
                    column: feature_names[j].clone(),
                    detail: format!("non-finite feature value {v}"),
                });
            }
        }
        for ((i, j), v) in outcomes.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::Validation {
                    row: i,
                    column: format!("y{j}"),
                    detail: format!("non-finite outcome {v}"),
                });
            }
        }
        if let Some((i, &w)) = treatment.iter().enumerate().find(|(_, &w)| w >= n_arms) {
            return Err(Error::Validation {
                row: i,
                column: "w".into(),
                detail: format!("arm {w} exceeds arm count {n_arms}"),
            });
        }
        if let Some(p) = &propensity {
            if p.len() != n {
                return Err(Error::dim(format!("{} propensities for {n} rows", p.len())));
            }
            if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v <= 1.0)) {
                return Err(Error::Validation {
                    row: i,
                    column: "p".into(),
                    detail: format!("propensity {v} outside (0, 1]"),
                });
            }
        }
        Ok(Self {
            features,
            treatment,
            outcomes,
            propensity,
            feature_names,
            n_arms,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.ncols()
    }

    /// Number of arms including control (K + 1).
    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn treatment(&self) -> &[usize] {
        &self.treatment
    }

    pub fn outcomes(&self) -> ArrayView2<'_, f64> {
        self.outcomes.view()
    }

    pub fn propensity(&self) -> Option<&[f64]> {
        self.propensity.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Logged propensities, or `1 / (K + 1)` for every row when the table
    /// carries none (uniform randomization).
    pub fn propensities_or_uniform(&self) -> Vec<f64> {
        match &self.propensity {
            Some(p) => p.clone(),
            None => vec![1.0 / self.n_arms as f64; self.n_rows()],
        }
    }

    pub fn scalarized_outcomes(&self, weights: &ScalarizationWeights) -> Result<Vec<f64>> {
        weights.check_len(self.n_outcomes())?;
        Ok(self
            .outcomes
            .rows()
            .into_iter()
            .map(|r| weights.dot(r.iter().copied()))
            .collect())
    }

    /// Row ids whose observed arm is `arm`, ascending.
    pub fn arm_rows(&self, arm: usize) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.treatment[i] == arm).collect()
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_arms];
        for &w in &self.treatment {
            counts[w] += 1;
        }
        counts
    }

    /// Sub-table of the given rows, in the given order. The arm count is kept.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n_rows()) {
            return Err(Error::dim(format!("row {bad} out of range for {} rows", self.n_rows())));
        }
        Self::with_arm_count(
            self.features.select(Axis(0), rows),
            rows.iter().map(|&i| self.treatment[i]).collect(),
            self.outcomes.select(Axis(0), rows),
            self.propensity.as_ref().map(|p| rows.iter().map(|&i| p[i]).collect()),
            self.feature_names.clone(),
            self.n_arms,
        )
    }
}

/// Linear scalarization weights `c_1..c_J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalarizationWeights(Vec<f64>);

impl ScalarizationWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("scalarization weights must be non-empty"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::config(format!("non-finite scalarization weight {w}")));
        }
        Ok(Self(weights))
    }

    /// Equal weighting over `n_outcomes` outcomes.
    pub fn ones(n_outcomes: usize) -> Self {
        Self(vec![1.0; n_outcomes])
    }

    /// The given weights, or all-ones when none are supplied.
    pub fn resolve(weights: Option<&Self>, n_outcomes: usize) -> Result<Self> {
        match weights {
            Some(w) => {
                w.check_len(n_outcomes)?;
                Ok(w.clone())
            }
            None => Ok(Self::ones(n_outcomes)),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_len(&self, n_outcomes: usize) -> Result<()> {
        if self.0.len() != n_outcomes {
            return Err(Error::dim(format!(
                "{} scalarization weights for {n_outcomes} outcomes",
                self.0.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn dot(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        self.0.iter().zip(values).map(|(c, y)| c * y).sum()
    }
}

/// `Σ_j c_j · y_j`.
pub fn scalarize(outcomes: &[f64], weights: &ScalarizationWeights) -> Result<f64> {
    weights.check_len(outcomes.len())?;
    Ok(weights.dot(outcomes.iter().copied()))
}

/// Scalarizes an `N × arms × J` cube into `N × arms`.
pub(crate) fn scalarize_cube(
    cube: &Array3<f64>,
    weights: &ScalarizationWeights,
) -> Result<Array2<f64>> {
    let (n, arms, j) = cube.dim();
    weights.check_len(j)?;
    Ok(Array2::from_shape_fn((n, arms), |(i, k)| {
        weights.dot((0..j).map(|o| cube[[i, k, o]]))
    }))
}

fn check_cube_finite(cube: &Array3<f64>, prefix: &str) -> Result<()> {
    for ((i, k, j), v) in cube.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::Validation {
                row: i,
                column: format!("{prefix}_{j}_{k}"),
                detail: format!("non-finite value {v}"),
            });
        }
    }
    Ok(())
}

/// Predicted potential outcomes `Ŷ_ij^(k)` with shape `N × (K + 1) × J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialPredictionMatrix {
    values: Array3<f64>,
}

impl PotentialPredictionMatrix {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        check_cube_finite(&values, "yhat")?;
        Ok(Self { values })
    }

    pub fn n_rows(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_arms(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_outcomes(&self) -> usize {
        self.values.dim().2
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn get(&self, row: usize, arm: usize, outcome: usize) -> f64 {
        self.values[[row, arm, outcome]]
    }

    /// `N × (K + 1)` matrix of scalarized predictions.
    pub fn scalarized(&self, weights: &ScalarizationWeights) -> Result<Array2<f64>> {
        scalarize_cube(&self.values, weights)
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n_rows()) {
            return Err(Error::dim(format!("row {bad} out of range for {} rows", self.n_rows())));
        }
        Ok(Self {
            values: self.values.select(Axis(0), rows),
        })
    }

    /// Checks that the matrix pairs with `table`: same rows, arms and outcomes.
    pub fn check_against(&self, table: &ExperimentTable) -> Result<()> {
        if self.n_rows() != table.n_rows() {
            return Err(Error::dim(format!(
                "predictions have {} rows but the table has {}",
                self.n_rows(),
                table.n_rows()
            )));
        }
        if self.n_arms() != table.n_arms() || self.n_outcomes() != table.n_outcomes() {
            return Err(Error::dim(format!(
                "predictions cover {} arms × {} outcomes but the table has {} × {}",
                self.n_arms(),
                self.n_outcomes(),
                table.n_arms(),
                table.n_outcomes()
            )));
        }
        Ok(())
    }
}

/// True potential outcomes `Y_ij^(k)`, available only for synthetic or
/// semi-synthetic data. Shape `N × (K + 1) × J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcomes {
    potential: Array3<f64>,
}

impl OracleOutcomes {
    pub fn new(potential: Array3<f64>) -> Result<Self> {
        check_cube_finite(&potential, "ystar")?;
        Ok(Self { potential })
    }

    pub fn n_rows(&self) -> usize {
        self.potential.dim().0
    }

    pub fn n_arms(&self) -> usize {
        self.potential.dim().1
    }

    pub fn n_outcomes(&self) -> usize {
        self.potential.dim().2
    }

    pub fn potential(&self) -> &Array3<f64> {
        &self.potential
    }

    pub fn scalarized(&self, weights: &ScalarizationWeights) -> Result<Array2<f64>> {
        scalarize_cube(&self.potential, weights)
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n_rows()) {
            return Err(Error::dim(format!("row {bad} out of range for {} rows", self.n_rows())));
        }
        Ok(Self {
            potential: self.potential.select(Axis(0), rows),
        })
    }

    pub fn check_against(&self, table: &ExperimentTable) -> Result<()> {
        if self.n_rows() != table.n_rows() {
            return Err(Error::dim(format!(
                "oracle has {} rows but the table has {}",
                self.n_rows(),
                table.n_rows()
            )));
        }
        if self.n_arms() != table.n_arms() || self.n_outcomes() != table.n_outcomes() {
            return Err(Error::dim(format!(
                "oracle covers {} arms × {} outcomes but the table has {} × {}",
                self.n_arms(),
                self.n_outcomes(),
                table.n_arms(),
                table.n_outcomes()
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_TEST_FRAC: f64 = 0.4;
pub const DEFAULT_VAL_FRAC_OF_REST: f64 = 0.3;

/// Row ids of a three-way partition, each part sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Seeded uniform partition of `0..n`. The test part takes
    /// `round(n · test_frac)` rows and validation takes
    /// `round(rest · val_frac_of_rest)` of the remainder.
    pub fn new(n: usize, test_frac: f64, val_frac_of_rest: f64, seed: u64) -> Result<Self> {
        for (name, f) in [("test_frac", test_frac), ("val_frac_of_rest", val_frac_of_rest)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(format!("{name} = {f} must lie in (0, 1)")));
            }
        }
        let n_test = (n as f64 * test_frac).round() as usize;
        let rest = n.saturating_sub(n_test);
        let n_val = (rest as f64 * val_frac_of_rest).round() as usize;
        let n_train = rest.saturating_sub(n_val);
        if n_test == 0 || n_val == 0 || n_train == 0 || n_test + n_val + n_train != n {
            return Err(Error::config(format!(
                "split of {n} rows leaves an empty part (train {n_train}, validation {n_val}, test {n_test})"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut test = order[..n_test].to_vec();
        let mut validation = order[n_test..n_test + n_val].to_vec();
        let mut train = order[n_test + n_val..].to_vec();
        test.sort_unstable();
        validation.sort_unstable();
        train.sort_unstable();
        Ok(Self {
            train,
            validation,
            test,
        })
    }
}

/// Train, validation and test tables plus their row ids in the source table.
#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: ExperimentTable,
    pub validation: ExperimentTable,
    pub test: ExperimentTable,
    pub indices: SplitIndices,
}

pub fn split_three_way(
    table: &ExperimentTable,
    test_frac: f64,
    val_frac_of_rest: f64,
    seed: u64,
) -> Result<SplitBundle> {
    let indices = SplitIndices::new(table.n_rows(), test_frac, val_frac_of_rest, seed)?;
    Ok(SplitBundle {
        train: table.select(&indices.train)?,
        validation: table.select(&indices.validation)?,
        test: table.select(&indices.test)?,
        indices,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax_lowest<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub(crate) fn default_feature_names(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("feature{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn tiny_table(n: usize) -> ExperimentTable {
        let features = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let treatment = (0..n).map(|i| i % 2).collect();
        let outcomes = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 * 0.5);
        ExperimentTable::new(features, treatment, outcomes, None, default_feature_names(1)).unwrap()
    }

    #[test]
    fn scalarize_examples() {
        let ones = ScalarizationWeights::ones(2);
        assert_eq!(scalarize(&[2.0, 3.0], &ones).unwrap(), 5.0);
        let sel = ScalarizationWeights::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(scalarize(&[2.0, 3.0], &sel).unwrap(), 3.0);
        let w = ScalarizationWeights::new(vec![2.0, 1.0, 4.0]).unwrap();
        // 2·1.5 + 1·(−2) + 4·0.5
        assert_eq!(scalarize(&[1.5, -2.0, 0.5], &w).unwrap(), 3.0);
    }

    #[test]
    fn scalarize_length_mismatch() {
        let w = ScalarizationWeights::ones(3);
        assert!(matches!(scalarize(&[1.0, 2.0], &w), Err(Error::Dimension(_))));
    }

    #[test]
    fn split_sizes_for_hundred_rows() {
        let t = tiny_table(100);
        let b = split_three_way(&t, DEFAULT_TEST_FRAC, DEFAULT_VAL_FRAC_OF_REST, 7).unwrap();
        assert_eq!(b.train.n_rows(), 42);
        assert_eq!(b.validation.n_rows(), 18);
        assert_eq!(b.test.n_rows(), 40);
        let mut all: Vec<usize> = b
            .indices
            .train
            .iter()
            .chain(&b.indices.validation)
            .chain(&b.indices.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let a = SplitIndices::new(100, 0.4, 0.3, 11).unwrap();
        let b = SplitIndices::new(100, 0.4, 0.3, 11).unwrap();
        let c = SplitIndices::new(100, 0.4, 0.3, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_empty_part() {
        let t = tiny_table(10);
        assert!(matches!(split_three_way(&t, 0.99, 0.3, 1), Err(Error::Config(_))));
        assert!(matches!(split_three_way(&t, 0.0, 0.3, 1), Err(Error::Config(_))));
    }

    #[test]
    fn table_validation() {
        let f = array![[1.0], [f64::NAN]];
        let err = ExperimentTable::new(f, vec![0, 1], array![[1.0], [2.0]], None, vec!["a".into()])
            .unwrap_err();
        assert!(matches!(err, Error::Validation { row: 1, .. }));

        let err = ExperimentTable::new(
            array![[1.0], [2.0]],
            vec![0, 1],
            array![[1.0], [2.0]],
            Some(vec![0.5, 0.0]),
            vec!["a".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { row: 1, .. }));

        let err = ExperimentTable::with_arm_count(
            array![[1.0]],
            vec![3],
            array![[1.0]],
            None,
            vec!["a".into()],
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn select_keeps_arm_count() {
        let t = tiny_table(6);
        let s = t.select(&[0, 2, 4]).unwrap();
        assert_eq!(s.n_arms(), 2);
        assert_eq!(s.arm_counts(), vec![3, 0]);
    }

    proptest! {
        #[test]
        fn scalarize_is_linear(
            u in prop::collection::vec(-100i32..100, 3),
            v in prop::collection::vec(-100i32..100, 3),
            c in prop::collection::vec(-10i32..10, 3),
            a in -5i32..5,
            b in -5i32..5,
        ) {
            // small integers keep every product and sum exact
            let w = ScalarizationWeights::new(c.iter().map(|&x| x as f64).collect()).unwrap();
            let combo: Vec<f64> = u.iter().zip(&v).map(|(&x, &y)| (a * x + b * y) as f64).collect();
            let uf: Vec<f64> = u.iter().map(|&x| x as f64).collect();
            let vf: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let lhs = scalarize(&combo, &w).unwrap();
            let rhs = a as f64 * scalarize(&uf, &w).unwrap() + b as f64 * scalarize(&vf, &w).unwrap();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
