//! Synthetic experiments with known potential outcomes, and semi-synthetic
//! potential outcomes from real randomized data by nearest-neighbour
//! matching.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, Array3, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{default_feature_names, ExperimentTable, OracleOutcomes};
use crate::error::{Error, Result};

/// Outcome level shared by all arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineFn {
    Zero,
    /// `Σ_f coef_f · x_f`.
    Linear { coef: Vec<f64> },
}

/// Treatment effect `κ(x)` per unit of arm index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectFn {
    Constant { value: f64 },
    /// `Σ_f coef_f · x_f`.
    Linear { coef: Vec<f64> },
    /// `below` when `x_feature < threshold`, else `above`.
    Step {
        feature: usize,
        threshold: f64,
        below: f64,
        above: f64,
    },
}

fn linear(coef: &[f64], x: ArrayView1<'_, f64>) -> f64 {
    coef.iter().zip(x).map(|(c, v)| c * v).sum()
}

impl BaselineFn {
    fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self {
            BaselineFn::Zero => 0.0,
            BaselineFn::Linear { coef } => linear(coef, x),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            BaselineFn::Zero => None,
            BaselineFn::Linear { coef } => coef.len().checked_sub(1),
        }
    }
}

impl EffectFn {
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self {
            EffectFn::Constant { value } => *value,
            EffectFn::Linear { coef } => linear(coef, x),
            EffectFn::Step {
                feature,
                threshold,
                below,
                above,
            } => {
                if x[*feature] < *threshold {
                    *below
                } else {
                    *above
                }
            }
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            EffectFn::Constant { .. } => None,
            EffectFn::Linear { coef } => coef.len().checked_sub(1),
            EffectFn::Step { feature, .. } => Some(*feature),
        }
    }
}

/// Generator for `Y^(k) = η(x) + (k − ½)·κ(x) + ε` with standard normal
/// features, uniformly randomized arms and noise shared across arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    /// Number of treated arms `K`.
    #[serde(default = "one")]
    pub k_arms: usize,
    #[serde(default)]
    pub noise_sd: f64,
    pub baseline: BaselineFn,
    pub effect: EffectFn,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

/// Noise standard deviation of Synthetic A.
pub const SYNTHETIC_A_NOISE_SD: f64 = 0.1;

impl SyntheticSpec {
    /// Two features, `η(x) = x₀/2 + x₁`, `κ(x) = x₀/2`.
    pub fn synthetic_a(n: usize, seed: u64) -> Self {
        Self {
            n,
            p: 2,
            k_arms: 1,
            noise_sd: SYNTHETIC_A_NOISE_SD,
            baseline: BaselineFn::Linear { coef: vec![0.5, 1.0] },
            effect: EffectFn::Linear { coef: vec![0.5, 0.0] },
            seed,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if self.p == 0 {
            return Err(Error::config("p must be at least 1"));
        }
        if self.k_arms == 0 {
            return Err(Error::config("k_arms must be at least 1"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config(format!("noise_sd = {} must be non-negative", self.noise_sd)));
        }
        let max = self.baseline.max_feature().max(self.effect.max_feature());
        if max.is_some_and(|f| f >= self.p) {
            return Err(Error::config(format!(
                "generator references feature {} but p = {}",
                max.unwrap_or(0),
                self.p
            )));
        }
        Ok(())
    }

    /// Potential outcome of arm `k` without noise.
    pub fn mean_outcome(&self, x: ArrayView1<'_, f64>, k: usize) -> f64 {
        self.baseline.eval(x) + (k as f64 - 0.5) * self.effect.eval(x)
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<(ExperimentTable, OracleOutcomes)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::config(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::config(e.to_string()))?;
    let arms = spec.k_arms + 1;
    let mut x = Array2::zeros((spec.n, spec.p));
    let mut w = Vec::with_capacity(spec.n);
    let mut eps = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        for f in 0..spec.p {
            x[[i, f]] = normal.sample(&mut rng);
        }
        w.push(rng.random_range(0..arms));
        eps.push(noise.sample(&mut rng));
    }
    let potential = Array3::from_shape_fn((spec.n, arms, 1), |(i, k, _)| {
        spec.mean_outcome(x.row(i), k) + eps[i]
    });
    finish(x, w, potential, default_feature_names(spec.p), arms)
}

fn finish(
    x: Array2<f64>,
    w: Vec<usize>,
    potential: Array3<f64>,
    names: Vec<String>,
    arms: usize,
) -> Result<(ExperimentTable, OracleOutcomes)> {
    let n = x.nrows();
    let j = potential.dim().2;
    let y = Array2::from_shape_fn((n, j), |(i, o)| potential[[i, w[i], o]]);
    let p = vec![1.0 / arms as f64; n];
    let table = ExperimentTable::with_arm_count(x, w, y, Some(p), names, arms)?;
    Ok((table, OracleOutcomes::new(potential)?))
}

pub fn gen_synthetic_a(n: usize, seed: u64) -> Result<(ExperimentTable, OracleOutcomes)> {
    generate(&SyntheticSpec::synthetic_a(n, seed))
}

/// Days from symptom onset below which treatment helps.
pub const COVID_DAYS_CUTOFF: f64 = 4.5;

/// True treatment effect of the COVID-like generator.
pub fn covid_effect(days: f64, ast: f64, ldh: f64) -> f64 {
    if days <= COVID_DAYS_CUTOFF {
        0.02
    } else if ast < 40.0 && ldh < 250.0 {
        -0.03
    } else {
        -0.01
    }
}

/// Trial-like data with features `days`, `ast`, `ldh` and `age`; treatment
/// helps early starters and harms late ones, more so with normal labs.
pub fn gen_covid_like(n: usize, seed: u64) -> Result<(ExperimentTable, OracleOutcomes)> {
    if n == 0 {
        return Err(Error::config("n must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let days_d = Uniform::new(0.0, 15.0).map_err(|e| Error::config(e.to_string()))?;
    let age_d = Uniform::new(18.0, 90.0).map_err(|e| Error::config(e.to_string()))?;
    let ast_d = Normal::new(35.0, 12.0).map_err(|e| Error::config(e.to_string()))?;
    let ldh_d = Normal::new(240.0, 60.0).map_err(|e| Error::config(e.to_string()))?;
    let noise = Normal::new(0.0, 0.05).map_err(|e| Error::config(e.to_string()))?;
    let mut x = Array2::zeros((n, 4));
    let mut w = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n);
    for i in 0..n {
        x[[i, 0]] = days_d.sample(&mut rng);
        x[[i, 1]] = f64::max(ast_d.sample(&mut rng), 5.0);
        x[[i, 2]] = f64::max(ldh_d.sample(&mut rng), 80.0);
        x[[i, 3]] = age_d.sample(&mut rng);
        w.push(rng.random_range(0..2usize));
        eps.push(noise.sample(&mut rng));
    }
    let potential = Array3::from_shape_fn((n, 2, 1), |(i, k, _)| {
        let r = x.row(i);
        let base = 0.8 - 0.004 * (r[3] - 50.0) - 0.0005 * (r[2] - 240.0);
        let tau = covid_effect(r[0], r[1], r[2]);
        base + k as f64 * tau + eps[i]
    });
    let names = ["days", "ast", "ldh", "age"].map(String::from).to_vec();
    finish(x, w, potential, names, 2)
}

/// Arms at or below this size are searched by brute force.
const BRUTE_FORCE_MAX: usize = 64;

/// A neighbour candidate ordered by `(distance², row)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    row: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist2(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Exact k-d tree over one arm's rows.
struct KdTree<'a> {
    x: &'a Array2<f64>,
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

struct KdNode {
    row: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl<'a> KdTree<'a> {
    fn new(x: &'a Array2<f64>, rows: &[usize]) -> Self {
        let mut t = Self {
            x,
            nodes: Vec::with_capacity(rows.len()),
            root: None,
        };
        let mut rows = rows.to_vec();
        t.root = t.build(&mut rows, 0);
        t
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> Option<usize> {
        if rows.is_empty() {
            return None;
        }
        let axis = depth % self.x.ncols();
        let x = self.x;
        rows.sort_unstable_by(|&a, &b| x[[a, axis]].total_cmp(&x[[b, axis]]).then(a.cmp(&b)));
        let mid = rows.len() / 2;
        let row = rows[mid];
        let (lo, hi) = rows.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut hi[1..], depth + 1);
        self.nodes.push(KdNode {
            row,
            axis,
            left,
            right,
        });
        Some(self.nodes.len() - 1)
    }

    fn nearest(&self, q: ArrayView1<'_, f64>, k: usize) -> Vec<Candidate> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, q, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(&self, node: Option<usize>, q: ArrayView1<'_, f64>, k: usize, heap: &mut BinaryHeap<Candidate>) {
        let Some(id) = node else { return };
        let n = &self.nodes[id];
        let c = Candidate {
            d2: dist2(q, self.x.row(n.row)),
            row: n.row,
        };
        if heap.len() < k {
            heap.push(c);
        } else if heap.peek().is_some_and(|worst| c < *worst) {
            heap.pop();
            heap.push(c);
        }
        let diff = q[n.axis] - self.x[[n.row, n.axis]];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, q, k, heap);
        // a far-side point is never closer than the splitting plane
        let plane = diff * diff;
        if heap.len() < k || heap.peek().is_some_and(|worst| plane <= worst.d2) {
            self.search(far, q, k, heap);
        }
    }
}

fn brute_force(x: &Array2<f64>, rows: &[usize], q: ArrayView1<'_, f64>, k: usize) -> Vec<Candidate> {
    let mut all: Vec<Candidate> = rows
        .iter()
        .map(|&r| Candidate {
            d2: dist2(q, x.row(r)),
            row: r,
        })
        .collect();
    all.sort_unstable();
    all.truncate(k);
    all
}

fn standardized(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mut z = x.clone();
    for mut col in z.columns_mut() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        col.mapv_inplace(|v| (v - mean) / sd);
    }
    z
}

/// Potential outcomes by averaging the outcomes of the `k_neighbors`
/// nearest rows of each other arm in Euclidean feature distance. The own
/// arm keeps the observed outcome. Distance ties go to the lower row id.
pub fn knn_potential_outcomes(
    table: &ExperimentTable,
    k_neighbors: usize,
    standardize: bool,
) -> Result<OracleOutcomes> {
    if k_neighbors == 0 {
        return Err(Error::config("k_neighbors must be at least 1"));
    }
    let counts = table.arm_counts();
    if let Some((arm, &c)) = counts.iter().enumerate().find(|(_, &c)| c < k_neighbors) {
        return Err(Error::InsufficientOverlap {
            arm,
            detail: format!("{c} rows, need at least {k_neighbors} neighbours"),
        });
    }
    let x = if standardize {
        standardized(&table.features().to_owned())
    } else {
        table.features().to_owned()
    };
    let y = table.outcomes();
    let w = table.treatment();
    let (n, arms, j) = (table.n_rows(), table.n_arms(), table.n_outcomes());
    let arm_rows: Vec<Vec<usize>> = (0..arms).map(|a| table.arm_rows(a)).collect();
    let trees: Vec<Option<KdTree>> = arm_rows
        .iter()
        .map(|rows| (rows.len() > BRUTE_FORCE_MAX).then(|| KdTree::new(&x, rows)))
        .collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; arms * j];
            for a in 0..arms {
                if a == w[i] {
                    for o in 0..j {
                        out[a * j + o] = y[[i, o]];
                    }
                    continue;
                }
                let nn = match &trees[a] {
                    Some(t) => t.nearest(x.row(i), k_neighbors),
                    None => brute_force(&x, &arm_rows[a], x.row(i), k_neighbors),
                };
                for o in 0..j {
                    let s: f64 = nn.iter().map(|c| y[[c.row, o]]).sum();
                    out[a * j + o] = s / k_neighbors as f64;
                }
            }
            out
        })
        .collect();
    OracleOutcomes::new(Array3::from_shape_fn((n, arms, j), |(i, a, o)| rows[i][a * j + o]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn synthetic_a_structure() {
        let spec = SyntheticSpec { noise_sd: 0.0, ..SyntheticSpec::synthetic_a(10, 1) };
        assert_eq!(spec.effect.eval(array![2.0, -7.0].view()), 1.0);
        let (t, o) = generate(&spec).unwrap();
        for i in 0..t.n_rows() {
            let x0 = t.features()[[i, 0]];
            let tau = o.potential()[[i, 1, 0]] - o.potential()[[i, 0, 0]];
            assert!((tau - x0 / 2.0).abs() < 1e-12);
            assert_eq!(tau > 0.0, x0 > 0.0);
            assert_eq!(t.outcomes()[[i, 0]], o.potential()[[i, t.treatment()[i], 0]]);
        }
        assert_eq!(t.propensity().unwrap()[0], 0.5);
    }

    #[test]
    fn synthetic_a_mean_effect_is_zero() {
        let (_, o) = gen_synthetic_a(1_000_000, 5).unwrap();
        let p = o.potential();
        let ate = (0..o.n_rows()).map(|i| p[[i, 1, 0]] - p[[i, 0, 0]]).sum::<f64>() / o.n_rows() as f64;
        assert!(ate.abs() < 0.01, "ate = {ate}");
    }

    #[test]
    fn generators_are_reproducible() {
        let (a, oa) = gen_synthetic_a(300, 9).unwrap();
        let (b, ob) = gen_synthetic_a(300, 9).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.treatment(), b.treatment());
        assert_eq!(oa.potential(), ob.potential());
        let (c, _) = gen_synthetic_a(300, 10).unwrap();
        assert_ne!(a.features(), c.features());
        let (d, od) = gen_covid_like(200, 4).unwrap();
        let (e, oe) = gen_covid_like(200, 4).unwrap();
        assert_eq!(d.outcomes(), e.outcomes());
        assert_eq!(od.potential(), oe.potential());
    }

    #[test]
    fn covid_effect_signs() {
        assert!(covid_effect(3.0, 30.0, 200.0) > 0.0);
        assert!(covid_effect(12.0, 30.0, 200.0) < 0.0);
        assert!(covid_effect(12.0, 80.0, 400.0) < 0.0);
        let (t, _) = gen_covid_like(50, 0).unwrap();
        assert_eq!(t.feature_names(), ["days", "ast", "ldh", "age"]);
    }

    #[test]
    fn spec_from_toml() {
        let spec = SyntheticSpec::from_toml(
            r#"
            n = 20
            p = 3
            k_arms = 2
            noise_sd = 0.0
            seed = 3
            [baseline]
            kind = "zero"
            [effect]
            kind = "step"
            feature = 2
            threshold = 0.0
            below = -1.0
            above = 1.0
            "#,
        )
        .unwrap();
        let (t, o) = generate(&spec).unwrap();
        assert_eq!((t.n_rows(), t.n_features(), t.n_arms()), (20, 3, 3));
        let x = t.features();
        for i in 0..20 {
            let k = if x[[i, 2]] < 0.0 { -1.0 } else { 1.0 };
            assert_eq!(o.potential()[[i, 2, 0]] - o.potential()[[i, 1, 0]], k);
        }
        assert!(SyntheticSpec::from_toml("n = 0\np = 1\n[baseline]\nkind = \"zero\"\n[effect]\nkind = \"constant\"\nvalue = 1.0\n").is_err());
        assert!(SyntheticSpec::from_toml("n = 5\np = 1\n[baseline]\nkind = \"linear\"\ncoef = [1.0, 2.0]\n[effect]\nkind = \"constant\"\nvalue = 1.0\n").is_err());
    }

    #[test]
    fn noiseless_oracle_policy_has_zero_regret() {
        use crate::data::ScalarizationWeights;
        use crate::evaluation::{assignment_regret, oracle_assignment};
        let spec = SyntheticSpec { noise_sd: 0.0, ..SyntheticSpec::synthetic_a(500, 2) };
        let (_, o) = generate(&spec).unwrap();
        let w = ScalarizationWeights::ones(1);
        assert_eq!(assignment_regret(&oracle_assignment(&o, &w).unwrap(), &o, &w).unwrap(), 0.0);
    }

    fn one_d(x: &[f64], w: &[usize], y: &[f64]) -> ExperimentTable {
        let n = x.len();
        ExperimentTable::new(
            Array2::from_shape_fn((n, 1), |(i, _)| x[i]),
            w.to_vec(),
            Array2::from_shape_fn((n, 1), |(i, _)| y[i]),
            None,
            default_feature_names(1),
        )
        .unwrap()
    }

    #[test]
    fn knn_examples() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let w: Vec<usize> = (0..12).map(|i| usize::from(i >= 6)).collect();
        let y: Vec<f64> = (0..12).map(|i| if i >= 6 { 7.0 } else { f64::from(i) }).collect();
        let t = one_d(&x, &w, &y);
        let o = knn_potential_outcomes(&t, 5, false).unwrap();
        for i in 0..6 {
            assert_eq!(o.potential()[[i, 1, 0]], 7.0);
            assert_eq!(o.potential()[[i, 0, 0]], y[i]);
        }
        // row 6 sees control rows 1..=5 as its nearest
        assert_eq!(o.potential()[[6, 0, 0]], 3.0);
        assert!(matches!(
            knn_potential_outcomes(&t, 7, false),
            Err(Error::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn knn_ties_go_to_lower_row() {
        // row 0 (arm 0) at 0.0 is equidistant from rows 1 and 2 (arm 1)
        let t = one_d(&[0.0, -1.0, 1.0, 5.0], &[0, 1, 1, 0], &[0.0, 10.0, 20.0, 0.0]);
        let o = knn_potential_outcomes(&t, 1, false).unwrap();
        assert_eq!(o.potential()[[0, 1, 0]], 10.0);
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 600;
        // coarse grid values create many exact distance ties
        let x = Array2::from_shape_fn((n, 3), |_| f64::from(rng.random_range(0..6i32)));
        let rows: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
        let tree = KdTree::new(&x, &rows);
        for q in 0..n {
            for k in [1, 5, 20] {
                assert_eq!(tree.nearest(x.row(q), k), brute_force(&x, &rows, x.row(q), k));
            }
        }
    }

    #[test]
    fn standardize_rescales_columns() {
        let x = array![[0.0, 100.0], [2.0, 300.0]];
        let z = standardized(&x);
        assert_eq!(z, array![[-1.0, -1.0], [1.0, 1.0]]);
    }
}
