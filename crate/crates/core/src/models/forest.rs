//! Bagged CART regression forest.
//!
//! Splits minimise the summed squared error of the two children. Candidate
//! thresholds are midpoints between consecutive distinct feature values, and
//! samples with `x <= threshold` go left. Ties keep the first feature index
//! and then the smaller threshold.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::scalar::{derive_seed, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    All,
    Sqrt,
    /// Fraction of the features in `(0, 1]`, rounded up, at least one.
    Fraction(f64),
}

impl FeatureSubset {
    fn count(self, dim: usize) -> usize {
        let k = match self {
            FeatureSubset::All => dim,
            FeatureSubset::Sqrt => (dim as f64).sqrt().floor() as usize,
            FeatureSubset::Fraction(f) => (f * dim as f64).ceil() as usize,
        };
        k.clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: FeatureSubset,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 10,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: FeatureSubset::All,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    /// One fully grown tree on the full sample: reproduces every distinct
    /// training input exactly.
    pub fn memorizing() -> Self {
        Self {
            n_trees: 1,
            bootstrap: false,
            ..Self::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ModelError::InvalidConfig("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ModelError::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        if let FeatureSubset::Fraction(f) = self.features_per_split {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ModelError::InvalidConfig(format!(
                    "feature fraction {f} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum Node<T: Scalar> {
    Leaf {
        value: T,
    },
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RegressionTree<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> RegressionTree<T> {
    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn predict(&self, x: &[T]) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

struct Split<T> {
    feature: usize,
    threshold: T,
    score: T,
    /// Number of samples (in sorted order) going left.
    n_left: usize,
}

struct TreeBuilder<'a, T: Scalar> {
    x: &'a [Vec<T>],
    y: &'a [T],
    config: &'a ForestConfig,
    dim: usize,
    nodes: Vec<Node<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> TreeBuilder<'_, T> {
    fn leaf_value(&self, idx: &[usize]) -> T {
        let sum: T = idx.iter().map(|&i| self.y[i]).sum();
        let mean = sum / T::from_usize_lossy(idx.len());
        let (lo, hi) = idx.iter().fold((self.y[idx[0]], self.y[idx[0]]), |(lo, hi), &i| {
            (lo.min(self.y[i]), hi.max(self.y[i]))
        });
        mean.max(lo).min(hi)
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let k = self.config.features_per_split.count(self.dim);
        if k >= self.dim {
            return (0..self.dim).collect();
        }
        let mut f = sample(&mut self.rng, self.dim, k).into_vec();
        f.sort_unstable();
        f
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<Split<T>> {
        let n = idx.len();
        let min_leaf = self.config.min_samples_leaf;
        let total: T = idx.iter().map(|&i| self.y[i]).sum();
        let parent = total * total / T::from_usize_lossy(n);
        let mut best: Option<Split<T>> = None;
        let mut order = idx.to_vec();
        for f in self.candidate_features() {
            order.sort_by(|&a, &b| {
                self.x[a][f]
                    .partial_cmp(&self.x[b][f])
                    .expect("finite features")
                    .then(a.cmp(&b))
            });
            let mut left_sum = T::zero();
            for pos in 0..n - 1 {
                left_sum = left_sum + self.y[order[pos]];
                let n_left = pos + 1;
                let n_right = n - n_left;
                let lo = self.x[order[pos]][f];
                let hi = self.x[order[pos + 1]][f];
                if lo >= hi || n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / T::from_usize_lossy(n_left)
                    + right_sum * right_sum / T::from_usize_lossy(n_right);
                if score <= parent {
                    continue;
                }
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = (lo + hi) / T::lit(2.0);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        score,
                        n_left,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&idx),
        });
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        let depth_ok = self.config.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || idx.len() < 2 * self.config.min_samples_leaf {
            return id;
        }
        let Some(split) = self.best_split(&idx) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        debug_assert_eq!(left.len(), split.n_left);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ForestModel<T: Scalar> {
    trees: Vec<RegressionTree<T>>,
    config: ForestConfig,
    dimension: usize,
    y_min: T,
    y_max: T,
}

impl<T: Scalar> ForestModel<T> {
    pub fn trees(&self) -> &[RegressionTree<T>] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn target_range(&self) -> (T, T) {
        (self.y_min, self.y_max)
    }

    pub fn predict(&self, x: &[T]) -> Result<T> {
        predict_forest(self, x)
    }
}

fn check_design<T: Scalar>(x: &[Vec<T>], n_targets: usize) -> Result<usize> {
    if x.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if x.len() != n_targets {
        return Err(ModelError::LengthMismatch {
            inputs: x.len(),
            targets: n_targets,
        });
    }
    let dim = x[0].len();
    if let Some((row, v)) = x.iter().enumerate().find(|(_, v)| v.len() != dim) {
        return Err(ModelError::RaggedInput {
            row,
            expected: dim,
            found: v.len(),
        });
    }
    if let Some(row) = x.iter().position(|v| v.iter().any(|f| !f.is_finite())) {
        return Err(ModelError::NonFiniteInput { row });
    }
    Ok(dim)
}

pub fn train_forest<T: Scalar>(x: &[Vec<T>], y: &[T], config: &ForestConfig) -> Result<ForestModel<T>> {
    config.validate()?;
    let dim = check_design(x, y.len())?;
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteTarget { row });
    }
    let (y_min, y_max) = y
        .iter()
        .fold((y[0], y[0]), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let n = x.len();
    let seed = config.seed.to_string();
    let trees = (0..config.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["tree", &seed, &t.to_string()]));
            let idx: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut builder = TreeBuilder {
                x,
                y,
                config,
                dim,
                nodes: Vec::new(),
                rng,
            };
            builder.grow(idx, 0);
            RegressionTree { nodes: builder.nodes }
        })
        .collect();
    Ok(ForestModel {
        trees,
        config: config.clone(),
        dimension: dim,
        y_min,
        y_max,
    })
}

/// Mean of the per-tree predictions, clamped to the training target range.
pub fn predict_forest<T: Scalar>(model: &ForestModel<T>, x: &[T]) -> Result<T> {
    if x.len() != model.dimension {
        return Err(ModelError::DimensionMismatch {
            expected: model.dimension,
            found: x.len(),
        });
    }
    let sum: T = model.trees.iter().map(|t| t.predict(x)).sum();
    let mean = sum / T::from_usize_lossy(model.trees.len());
    Ok(mean.max(model.y_min).min(model.y_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn col(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn single_sample_predicts_its_target() {
        let m = train_forest(&[vec![1.0, 2.0]], &[7.0], &ForestConfig::default()).unwrap();
        assert_eq!(m.predict(&[100.0, -3.0]).unwrap(), 7.0);
        assert_eq!(m.predict(&[1.0, 2.0]).unwrap(), 7.0);
    }

    #[test]
    fn fully_grown_tree_memorizes() {
        let x = col(&[0.3, -1.0, 2.5, 9.0, 4.0]);
        let y = [1.0, 5.0, -2.0, 3.0, 3.5];
        let m = train_forest(&x, &y, &ForestConfig::memorizing()).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert_eq!(m.predict(xi).unwrap(), yi);
        }
    }

    #[test]
    fn averages_tree_outputs() {
        let leaf = |v: f64| RegressionTree { nodes: vec![Node::Leaf { value: v }] };
        let m = ForestModel {
            trees: vec![leaf(4.0), leaf(6.0)],
            config: ForestConfig::default(),
            dimension: 1,
            y_min: 0.0,
            y_max: 10.0,
        };
        assert_eq!(predict_forest(&m, &[0.0]).unwrap(), 5.0);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0] * 3.0 - v[1]).collect();
        let cfg = ForestConfig {
            features_per_split: FeatureSubset::Sqrt,
            seed: 11,
            ..ForestConfig::default()
        };
        let a = train_forest(&x, &y, &cfg).unwrap();
        let b = train_forest(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        for i in 0..50 {
            let p = [i as f64 / 50.0, 1.0 - i as f64 / 50.0];
            assert_eq!(a.predict(&p).unwrap().to_bits(), b.predict(&p).unwrap().to_bits());
        }
    }

    #[test]
    fn split_ties_prefer_first_feature_then_smaller_threshold() {
        // both features separate the targets identically
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let m = train_forest(&x, &[0.0, 1.0], &ForestConfig::memorizing()).unwrap();
        match &m.trees()[0].nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.5);
            }
            n => panic!("expected split, got {n:?}"),
        }
        // two equally good thresholds on one feature: 0 | 1 2 | 3 with y symmetric
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let m = train_forest(
            &x,
            &[0.0, 1.0, 1.0, 0.0],
            &ForestConfig {
                max_depth: Some(1),
                ..ForestConfig::memorizing()
            },
        )
        .unwrap();
        match &m.trees()[0].nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 0.5),
            n => panic!("expected split, got {n:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = ForestConfig::default();
        assert_eq!(train_forest::<f64>(&[], &[], &cfg).unwrap_err(), ModelError::EmptyData);
        assert!(matches!(
            train_forest(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 2.0], &cfg),
            Err(ModelError::RaggedInput { row: 1, .. })
        ));
        assert!(matches!(
            train_forest(&[vec![1.0]], &[f64::NAN], &cfg),
            Err(ModelError::NonFiniteTarget { row: 0 })
        ));
        let m = train_forest(&[vec![1.0]], &[1.0], &cfg).unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(ModelError::DimensionMismatch { .. })));
        let zero = ForestConfig { n_trees: 0, ..cfg };
        assert!(matches!(
            train_forest(&[vec![1.0]], &[1.0], &zero),
            Err(ModelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn respects_min_samples_leaf_and_depth() {
        let x = col(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let m = train_forest(
            &x,
            &y,
            &ForestConfig {
                min_samples_leaf: 3,
                ..ForestConfig::memorizing()
            },
        )
        .unwrap();
        assert_eq!(m.trees()[0].leaves(), 2);
        let m = train_forest(
            &x,
            &y,
            &ForestConfig {
                max_depth: Some(0),
                ..ForestConfig::memorizing()
            },
        )
        .unwrap();
        assert_eq!(m.trees()[0].leaves(), 1);
        assert_eq!(m.predict(&[0.0]).unwrap(), 2.5);
    }

    #[test]
    fn works_in_single_precision() {
        let x: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32]).collect();
        let y: Vec<f32> = (0..10).map(|i| (i * i) as f32).collect();
        let m = train_forest(&x, &y, &ForestConfig::memorizing()).unwrap();
        assert_eq!(m.predict(&[3.0]).unwrap(), 9.0);
    }

    proptest! {
        #[test]
        fn predictions_stay_in_target_range(
            data in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -20.0f64..20.0), 1..30),
            probes in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 20),
            seed in any::<u64>(),
        ) {
            let x: Vec<Vec<f64>> = data.iter().map(|(a, b, _)| vec![*a, *b]).collect();
            let y: Vec<f64> = data.iter().map(|d| d.2).collect();
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let m = train_forest(&x, &y, &ForestConfig { seed, ..ForestConfig::default() }).unwrap();
            for (a, b) in probes {
                let p = m.predict(&[a, b]).unwrap();
                prop_assert!(p >= lo && p <= hi);
            }
        }

        #[test]
        fn duplicating_training_set_keeps_single_tree_predictions(
            data in prop::collection::vec((-20i32..20, -20i32..20, -30i32..30), 1..20),
            probes in prop::collection::vec((-25i32..25, -25i32..25), 10),
        ) {
            let x: Vec<Vec<f64>> = data.iter().map(|(a, b, _)| vec![f64::from(*a), f64::from(*b)]).collect();
            let y: Vec<f64> = data.iter().map(|d| f64::from(d.2)).collect();
            let cfg = ForestConfig::memorizing();
            let once = train_forest(&x, &y, &cfg).unwrap();
            let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
            let y2: Vec<f64> = y.iter().chain(&y).cloned().collect();
            let twice = train_forest(&x2, &y2, &cfg).unwrap();
            for (a, b) in probes {
                let p = [f64::from(a), f64::from(b)];
                prop_assert_eq!(once.predict(&p).unwrap(), twice.predict(&p).unwrap());
            }
        }
    }
}
