//! Second-order gradient boosted regression trees.
//!
//! Each round fits a tree to the gradient and hessian of the squared loss
//! `1/2 (y - pred)^2` at the current predictions. Leaves take the closed-form
//! score `-G / (H + lambda)` and a split is worth
//!
//! ```text
//! 1/2 [GL^2/(HL+lambda) + GR^2/(HR+lambda) - (GL+GR)^2/(HL+HR+lambda)] - gamma
//! ```
//!
//! which is the drop in the regularized objective `sum loss + gamma T +
//! 1/2 lambda sum w^2` under its second-order expansion. Trees are grown
//! either depth-wise with one split per node ([`TreeShape::Axis`]) or as
//! oblivious trees sharing one split per level ([`TreeShape::Oblivious`]).

mod tree;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::round_half_up;
use crate::matrix::Matrix;

pub use tree::{build_tree, Node, ObliviousLevel, RegressionTree};
use tree::{build_tree_ordered, ColumnOrder};

#[derive(Debug, Error, PartialEq)]
pub enum GbdtError {
    #[error("degenerate denominator: hessian sum plus lambda is {0}")]
    DegenerateDenominator(f64),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeShape {
    /// Depth-wise growth, each node picks its own split.
    Axis,
    /// Every node at a depth shares one (feature, threshold).
    Oblivious,
}

pub const MAX_ESTIMATORS: usize = 10_000;
/// Oblivious trees store 2^depth leaves.
pub const MAX_OBLIVIOUS_DEPTH: usize = 20;
pub const MAX_AXIS_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostHyperParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// L2 penalty on leaf scores.
    pub reg_lambda: f64,
    /// Penalty per leaf; a split must gain more than this.
    pub gamma_complexity: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub min_child_weight: f64,
    pub tree_shape: TreeShape,
    pub seed: u64,
}

impl Default for BoostHyperParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            learning_rate: 0.1,
            max_depth: 6,
            reg_lambda: 1.0,
            gamma_complexity: 0.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            min_child_weight: 1.0,
            tree_shape: TreeShape::Axis,
            seed: 0,
        }
    }
}

impl BoostHyperParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let fail = |msg: String| Err(GbdtError::InvalidHyperParams(msg));
        if self.n_estimators == 0 || self.n_estimators > MAX_ESTIMATORS {
            return fail(format!("n_estimators must be in 1..={MAX_ESTIMATORS}, got {}", self.n_estimators));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return fail(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        let depth_cap = match self.tree_shape {
            TreeShape::Axis => MAX_AXIS_DEPTH,
            TreeShape::Oblivious => MAX_OBLIVIOUS_DEPTH,
        };
        if self.max_depth == 0 || self.max_depth > depth_cap {
            return fail(format!("max_depth must be in 1..={depth_cap}, got {}", self.max_depth));
        }
        for (name, v) in [
            ("reg_lambda", self.reg_lambda),
            ("gamma_complexity", self.gamma_complexity),
            ("min_child_weight", self.min_child_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [("subsample", self.subsample), ("colsample_bytree", self.colsample_bytree)] {
            if !(v > 0.0 && v <= 1.0) {
                return fail(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// First and second derivatives of the loss at the current predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

/// Squared loss 1/2 (y - pred)^2: g = pred - y, h = 1.
pub fn grad_hess_squared(y: &[f64], pred: &[f64]) -> GradHess {
    assert_eq!(y.len(), pred.len(), "target and prediction lengths differ");
    GradHess {
        g: pred.iter().zip(y).map(|(p, y)| p - y).collect(),
        h: vec![1.0; y.len()],
    }
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> Result<f64, GbdtError> {
    let denom = h + lambda;
    if !(denom > 0.0) {
        return Err(GbdtError::DegenerateDenominator(denom));
    }
    Ok(-g / denom)
}

/// Objective reduction from splitting a node with stats (GL+GR, HL+HR).
pub fn split_gain(
    gl: f64,
    hl: f64,
    gr: f64,
    hr: f64,
    lambda: f64,
    gamma: f64,
) -> Result<f64, GbdtError> {
    for denom in [hl + lambda, hr + lambda, hl + hr + lambda] {
        if !(denom > 0.0) {
            return Err(GbdtError::DegenerateDenominator(denom));
        }
    }
    Ok(structure_gain(gl, hl, gr, hr, lambda) - gamma)
}

#[inline]
pub(crate) fn structure_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let g = gl + gr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (hl + hr + lambda))
}

/// Base score plus a learning-rate-scaled sum of regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    pub hyper: BoostHyperParams,
    pub n_features: usize,
}

/// Row and column samples for boosting round `round`.
pub fn draw_samples(
    n_rows: usize,
    n_cols: usize,
    hyper: &BoostHyperParams,
    round: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(round);
    let n_sub = round_half_up(hyper.subsample * n_rows as f64).clamp(1, n_rows);
    let rows = if n_sub == n_rows {
        (0..n_rows).collect()
    } else {
        let mut r = index::sample(&mut rng, n_rows, n_sub).into_vec();
        r.sort_unstable();
        r
    };
    let n_col = round_half_up(hyper.colsample_bytree * n_cols as f64).clamp(1, n_cols);
    let cols = if n_col == n_cols {
        (0..n_cols).collect()
    } else {
        let mut c = index::sample(&mut rng, n_cols, n_col).into_vec();
        c.sort_unstable();
        c
    };
    (rows, cols)
}

impl BoostedEnsemble {
    pub fn fit(x: &Matrix, y: &[f64], hyper: &BoostHyperParams) -> Result<Self, GbdtError> {
        Self::fit_inner(x, y, hyper, None)
    }

    /// Fits and records the training mean squared error after each round
    /// (index 0 is the base score alone).
    pub fn fit_with_history(
        x: &Matrix,
        y: &[f64],
        hyper: &BoostHyperParams,
    ) -> Result<(Self, Vec<f64>), GbdtError> {
        let mut hist = Vec::new();
        let m = Self::fit_inner(x, y, hyper, Some(&mut hist))?;
        Ok((m, hist))
    }

    fn fit_inner(
        x: &Matrix,
        y: &[f64],
        hyper: &BoostHyperParams,
        mut history: Option<&mut Vec<f64>>,
    ) -> Result<Self, GbdtError> {
        hyper.validate()?;
        let n = x.n_rows();
        if n < 2 {
            return Err(GbdtError::DegenerateInput(format!("need at least 2 samples, got {n}")));
        }
        if y.len() != n {
            return Err(GbdtError::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if x.n_cols() == 0 {
            return Err(GbdtError::DegenerateInput("no features".into()));
        }
        if let Some(v) = y.iter().chain(x.as_slice()).find(|v| !v.is_finite()) {
            return Err(GbdtError::DegenerateInput(format!("non-finite value {v}")));
        }

        let base_score = y.iter().sum::<f64>() / n as f64;
        let mut pred = vec![base_score; n];
        let mse = |pred: &[f64]| pred.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n as f64;
        if let Some(h) = history.as_deref_mut() {
            h.push(mse(&pred));
        }

        let order = ColumnOrder::new(x);
        let mut trees = Vec::with_capacity(hyper.n_estimators);
        for k in 0..hyper.n_estimators {
            let grad = grad_hess_squared(y, &pred);
            let (rows, cols) = draw_samples(n, x.n_cols(), hyper, k as u64);
            let tree = build_tree_ordered(x, &grad, &rows, &cols, hyper, &order)?;
            for (i, p) in pred.iter_mut().enumerate() {
                *p += hyper.learning_rate * tree.predict(x.row(i));
            }
            trees.push(tree);
            if let Some(h) = history.as_deref_mut() {
                h.push(mse(&pred));
            }
        }
        Ok(Self {
            base_score,
            trees,
            hyper: *hyper,
            n_features: x.n_cols(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, GbdtError> {
        if x.len() != self.n_features {
            return Err(GbdtError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let s = self.trees.iter().fold(0.0, |acc, t| acc + t.predict(x));
        Ok(self.base_score + self.hyper.learning_rate * s)
    }

    /// Predictions of the first `k` trees for each `k` in `stages`, equal
    /// bit for bit to predicting with a truncated ensemble.
    pub fn staged_predict_batch(&self, x: &Matrix, stages: &[usize]) -> Result<Vec<Vec<f64>>, GbdtError> {
        if x.n_cols() != self.n_features {
            return Err(GbdtError::DimensionMismatch {
                expected: self.n_features,
                got: x.n_cols(),
            });
        }
        if let Some(&k) = stages.iter().find(|&&k| k > self.trees.len()) {
            return Err(GbdtError::InvalidHyperParams(format!(
                "stage {k} exceeds the {} fitted trees",
                self.trees.len()
            )));
        }
        let mut out = vec![Vec::with_capacity(x.n_rows()); stages.len()];
        for row in x.rows() {
            let mut partial = Vec::with_capacity(self.trees.len() + 1);
            partial.push(0.0);
            let mut acc = 0.0;
            for t in &self.trees {
                acc += t.predict(row);
                partial.push(acc);
            }
            for (o, &k) in out.iter_mut().zip(stages) {
                o.push(self.base_score + self.hyper.learning_rate * partial[k]);
            }
        }
        Ok(out)
    }

    /// Keeps only the first `k` trees.
    pub fn truncate(&mut self, k: usize) {
        self.trees.truncate(k);
        self.hyper.n_estimators = self.trees.len();
    }

    pub fn predict_batch(&self, x: &Matrix) -> Result<Vec<f64>, GbdtError> {
        x.rows().map(|r| self.predict(r)).collect()
    }

    /// Whether any tree splits on feature `j`.
    pub fn uses_feature(&self, j: usize) -> bool {
        self.trees.iter().any(|t| t.split_features().contains(&j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn grad_hess_basics() {
        let gh = grad_hess_squared(&[1.0, 3.0], &[0.0, 0.0]);
        assert_eq!(gh.g, vec![-1.0, -3.0]);
        assert_eq!(gh.h, vec![1.0, 1.0]);
        assert_eq!(grad_hess_squared(&[2.0], &[2.0]).g, vec![0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let loss = |y: f64, p: f64| 0.5 * (y - p) * (y - p);
        for _ in 0..200 {
            let y: f64 = rng.random_range(-50.0..50.0);
            let p: f64 = rng.random_range(-50.0..50.0);
            let step = 1e-6;
            let fd = (loss(y, p + step) - loss(y, p - step)) / (2.0 * step);
            let fd2 = (loss(y, p + 1e-3) - 2.0 * loss(y, p) + loss(y, p - 1e-3)) / 1e-6;
            let gh = grad_hess_squared(&[y], &[p]);
            assert!((gh.g[0] - fd).abs() < 1e-4);
            assert!((gh.h[0] - fd2).abs() < 1e-3);
        }
    }

    #[test]
    fn leaf_weight_cases() {
        assert_eq!(leaf_weight(0.0, 3.0, 1.0).unwrap(), 0.0);
        // residuals y - pred = [1, 3] -> g = [-1, -3]
        assert_eq!(leaf_weight(-4.0, 2.0, 0.0).unwrap(), 2.0);
        assert!(leaf_weight(-4.0, 2.0, 1e12).unwrap().abs() < 1e-9);
        assert!(matches!(leaf_weight(1.0, 0.0, 0.0), Err(GbdtError::DegenerateDenominator(_))));
    }

    #[test]
    fn split_gain_cases() {
        assert_eq!(split_gain(1.5, 2.0, 1.5, 2.0, 0.0, 0.7).unwrap(), -0.7);
        assert_eq!(split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0).unwrap(), 2.0);
        assert!(split_gain(1.0, 0.0, 1.0, 1.0, 0.0, 0.0).is_err());
    }

    // second-order leaf objective G w + 1/2 (H + lambda) w^2
    fn leaf_objective(g: f64, h: f64, lambda: f64, w: f64) -> f64 {
        g * w + 0.5 * (h + lambda) * w * w
    }

    proptest! {
        #[test]
        fn leaf_weight_is_a_minimum(g in -100.0f64..100.0, h in 0.1f64..50.0, lambda in 0.0f64..10.0) {
            let w = leaf_weight(g, h, lambda).unwrap();
            let at = leaf_objective(g, h, lambda, w);
            for d in [-1e-3, 1e-3] {
                prop_assert!(leaf_objective(g, h, lambda, w + d) >= at);
            }
        }
    }

    #[test]
    fn hyper_validation() {
        let ok = BoostHyperParams::default();
        assert!(ok.validate().is_ok());
        for bad in [
            BoostHyperParams { n_estimators: 0, ..ok },
            BoostHyperParams { n_estimators: 10_001, ..ok },
            BoostHyperParams { learning_rate: 0.0, ..ok },
            BoostHyperParams { learning_rate: 1.5, ..ok },
            BoostHyperParams { max_depth: 0, ..ok },
            BoostHyperParams { reg_lambda: -1.0, ..ok },
            BoostHyperParams { subsample: 0.0, ..ok },
            BoostHyperParams { colsample_bytree: 1.1, ..ok },
            BoostHyperParams { tree_shape: TreeShape::Oblivious, max_depth: 21, ..ok },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn sampling_sizes_and_determinism() {
        let h = BoostHyperParams { subsample: 0.7, colsample_bytree: 0.5, seed: 3, ..Default::default() };
        let (r, c) = draw_samples(85, 7, &h, 4);
        assert_eq!(r.len(), 60); // round(59.5) half-up
        assert_eq!(c.len(), 4); // round(3.5) half-up
        assert_eq!((r.clone(), c.clone()), draw_samples(85, 7, &h, 4));
        assert_ne!(r, draw_samples(85, 7, &h, 5).0);
        let tiny = BoostHyperParams { colsample_bytree: 0.01, ..h };
        assert_eq!(draw_samples(10, 7, &tiny, 0).1.len(), 1);
    }

    #[test]
    fn empty_and_single_leaf_prediction() {
        let mut e = BoostedEnsemble {
            base_score: 2.5,
            trees: vec![],
            hyper: BoostHyperParams { learning_rate: 0.5, ..Default::default() },
            n_features: 2,
        };
        assert_eq!(e.predict(&[0.0, 1.0]).unwrap(), 2.5);
        e.trees.push(RegressionTree::single_leaf(3.0));
        assert_eq!(e.predict(&[0.0, 1.0]).unwrap(), 4.0);
        assert!(e.predict(&[0.0]).is_err());
    }

    #[test]
    fn constant_targets_predict_the_mean() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]);
        let hyper = BoostHyperParams { n_estimators: 1, ..Default::default() };
        let e = BoostedEnsemble::fit(&x, &[4.0, 4.0, 4.0], &hyper).unwrap();
        assert_eq!(e.trees[0].n_leaves(), 1);
        for r in x.rows() {
            assert_eq!(e.predict(r).unwrap(), 4.0);
        }
    }

    #[test]
    fn training_error_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for shape in [TreeShape::Axis, TreeShape::Oblivious] {
            let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
            let y: Vec<f64> = rows.iter().map(|r| (6.0 * r[0]).sin() + r[1] * r[2]).collect();
            let hyper = BoostHyperParams {
                n_estimators: 40,
                learning_rate: 0.3,
                max_depth: 3,
                reg_lambda: 0.5,
                tree_shape: shape,
                ..Default::default()
            };
            let (_, hist) = BoostedEnsemble::fit_with_history(&Matrix::from_rows(&rows), &y, &hyper).unwrap();
            for w in hist.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{shape:?}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn staged_predictions_match_separate_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Matrix::from_vec(40, 3, (0..120).map(|_| rng.random::<f64>()).collect());
        let y: Vec<f64> = (0..40).map(|i| x.get(i, 0) * 3.0 - x.get(i, 2)).collect();
        for shape in [TreeShape::Axis, TreeShape::Oblivious] {
            let h = BoostHyperParams {
                n_estimators: 30,
                max_depth: 3,
                subsample: 0.8,
                colsample_bytree: 0.7,
                tree_shape: shape,
                seed: 5,
                ..BoostHyperParams::default()
            };
            let full = BoostedEnsemble::fit(&x, &y, &h).unwrap();
            let stages = [1, 7, 30];
            let staged = full.staged_predict_batch(&x, &stages).unwrap();
            for (k, preds) in stages.iter().zip(&staged) {
                let alone = BoostedEnsemble::fit(&x, &y, &BoostHyperParams { n_estimators: *k, ..h }).unwrap();
                assert_eq!(&alone.predict_batch(&x).unwrap(), preds);
                let mut cut = full.clone();
                cut.truncate(*k);
                assert_eq!(cut, alone);
            }
            assert!(full.staged_predict_batch(&x, &[31]).is_err());
        }
    }

    #[test]
    fn batch_predict_matches_rowwise_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 3.0 - r[2]).collect();
        let x = Matrix::from_rows(&rows);
        let hyper = BoostHyperParams { n_estimators: 20, subsample: 0.8, colsample_bytree: 0.7, ..Default::default() };
        let e = BoostedEnsemble::fit(&x, &y, &hyper).unwrap();
        let batch = e.predict_batch(&x).unwrap();
        for (i, r) in x.rows().enumerate() {
            assert_eq!(batch[i].to_bits(), e.predict(r).unwrap().to_bits());
        }
    }

    #[test]
    fn identical_inputs_give_identical_ensembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
        let x = Matrix::from_rows(&rows);
        for shape in [TreeShape::Axis, TreeShape::Oblivious] {
            let hyper = BoostHyperParams { n_estimators: 15, subsample: 0.7, colsample_bytree: 0.6, seed: 99, tree_shape: shape, ..Default::default() };
            let a = serde_json::to_string(&BoostedEnsemble::fit(&x, &y, &hyper).unwrap()).unwrap();
            let b = serde_json::to_string(&BoostedEnsemble::fit(&x, &y, &hyper).unwrap()).unwrap();
            assert_eq!(a, b);
            let back: BoostedEnsemble = serde_json::from_str(&a).unwrap();
            assert_eq!(serde_json::to_string(&back).unwrap(), a);
        }
    }

    #[test]
    fn large_gamma_gives_stumps_of_one_leaf() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]);
        let hyper = BoostHyperParams { n_estimators: 3, gamma_complexity: 1e9, ..Default::default() };
        let e = BoostedEnsemble::fit(&x, &[0.0, 10.0, 0.0, 10.0], &hyper).unwrap();
        assert!(e.trees.iter().all(|t| t.n_leaves() == 1));
    }
}
