//! Partial dependence of a trained model on one input feature.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, MinMaxScaler};
use crate::model::{ModelError, Predictor};

pub const DEFAULT_PDP_POINTS: usize = 50;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("feature {0:?} is constant over the reference rows")]
    DegenerateFeature(String),
    #[error("a grid needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("grid must be finite and strictly increasing")]
    BadGrid,
    #[error("scaler expects {expected} features, dataset has {got}")]
    ScalerMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    pub feature: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub n_background: usize,
}

impl PdpCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "feature_value,mean_prediction")?;
        for (g, v) in self.grid.iter().zip(&self.values) {
            writeln!(w, "{g},{v}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<(), SensitivityError> {
        std::fs::write(csv_path, self.to_csv_string())?;
        std::fs::write(json_path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// True when no step down exceeds `tol`.
    pub fn is_non_decreasing(&self, tol: f64) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0] - tol)
    }
}

fn feature_index(d: &Dataset, feature: &str) -> Result<usize, SensitivityError> {
    d.schema()
        .input_index(feature)
        .ok_or_else(|| SensitivityError::UnknownFeature(feature.to_string()))
}

/// `n_points` evenly spaced values from the feature's observed minimum to
/// its maximum, both endpoints included exactly.
pub fn pdp_grid(d: &Dataset, feature: &str, n_points: usize) -> Result<Vec<f64>, SensitivityError> {
    let j = feature_index(d, feature)?;
    if n_points < 2 {
        return Err(SensitivityError::TooFewPoints(n_points));
    }
    let col = d.x().column(j);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(SensitivityError::DegenerateFeature(feature.to_string()));
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    let mut grid: Vec<f64> = (0..n_points).map(|i| lo + step * i as f64).collect();
    grid[n_points - 1] = hi;
    Ok(grid)
}

/// Mean prediction over every row of `d` with `feature` overwritten by each
/// grid value. The grid is in natural units; `scaler` is applied before the
/// model sees a row.
pub fn pdp_compute<P: Predictor + Sync>(
    predictor: &P,
    d: &Dataset,
    scaler: &MinMaxScaler,
    feature: &str,
    grid: &[f64],
) -> Result<PdpCurve, SensitivityError> {
    let j = feature_index(d, feature)?;
    if grid.len() < 2 {
        return Err(SensitivityError::TooFewPoints(grid.len()));
    }
    if grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SensitivityError::BadGrid);
    }
    if scaler.n_features() != d.x().n_cols() {
        return Err(SensitivityError::ScalerMismatch {
            expected: scaler.n_features(),
            got: d.x().n_cols(),
        });
    }
    let values = grid
        .par_iter()
        .map(|&v| {
            let mut row = vec![0.0; d.x().n_cols()];
            let mut scaled = vec![0.0; d.x().n_cols()];
            let mut sum = 0.0;
            for r in d.x().rows() {
                row.copy_from_slice(r);
                row[j] = v;
                scaler.transform_row_into(&row, &mut scaled);
                sum += predictor.predict_one(&scaled)?;
            }
            Ok(sum / d.n() as f64)
        })
        .collect::<Result<Vec<f64>, ModelError>>()?;
    Ok(PdpCurve {
        feature: d.schema().input_names()[j].clone(),
        grid: grid.to_vec(),
        values,
        n_background: d.n(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SynthSpec, INPUT_NAMES};
    use crate::gbdt::{BoostHyperParams, BoostedEnsemble};
    use crate::matrix::Matrix;
    use crate::model::FnPredictor;
    use proptest::prelude::*;

    fn data(n: usize, seed: u64) -> Dataset {
        synthesize(&SynthSpec { seed, n, noise_scale: 0.0 })
    }

    fn naive(f: &dyn Fn(&[f64]) -> f64, d: &Dataset, s: &MinMaxScaler, j: usize, grid: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for &v in grid {
            let mut acc = 0.0;
            for i in 0..d.n() {
                let mut row = d.x().row(i).to_vec();
                row[j] = v;
                acc += f(&s.transform_row(&row));
            }
            out.push(acc / d.n() as f64);
        }
        out
    }

    #[test]
    fn harsh_grid() {
        let d = data(40, 1);
        let g = pdp_grid(&d, "HARSH", 5).unwrap();
        assert_eq!(g, vec![0.0, 3.0, 6.0, 9.0, 12.0]);
        let g = pdp_grid(&d, "harsh", 2).unwrap();
        assert_eq!(g, vec![0.0, 12.0]);
    }

    #[test]
    fn grid_errors() {
        let d = data(20, 1);
        assert!(matches!(pdp_grid(&d, "SAND", 5), Err(SensitivityError::UnknownFeature(_))));
        assert!(matches!(pdp_grid(&d, "LL", 1), Err(SensitivityError::TooFewPoints(1))));
        let mut x = d.x().clone();
        for i in 0..x.n_rows() {
            x.set(i, 2, 4.0);
        }
        let flat = Dataset::from_parts(x, d.y().clone()).unwrap();
        assert!(matches!(pdp_grid(&flat, "PL", 5), Err(SensitivityError::DegenerateFeature(_))));
    }

    #[test]
    fn matches_double_loop() {
        let d = data(10, 3);
        let s = MinMaxScaler::fit(&d);
        let f = |x: &[f64]| x.iter().enumerate().map(|(k, v)| (k as f64 + 1.0) * v.sin()).sum::<f64>();
        for (j, name) in INPUT_NAMES.iter().enumerate() {
            let grid = pdp_grid(&d, name, 7).unwrap();
            let c = pdp_compute(&FnPredictor(f), &d, &s, name, &grid).unwrap();
            let oracle = naive(&f, &d, &s, j, &grid);
            for (a, b) in c.values.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            assert_eq!(c.n_background, 10);
        }
    }

    #[test]
    fn linear_predictor_slope() {
        let d = data(30, 4);
        let s = MinMaxScaler::fit(&d);
        // f is linear in the natural value of feature 1
        let (lo, hi) = (s.fitted_min[1], s.fitted_max[1]);
        let a = 2.5;
        let f = move |x: &[f64]| a * (lo + x[1] * (hi - lo)) + 3.0 * x[0] - 1.0;
        let grid = pdp_grid(&d, "LL", 11).unwrap();
        let c = pdp_compute(&FnPredictor(f), &d, &s, "LL", &grid).unwrap();
        let n = grid.len() as f64;
        let gm = grid.iter().sum::<f64>() / n;
        let vm = c.values.iter().sum::<f64>() / n;
        let sxy: f64 = grid.iter().zip(&c.values).map(|(g, v)| (g - gm) * (v - vm)).sum();
        let sxx: f64 = grid.iter().map(|g| (g - gm).powi(2)).sum();
        assert!((sxy / sxx - a).abs() <= 1e-9);
        let x0_mean = d.x().column(0).iter().map(|v| s.scale_value(0, *v)).sum::<f64>() / d.n() as f64;
        let intercept = vm - a * gm;
        assert!((intercept - (3.0 * x0_mean - 1.0)).abs() <= 1e-9);
    }

    #[test]
    fn unused_feature_gives_flat_curve() {
        let d = data(60, 5);
        // target is a step in HARSH only
        let y = Matrix::from_vec(
            d.n(),
            3,
            d.x().column(0).iter().flat_map(|&h| [if h > 6.0 { 1.0 } else { 0.0 }; 3]).collect(),
        );
        let d = Dataset::from_parts(d.x().clone(), y).unwrap();
        let s = MinMaxScaler::fit(&d);
        let hyper = BoostHyperParams {
            n_estimators: 5,
            max_depth: 1,
            ..BoostHyperParams::default()
        };
        let m = BoostedEnsemble::fit(&s.transform_matrix(d.x()), &d.target(crate::Target::Cbr), &hyper).unwrap();
        let mut checked = 0;
        for (j, name) in INPUT_NAMES.iter().enumerate() {
            if m.uses_feature(j) {
                continue;
            }
            checked += 1;
            let grid = pdp_grid(&d, name, 9).unwrap();
            let c = pdp_compute(&FnPredictor(|x: &[f64]| m.predict(x).unwrap()), &d, &s, name, &grid).unwrap();
            assert!(c.values.iter().all(|v| *v == c.values[0]));
        }
        assert!(checked > 0);
    }

    #[test]
    fn rejects_bad_grids() {
        let d = data(10, 6);
        let s = MinMaxScaler::fit(&d);
        let p = FnPredictor(|_: &[f64]| 0.0);
        assert!(matches!(pdp_compute(&p, &d, &s, "LL", &[1.0, 1.0]), Err(SensitivityError::BadGrid)));
        assert!(matches!(pdp_compute(&p, &d, &s, "LL", &[1.0]), Err(SensitivityError::TooFewPoints(1))));
    }

    #[test]
    fn csv_layout() {
        let c = PdpCurve {
            feature: "HARSH".into(),
            grid: vec![0.0, 1.5],
            values: vec![2.0, 3.25],
            n_background: 4,
        };
        assert_eq!(c.to_csv_string(), "feature_value,mean_prediction\n0,2\n1.5,3.25\n");
        let back: PdpCurve = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn background_permutation_invariance(seed in 0u64..1000, rot in 1usize..9) {
            let d = data(10, seed);
            let s = MinMaxScaler::fit(&d);
            let f = |x: &[f64]| x[0] * x[3] + (x[5] * 3.0).cos();
            let grid = pdp_grid(&d, "PI", 6).unwrap();
            let a = pdp_compute(&FnPredictor(f), &d, &s, "PI", &grid).unwrap();
            let perm: Vec<usize> = (0..10).map(|i| (i + rot) % 10).collect();
            let b = pdp_compute(&FnPredictor(f), &d.subset(&perm).unwrap(), &s, "PI", &grid).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }

        #[test]
        fn linear_in_predictor(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let d = data(12, seed);
            let s = MinMaxScaler::fit(&d);
            let f = |x: &[f64]| x[1].powi(2) - x[4];
            let g = |x: &[f64]| (x[0] + x[6]).exp();
            let h = |x: &[f64]| alpha * f(x) + beta * g(x);
            let grid = pdp_grid(&d, "CA", 5).unwrap();
            let pf = pdp_compute(&FnPredictor(f), &d, &s, "CA", &grid).unwrap();
            let pg = pdp_compute(&FnPredictor(g), &d, &s, "CA", &grid).unwrap();
            let ph = pdp_compute(&FnPredictor(h), &d, &s, "CA", &grid).unwrap();
            for i in 0..grid.len() {
                let want = alpha * pf.values[i] + beta * pg.values[i];
                prop_assert!((ph.values[i] - want).abs() <= 1e-12 * want.abs().max(10.0));
            }
        }
    }
}
