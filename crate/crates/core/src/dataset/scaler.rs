use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::matrix::Matrix;

/// Per-feature min-max scaling of inputs to [0, 1], fitted on training rows.
///
/// Targets are never scaled. A feature that is constant in the fitted rows
/// maps to 0. Values outside the fitted range are not clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub fitted_min: Vec<f64>,
    pub fitted_max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(train: &Dataset) -> Self {
        Self::fit_matrix(train.x())
    }

    pub fn fit_matrix(x: &Matrix) -> Self {
        let d = x.n_cols();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        for j in 0..d {
            if lo[j] == hi[j] {
                log::warn!("feature {j} is constant ({}) in the fitted rows; it scales to 0", lo[j]);
            }
        }
        Self {
            fitted_min: lo,
            fitted_max: hi,
        }
    }

    pub fn n_features(&self) -> usize {
        self.fitted_min.len()
    }

    #[inline]
    pub fn scale_value(&self, j: usize, v: f64) -> f64 {
        let span = self.fitted_max[j] - self.fitted_min[j];
        if span > 0.0 {
            (v - self.fitted_min[j]) / span
        } else {
            0.0
        }
    }

    pub fn transform_row_into(&self, row: &[f64], out: &mut [f64]) {
        for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
            *o = self.scale_value(j, v);
        }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; row.len()];
        self.transform_row_into(row, &mut out);
        out
    }

    pub fn transform_matrix(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.n_cols(), self.n_features(), "scaler feature count mismatch");
        let mut out = x.clone();
        for i in 0..x.n_rows() {
            self.transform_row_into(x.row(i), out.row_mut(i));
        }
        out
    }

    /// Scales the inputs of `d`; targets pass through.
    pub fn transform(&self, d: &Dataset) -> Dataset {
        d.with_inputs(self.transform_matrix(d.x()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SplitSpec, SynthSpec, Target};

    #[test]
    fn extrema_and_midpoint() {
        let s = MinMaxScaler::fit_matrix(&Matrix::column_vector(&[2.0, 4.0, 6.0]));
        assert_eq!((s.fitted_min[0], s.fitted_max[0]), (2.0, 6.0));
        assert_eq!(s.scale_value(0, 2.0), 0.0);
        assert_eq!(s.scale_value(0, 6.0), 1.0);
        assert_eq!(s.scale_value(0, 4.0), 0.5);
        // no clipping outside the fitted range
        assert_eq!(s.scale_value(0, 8.0), 1.5);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let s = MinMaxScaler::fit_matrix(&Matrix::column_vector(&[3.0, 3.0]));
        assert_eq!((s.fitted_min[0], s.fitted_max[0]), (3.0, 3.0));
        assert_eq!(s.scale_value(0, 3.0), 0.0);
        assert_eq!(s.scale_value(0, 100.0), 0.0);
    }

    #[test]
    fn training_extrema_map_to_unit_interval() {
        let d = synthesize(&SynthSpec {
            seed: 9,
            n: 40,
            noise_scale: 0.1,
        });
        let s = MinMaxScaler::fit(&d);
        let t = s.transform(&d);
        for j in 0..d.x().n_cols() {
            let col = t.x().column(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
        for tgt in Target::ALL {
            assert_eq!(t.target(tgt), d.target(tgt));
        }
    }

    #[test]
    fn fit_ignores_rows_outside_training_partition() {
        let d = synthesize(&SynthSpec {
            seed: 1,
            n: 50,
            noise_scale: 0.0,
        });
        let (train_pos, test_pos) = SplitSpec::new(0.7, 5).partition(d.n()).unwrap();
        let train = d.subset(&train_pos).unwrap();
        let before = serde_json::to_string(&MinMaxScaler::fit(&train)).unwrap();

        let mut x = d.x().clone();
        for &p in &test_pos {
            for v in x.row_mut(p) {
                *v = *v * 1e3 - 7.0;
            }
        }
        let perturbed = Dataset::from_parts(x, d.y().clone()).unwrap();
        let train2 = perturbed.subset(&train_pos).unwrap();
        let after = serde_json::to_string(&MinMaxScaler::fit(&train2)).unwrap();
        assert_eq!(before, after);
    }
}
