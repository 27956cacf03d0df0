//! Synthetic stand-in for the soil dataset.
//!
//! Inputs are drawn inside the observed min/max envelope of each feature.
//! HARSH takes 11 evenly spaced levels over [0, 12] in balanced proportion;
//! the soil properties track HARSH closely (LL, PL, PI and CA fall as it
//! rises, MDD and OMC rise) with a smaller share of sample-level scatter. Each
//! target is a fixed smooth function of the min-max normalized inputs,
//! strictly increasing in HARSH and MDD and strictly decreasing in LL, PL,
//! PI and CA, with a mild hump in OMC. Noise is Gaussian with standard
//! deviation `noise_scale` times the noise-free target's standard deviation,
//! so the best attainable R^2 is about `1 / (1 + noise_scale^2)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, N_INPUTS, N_TARGETS};
use crate::matrix::Matrix;

/// (min, max) per input in schema order: HARSH, LL, PL, PI, OMC, CA, MDD.
pub const FEATURE_RANGES: [(f64, f64); N_INPUTS] = [
    (0.0, 12.0),
    (27.0, 66.0),
    (12.8, 21.0),
    (14.0, 45.0),
    (16.0, 19.0),
    (0.6, 2.0),
    (1.25, 1.99),
];

/// (min, max) per target: CBR, UCS, R.
pub const TARGET_RANGES: [(f64, f64); N_TARGETS] = [(8.0, 44.6), (125.0, 232.0), (11.7, 27.0)];

const HARSH_LEVELS: usize = 11;

/// Noise scale giving a best attainable R^2 of about 0.999.
pub const DEFAULT_NOISE_SCALE: f64 = 0.031_638_599_858_418_034;

/// Relative noise scale at which the noise-free signal explains `r2` of the
/// variance.
pub fn bayes_noise_scale(r2: f64) -> f64 {
    (1.0 / r2 - 1.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n: usize,
    pub noise_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n: 121,
            noise_scale: DEFAULT_NOISE_SCALE,
        }
    }
}

// weights over (HARSH, MDD, 1-LL, 1-PI, 1-PL, 1-CA, OMC hump); each row sums to 1
const TARGET_WEIGHTS: [[f64; 7]; N_TARGETS] = [
    [0.50, 0.15, 0.12, 0.10, 0.05, 0.04, 0.04],
    [0.45, 0.20, 0.15, 0.08, 0.04, 0.04, 0.04],
    [0.55, 0.12, 0.10, 0.12, 0.03, 0.04, 0.04],
];

// fraction of the envelope kept free at each end so noise rarely needs clamping
const MARGIN: f64 = 0.04;

fn normalized(j: usize, v: f64) -> f64 {
    let (lo, hi) = FEATURE_RANGES[j];
    (v - lo) / (hi - lo)
}

// strictly increasing maps of [0, 1] onto [0, 1]
fn response_curve(target: usize, z: f64) -> f64 {
    match target {
        0 => (z + 0.5 * z * z) / 1.5,
        1 => (z + 0.3 * z * z) / 1.3,
        _ => (2.0 * z - 0.5 * z * z) / 1.5,
    }
}

/// Noise-free targets (CBR, UCS, R) for one input row in natural units.
pub fn noise_free_targets(row: &[f64]) -> [f64; N_TARGETS] {
    assert_eq!(row.len(), N_INPUTS);
    let n: Vec<f64> = (0..N_INPUTS).map(|j| normalized(j, row[j])).collect();
    let omc = n[4];
    let terms = [
        n[0],
        n[6],
        1.0 - n[1],
        1.0 - n[3],
        1.0 - n[2],
        1.0 - n[5],
        1.0 - (2.0 * omc - 1.0).powi(2),
    ];
    let mut out = [0.0; N_TARGETS];
    for (t, w) in TARGET_WEIGHTS.iter().enumerate() {
        let z: f64 = w.iter().zip(&terms).map(|(w, s)| w * s).sum();
        let (lo, hi) = TARGET_RANGES[t];
        out[t] = lo + (hi - lo) * (MARGIN + (1.0 - 2.0 * MARGIN) * response_curve(t, z));
    }
    out
}

fn lerp_range(j: usize, s: f64) -> f64 {
    let (lo, hi) = FEATURE_RANGES[j];
    lo + (hi - lo) * s
}

/// Deterministic synthetic soil dataset. Panics if `n < 10` or the noise
/// scale is negative.
pub fn synthesize(spec: &SynthSpec) -> Dataset {
    assert!(spec.n >= 10, "synthetic dataset needs at least 10 rows");
    assert!(spec.noise_scale >= 0.0 && spec.noise_scale.is_finite());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut levels: Vec<usize> = (0..spec.n).map(|i| i % HARSH_LEVELS).collect();
    levels.shuffle(&mut rng);

    let mut xs = Vec::with_capacity(spec.n);
    for &level in &levels {
        let h = level as f64 / (HARSH_LEVELS - 1) as f64;
        let plasticity: f64 = rng.random();
        let u: [f64; 5] = std::array::from_fn(|_| rng.random());
        let row = [
            h * 12.0,
            lerp_range(1, 0.85 * (1.0 - h) + 0.15 * plasticity),
            lerp_range(2, 0.8 * (1.0 - h) + 0.2 * u[0]),
            lerp_range(3, 0.8 * (1.0 - h) + 0.15 * plasticity + 0.05 * u[1]),
            lerp_range(4, 0.8 * h + 0.2 * u[2]),
            lerp_range(5, 0.75 * (1.0 - h) + 0.15 * plasticity + 0.1 * u[3]),
            lerp_range(6, 0.85 * h + 0.15 * u[4]),
        ];
        xs.push(row);
    }

    let mut ys: Vec<[f64; N_TARGETS]> = xs.iter().map(|r| noise_free_targets(r)).collect();
    if spec.noise_scale > 0.0 {
        for t in 0..N_TARGETS {
            let col: Vec<f64> = ys.iter().map(|y| y[t]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (col.len() - 1) as f64)
                .sqrt();
            let normal = Normal::new(0.0, spec.noise_scale * sd).expect("valid noise sd");
            let (lo, hi) = TARGET_RANGES[t];
            for y in ys.iter_mut() {
                y[t] = (y[t] + normal.sample(&mut rng)).clamp(lo, hi);
            }
        }
    }

    Dataset::from_parts(Matrix::from_rows(&xs), Matrix::from_rows(&ys))
        .expect("synthetic data satisfies dataset invariants")
}
