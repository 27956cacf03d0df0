//! Run configuration, read from a TOML file.
//!
//! ```toml
//! targets = ["cbr", "ucs", "r"]
//! models = ["svr", "xgb_style", "oblivious"]
//! train_fraction = 0.7
//! cv_k = 5
//! base_seed = 0
//! pdp_points = 50
//! repeats = 10
//! output_dir = "results"
//!
//! [data]
//! source = "synthetic"   # or "csv" with `path = "soil.csv"`
//!
//! [grids.svr]
//! c = [52.0, 75.0, 500.0]
//! ```
//!
//! Every key is optional. A grid table, when present, replaces the default
//! grid for that model entirely.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dataset::{SynthSpec, Target, DEFAULT_NOISE_SCALE};
use crate::model::ModelKind;
use crate::sensitivity::DEFAULT_PDP_POINTS;
use crate::tuning::HyperGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
    },
    Synthetic {
        #[serde(default = "default_synth_seed")]
        seed: u64,
        #[serde(default = "default_synth_n")]
        n: usize,
        #[serde(default = "default_noise")]
        noise_scale: f64,
    },
}

fn default_synth_seed() -> u64 {
    1
}
fn default_synth_n() -> usize {
    121
}
fn default_noise() -> f64 {
    DEFAULT_NOISE_SCALE
}

impl Default for DataSource {
    fn default() -> Self {
        let s = SynthSpec::default();
        DataSource::Synthetic {
            seed: s.seed,
            n: s.n,
            noise_scale: s.noise_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub svr: HyperGrid,
    pub xgb_style: HyperGrid,
    pub oblivious: HyperGrid,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            svr: default_grid(ModelKind::Svr),
            xgb_style: default_grid(ModelKind::Xgb),
            oblivious: default_grid(ModelKind::Oblivious),
        }
    }
}

impl Grids {
    pub fn get(&self, kind: ModelKind) -> &HyperGrid {
        match kind {
            ModelKind::Svr => &self.svr,
            ModelKind::Xgb => &self.xgb_style,
            ModelKind::Oblivious => &self.oblivious,
        }
    }
}

/// The shipped search grid for each engine.
pub fn default_grid(kind: ModelKind) -> HyperGrid {
    let axes: &[(&str, &[f64])] = match kind {
        ModelKind::Svr => &[
            ("c", &[1.0, 10.0, 52.0, 75.0, 100.0, 500.0]),
            ("gamma", &[0.1, 0.5, 0.9, 0.96, 0.99]),
            ("epsilon", &[0.001, 0.002, 0.01]),
        ],
        ModelKind::Xgb => &[
            ("n_estimators", &[242.0, 349.0, 359.0]),
            ("learning_rate", &[0.03, 0.04, 0.05]),
            ("max_depth", &[5.0, 6.0, 7.0]),
            ("subsample", &[0.7, 1.0]),
            ("colsample_bytree", &[0.5, 0.7, 1.0]),
            ("reg_lambda", &[0.06, 1.1, 1.21]),
        ],
        ModelKind::Oblivious => &[
            ("n_estimators", &[289.0, 493.0, 500.0]),
            ("learning_rate", &[0.03, 0.04, 0.05]),
            ("max_depth", &[5.0, 7.0, 12.0]),
            ("subsample", &[0.9, 1.0]),
            ("colsample_bytree", &[0.4, 1.0]),
            ("reg_lambda", &[0.03, 0.21, 0.48]),
        ],
    };
    HyperGrid::from_pairs(axes).expect("default grids are valid")
}

/// Reference tuned settings per (model, target). Keys left out mean the
/// engine default (1.0 for both sampling fractions).
pub const REFERENCE_OPTIMA: [(ModelKind, Target, &[(&str, f64)]); 9] = [
    (ModelKind::Svr, Target::Cbr, &[("c", 52.0), ("gamma", 0.99), ("epsilon", 0.001)]),
    (ModelKind::Svr, Target::Ucs, &[("c", 500.0), ("gamma", 0.96), ("epsilon", 0.001)]),
    (ModelKind::Svr, Target::R, &[("c", 75.0), ("gamma", 0.9), ("epsilon", 0.002)]),
    (
        ModelKind::Oblivious,
        Target::Cbr,
        &[
            ("n_estimators", 289.0),
            ("colsample_bytree", 0.4),
            ("max_depth", 7.0),
            ("reg_lambda", 0.48),
            ("learning_rate", 0.05),
        ],
    ),
    (
        ModelKind::Oblivious,
        Target::Ucs,
        &[
            ("n_estimators", 500.0),
            ("colsample_bytree", 1.0),
            ("max_depth", 12.0),
            ("reg_lambda", 0.21),
            ("learning_rate", 0.05),
        ],
    ),
    (
        ModelKind::Oblivious,
        Target::R,
        &[
            ("n_estimators", 493.0),
            ("colsample_bytree", 1.0),
            ("max_depth", 5.0),
            ("subsample", 0.9),
            ("reg_lambda", 0.03),
            ("learning_rate", 0.04),
        ],
    ),
    (
        ModelKind::Xgb,
        Target::Cbr,
        &[
            ("n_estimators", 349.0),
            ("colsample_bytree", 0.5),
            ("max_depth", 6.0),
            ("subsample", 0.7),
            ("reg_lambda", 1.1),
            ("learning_rate", 0.03),
        ],
    ),
    (
        ModelKind::Xgb,
        Target::Ucs,
        &[
            ("n_estimators", 359.0),
            ("colsample_bytree", 0.7),
            ("max_depth", 6.0),
            ("subsample", 1.0),
            ("reg_lambda", 1.21),
            ("learning_rate", 0.04),
        ],
    ),
    (
        ModelKind::Xgb,
        Target::R,
        &[
            ("n_estimators", 242.0),
            ("max_depth", 7.0),
            ("subsample", 0.7),
            ("reg_lambda", 0.06),
            ("learning_rate", 0.03),
        ],
    ),
];

/// Reference settings whose values are missing from `grids`, as
/// `(model, target, key, value)`. Omitted sampling keys are checked at 1.0.
pub fn missing_reference_optima(grids: &Grids) -> Vec<(ModelKind, Target, String, f64)> {
    let mut missing = Vec::new();
    for (kind, target, pairs) in REFERENCE_OPTIMA {
        let grid = grids.get(kind);
        let mut wanted: Vec<(&str, f64)> = pairs.to_vec();
        if kind != ModelKind::Svr {
            for key in ["subsample", "colsample_bytree"] {
                if !pairs.iter().any(|(k, _)| *k == key) {
                    wanted.push((key, 1.0));
                }
            }
        }
        for (key, v) in wanted {
            if !grid.axis(key).is_some_and(|axis| axis.contains(&v)) {
                missing.push((kind, target, key.to_string(), v));
            }
        }
    }
    missing
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub targets: Vec<Target>,
    pub models: Vec<ModelKind>,
    pub train_fraction: f64,
    pub cv_k: usize,
    pub base_seed: u64,
    pub pdp_points: usize,
    pub repeats: usize,
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub grids: Grids,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            targets: Target::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            train_fraction: 0.7,
            cv_k: 5,
            base_seed: 0,
            pdp_points: DEFAULT_PDP_POINTS,
            repeats: 10,
            output_dir: PathBuf::from("results"),
            data: DataSource::default(),
            grids: Grids::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative CSV path is taken
    /// relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let DataSource::Csv { path: csv } = &mut cfg.data {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.targets.is_empty() {
            return bad("at least one target is required".into());
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.targets.iter().collect::<BTreeSet<_>>().len() != self.targets.len() {
            return bad("targets contain duplicates".into());
        }
        if self.models.iter().collect::<BTreeSet<_>>().len() != self.models.len() {
            return bad("models contain duplicates".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must be in (0, 1), got {}", self.train_fraction));
        }
        if self.cv_k < 2 {
            return bad(format!("cv_k must be at least 2, got {}", self.cv_k));
        }
        if self.pdp_points < 2 {
            return bad(format!("pdp_points must be at least 2, got {}", self.pdp_points));
        }
        if self.repeats < 2 {
            return bad(format!("repeats must be at least 2, got {}", self.repeats));
        }
        if let DataSource::Synthetic { n, noise_scale, .. } = self.data {
            if n < 10 {
                return bad(format!("synthetic n must be at least 10, got {n}"));
            }
            if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
                return bad(format!("noise_scale must be finite and non-negative, got {noise_scale}"));
            }
        }
        for kind in ModelKind::ALL {
            for c in self.grids.get(kind).candidates() {
                kind.check_candidate(&c)
                    .map_err(|e| ExperimentError::Config(format!("grid for {kind}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Checks that referenced files exist.
    pub fn check_paths(&self) -> Result<(), ExperimentError> {
        match &self.data {
            DataSource::Csv { path } if !path.is_file() => Err(ExperimentError::Config(format!(
                "data file {} does not exist",
                path.display()
            ))),
            _ => Ok(()),
        }
    }
}
