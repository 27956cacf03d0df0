//! The three model engines behind one trainer interface.
//!
//! Hyperparameter candidates are flat name -> value maps so that grids can be
//! declared in config files. SVR reads `c`, `gamma`, `epsilon` (and
//! optionally `tolerance`); both tree engines read `n_estimators`,
//! `learning_rate`, `max_depth`, `reg_lambda`, `subsample`,
//! `colsample_bytree`, `gamma_complexity` and `min_child_weight`.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbdt::{BoostHyperParams, BoostedEnsemble, GbdtError, TreeShape};
use crate::matrix::Matrix;
use crate::svr::{self, SvrError, SvrHyperParams, SvrModel};

/// One point of a hyperparameter grid.
pub type Candidate = IndexMap<String, f64>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Svr(#[from] SvrError),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error("bad candidate: {0}")]
    Candidate(String),
}

impl ModelError {
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, ModelError::Svr(SvrError::DidNotConverge(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "svr")]
    Svr,
    #[serde(rename = "xgb_style", alias = "xgb")]
    Xgb,
    #[serde(rename = "oblivious")]
    Oblivious,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Svr, ModelKind::Xgb, ModelKind::Oblivious];

    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::Svr => "svr",
            ModelKind::Xgb => "xgb",
            ModelKind::Oblivious => "oblivious",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svr" => Some(ModelKind::Svr),
            "xgb" | "xgb_style" | "xgboost" => Some(ModelKind::Xgb),
            "oblivious" | "cbt" | "catboost" => Some(ModelKind::Oblivious),
            _ => None,
        }
    }

    pub fn allowed_keys(self) -> &'static [&'static str] {
        match self {
            ModelKind::Svr => &["c", "gamma", "epsilon", "tolerance", "max_passes"],
            ModelKind::Xgb | ModelKind::Oblivious => &[
                "n_estimators",
                "learning_rate",
                "max_depth",
                "reg_lambda",
                "subsample",
                "colsample_bytree",
                "gamma_complexity",
                "min_child_weight",
            ],
        }
    }

    /// Rejects unknown keys and out-of-range values without training.
    pub fn check_candidate(self, candidate: &Candidate) -> Result<(), ModelError> {
        if let Some(k) = candidate.keys().find(|k| !self.allowed_keys().contains(&k.as_str())) {
            return Err(ModelError::Candidate(format!("unknown key {k:?} for {}", self.slug())));
        }
        match self {
            ModelKind::Svr => svr_params(candidate).map(|_| ()),
            _ => boost_params(self, candidate, 0).map(|_| ()),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

fn integer(candidate: &Candidate, key: &str, default: usize) -> Result<usize, ModelError> {
    match candidate.get(key) {
        None => Ok(default),
        Some(&v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(v as usize),
        Some(&v) => Err(ModelError::Candidate(format!("{key} must be a non-negative integer, got {v}"))),
    }
}

fn real(candidate: &Candidate, key: &str, default: f64) -> f64 {
    candidate.get(key).copied().unwrap_or(default)
}

pub fn svr_params(candidate: &Candidate) -> Result<SvrHyperParams, ModelError> {
    let mut h = SvrHyperParams::new(
        real(candidate, "c", 1.0),
        real(candidate, "epsilon", 0.1),
        real(candidate, "gamma", 1.0),
    )?;
    h.tolerance = real(candidate, "tolerance", svr::DEFAULT_TOLERANCE);
    if candidate.contains_key("max_passes") {
        h.max_passes = Some(integer(candidate, "max_passes", 0)? as u64);
    }
    h.validate()?;
    Ok(h)
}

pub fn boost_params(kind: ModelKind, candidate: &Candidate, seed: u64) -> Result<BoostHyperParams, ModelError> {
    let d = BoostHyperParams::default();
    let h = BoostHyperParams {
        n_estimators: integer(candidate, "n_estimators", d.n_estimators)?,
        learning_rate: real(candidate, "learning_rate", d.learning_rate),
        max_depth: integer(candidate, "max_depth", d.max_depth)?,
        reg_lambda: real(candidate, "reg_lambda", d.reg_lambda),
        gamma_complexity: real(candidate, "gamma_complexity", d.gamma_complexity),
        subsample: real(candidate, "subsample", d.subsample),
        colsample_bytree: real(candidate, "colsample_bytree", d.colsample_bytree),
        min_child_weight: real(candidate, "min_child_weight", d.min_child_weight),
        tree_shape: match kind {
            ModelKind::Oblivious => TreeShape::Oblivious,
            _ => TreeShape::Axis,
        },
        seed,
    };
    if kind == ModelKind::Svr {
        return Err(ModelError::Candidate("svr is not a tree model".into()));
    }
    h.validate()?;
    Ok(h)
}

/// Anything that maps one (scaled) input row to a prediction.
pub trait Predictor {
    fn predict_one(&self, x: &[f64]) -> Result<f64, ModelError>;

    fn predict_rows(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        x.rows().map(|r| self.predict_one(r)).collect()
    }
}

/// Adapts a plain function into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&[f64]) -> f64> Predictor for FnPredictor<F> {
    fn predict_one(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok((self.0)(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "lowercase")]
pub enum TrainedModel {
    Svr(SvrModel),
    Boosted(BoostedEnsemble),
}

impl TrainedModel {
    /// False only for an SVR whose solver stopped on its update budget.
    pub fn converged(&self) -> bool {
        match self {
            TrainedModel::Svr(m) => m.converged,
            TrainedModel::Boosted(_) => true,
        }
    }
}

impl Predictor for TrainedModel {
    fn predict_one(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(match self {
            TrainedModel::Svr(m) => m.predict(x)?,
            TrainedModel::Boosted(m) => m.predict(x)?,
        })
    }
}

/// Fits a model for one hyperparameter candidate.
pub trait Trainer: Sync {
    type Model: Predictor + Send;

    fn train(&self, x: &Matrix, y: &[f64], candidate: &Candidate) -> Result<Self::Model, ModelError>;

    /// Integer candidate key whose values can all be scored from one fit.
    fn staged_key(&self) -> Option<&'static str> {
        None
    }

    /// Predictions on `x_eval` for `candidate` with the staged key set to
    /// each value in `stages`. The default trains once per value.
    fn staged_predictions(
        &self,
        x: &Matrix,
        y: &[f64],
        candidate: &Candidate,
        stages: &[usize],
        x_eval: &Matrix,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let key = self
            .staged_key()
            .ok_or_else(|| ModelError::Candidate("trainer has no staged key".into()))?;
        stages
            .iter()
            .map(|&k| {
                let mut c = candidate.clone();
                c.insert(key.to_string(), k as f64);
                self.train(x, y, &c)?.predict_rows(x_eval)
            })
            .collect()
    }
}

/// Trainer for one of the built-in engines.
#[derive(Debug, Clone, Copy)]
pub struct EngineTrainer {
    pub kind: ModelKind,
    /// Seed for the row/column sampling of tree engines.
    pub seed: u64,
}

impl EngineTrainer {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Like [`Trainer::train`] but hands back the best-so-far SVR when the
    /// solver runs out of budget (check [`TrainedModel::converged`]).
    pub fn train_lenient(&self, x: &Matrix, y: &[f64], candidate: &Candidate) -> Result<TrainedModel, ModelError> {
        match self.train(x, y, candidate) {
            Err(ModelError::Svr(SvrError::DidNotConverge(m))) => Ok(TrainedModel::Svr(*m)),
            other => other,
        }
    }
}

impl Trainer for EngineTrainer {
    type Model = TrainedModel;

    fn train(&self, x: &Matrix, y: &[f64], candidate: &Candidate) -> Result<TrainedModel, ModelError> {
        self.kind.check_candidate(candidate)?;
        match self.kind {
            ModelKind::Svr => Ok(TrainedModel::Svr(svr::fit(x, y, &svr_params(candidate)?)?)),
            kind => {
                let h = boost_params(kind, candidate, self.seed)?;
                Ok(TrainedModel::Boosted(BoostedEnsemble::fit(x, y, &h)?))
            }
        }
    }

    fn staged_key(&self) -> Option<&'static str> {
        match self.kind {
            ModelKind::Svr => None,
            _ => Some("n_estimators"),
        }
    }

    fn staged_predictions(
        &self,
        x: &Matrix,
        y: &[f64],
        candidate: &Candidate,
        stages: &[usize],
        x_eval: &Matrix,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let Some(&most) = stages.iter().max() else {
            return Ok(Vec::new());
        };
        if self.kind == ModelKind::Svr {
            return Err(ModelError::Candidate("svr has no staged key".into()));
        }
        let mut c = candidate.clone();
        c.insert("n_estimators".into(), most as f64);
        for &k in stages {
            c["n_estimators"] = k as f64;
            self.kind.check_candidate(&c)?;
        }
        c["n_estimators"] = most as f64;
        let h = boost_params(self.kind, &c, self.seed)?;
        let m = BoostedEnsemble::fit(x, y, &h)?;
        Ok(m.staged_predict_batch(x_eval, stages)?)
    }
}
