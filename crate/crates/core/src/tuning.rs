//! Seeded k-fold cross-validated grid search.
//!
//! Every candidate is scored on the same fold assignment. Within each fold
//! the min-max scaler is refit on the training folds only, so held-out rows
//! never influence the transform the model sees.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, MinMaxScaler, Target};
use crate::matrix::Matrix;
use crate::model::{Candidate, ModelError, Predictor, Trainer};

/// Upper bound on the number of grid points in one search.
pub const MAX_CANDIDATES: usize = 20_000;

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("fold count {k} must satisfy 2 <= k <= n = {n}")]
    BadFoldCount { n: usize, k: usize },
    #[error("fold assignment covers {got} rows but the dataset has {expected}")]
    FoldMismatch { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: ModelError,
    },
    #[error("fold {0} produced a non-finite mean squared error")]
    NonFiniteScore(usize),
    #[error("all {0} candidates failed")]
    AllCandidatesInfeasible(usize),
}

impl TuningError {
    pub fn is_non_convergence(&self) -> bool {
        match self {
            TuningError::Fold { source, .. } => source.is_non_convergence(),
            TuningError::AllCandidatesInfeasible(_) => true,
            _ => false,
        }
    }
}

/// Named axes whose cartesian product is the candidate list. The first axis
/// varies slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<String, Vec<f64>>", into = "IndexMap<String, Vec<f64>>")]
pub struct HyperGrid {
    axes: Vec<(String, Vec<f64>)>,
}

impl TryFrom<IndexMap<String, Vec<f64>>> for HyperGrid {
    type Error = TuningError;

    fn try_from(m: IndexMap<String, Vec<f64>>) -> Result<Self, TuningError> {
        HyperGrid::new(m.into_iter().collect())
    }
}

impl From<HyperGrid> for IndexMap<String, Vec<f64>> {
    fn from(g: HyperGrid) -> Self {
        g.axes.into_iter().collect()
    }
}

impl HyperGrid {
    pub fn new(axes: Vec<(String, Vec<f64>)>) -> Result<Self, TuningError> {
        if axes.is_empty() {
            return Err(TuningError::InvalidGrid("grid has no axes".into()));
        }
        for (i, (name, values)) in axes.iter().enumerate() {
            if values.is_empty() {
                return Err(TuningError::InvalidGrid(format!("axis {name:?} is empty")));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(TuningError::InvalidGrid(format!("axis {name:?} has a non-finite value")));
            }
            if axes[..i].iter().any(|(other, _)| other == name) {
                return Err(TuningError::InvalidGrid(format!("axis {name:?} appears twice")));
            }
        }
        let g = Self { axes };
        if g.candidate_count() > MAX_CANDIDATES {
            return Err(TuningError::InvalidGrid(format!(
                "{} candidates exceeds the budget of {MAX_CANDIDATES}",
                g.candidate_count()
            )));
        }
        Ok(g)
    }

    pub fn from_pairs(axes: &[(&str, &[f64])]) -> Result<Self, TuningError> {
        Self::new(axes.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect())
    }

    pub fn axes(&self) -> &[(String, Vec<f64>)] {
        &self.axes
    }

    pub fn axis(&self, name: &str) -> Option<&[f64]> {
        self.axes.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn candidate_count(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// All candidates in lexicographic axis order.
    pub fn candidates(&self) -> Vec<Candidate> {
        let total = self.candidate_count();
        let mut out = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut picks = vec![0.0; self.axes.len()];
            for (slot, (_, values)) in self.axes.iter().enumerate().rev() {
                picks[slot] = values[idx % values.len()];
                idx /= values.len();
            }
            out.push(self.axes.iter().zip(picks).map(|((n, _), v)| (n.clone(), v)).collect());
        }
        out
    }
}

/// Fold label per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// Row positions outside fold `f`, ascending.
    pub fn train_positions(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != f).collect()
    }

    /// Row positions in fold `f`, ascending.
    pub fn held_out_positions(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == f).collect()
    }
}

/// Seeded uniform shuffle of `0..n` followed by round-robin fold labels.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment, TuningError> {
    if k < 2 || k > n {
        return Err(TuningError::BadFoldCount { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (p, &row) in perm.iter().enumerate() {
        assignment[row] = p % k;
    }
    Ok(FoldAssignment { k, assignment })
}

/// Scalers fitted on the training folds of each split.
pub fn fold_scalers(train: &Dataset, folds: &FoldAssignment) -> Result<Vec<MinMaxScaler>, TuningError> {
    check_folds(train, folds)?;
    Ok((0..folds.k)
        .map(|f| MinMaxScaler::fit_matrix(&train.x().select_rows(&folds.train_positions(f))))
        .collect())
}

fn check_folds(train: &Dataset, folds: &FoldAssignment) -> Result<(), TuningError> {
    if folds.n() != train.n() {
        return Err(TuningError::FoldMismatch {
            expected: train.n(),
            got: folds.n(),
        });
    }
    if folds.k < 2 || folds.assignment.iter().any(|&f| f >= folds.k) {
        return Err(TuningError::BadFoldCount { n: folds.n(), k: folds.k });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub mean_mse: f64,
    pub fold_mses: Vec<f64>,
}

/// One fold's inputs, scaled with a scaler fitted on its training part.
struct FoldData {
    x_fit: Matrix,
    y_fit: Vec<f64>,
    x_held: Matrix,
    y_held: Vec<f64>,
}

fn prepare_folds(train: &Dataset, target: Target, folds: &FoldAssignment) -> Vec<FoldData> {
    let y = train.target(target);
    (0..folds.k)
        .map(|f| {
            let fit_rows = folds.train_positions(f);
            let held = folds.held_out_positions(f);
            let x_fit = train.x().select_rows(&fit_rows);
            let scaler = MinMaxScaler::fit_matrix(&x_fit);
            FoldData {
                x_fit: scaler.transform_matrix(&x_fit),
                y_fit: fit_rows.iter().map(|&i| y[i]).collect(),
                x_held: scaler.transform_matrix(&train.x().select_rows(&held)),
                y_held: held.iter().map(|&i| y[i]).collect(),
            }
        })
        .collect()
}

fn fold_mse(fold: usize, pred: &[f64], actual: &[f64]) -> Result<f64, TuningError> {
    let mse = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / actual.len() as f64;
    if mse.is_finite() {
        Ok(mse)
    } else {
        Err(TuningError::NonFiniteScore(fold))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn score_prepared<T: Trainer>(data: &[FoldData], candidate: &Candidate, trainer: &T) -> Result<CvScore, TuningError> {
    let mut fold_mses = Vec::with_capacity(data.len());
    for (f, d) in data.iter().enumerate() {
        let pred = trainer
            .train(&d.x_fit, &d.y_fit, candidate)
            .and_then(|m| m.predict_rows(&d.x_held))
            .map_err(|source| TuningError::Fold { fold: f, source })?;
        fold_mses.push(fold_mse(f, &pred, &d.y_held)?);
    }
    Ok(CvScore {
        mean_mse: mean(&fold_mses),
        fold_mses,
    })
}

/// Cross-validated mean squared error of one candidate.
pub fn cv_score<T: Trainer>(
    train: &Dataset,
    target: Target,
    candidate: &Candidate,
    folds: &FoldAssignment,
    trainer: &T,
) -> Result<CvScore, TuningError> {
    check_folds(train, folds)?;
    score_prepared(&prepare_folds(train, target, folds), candidate, trainer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: Candidate,
    /// `None` when a fold failed; such candidates rank last.
    pub mean_mse: Option<f64>,
    pub fold_mses: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub best_candidate: Candidate,
    pub best_cv_mse: f64,
    pub per_candidate: Vec<CandidateScore>,
    pub folds: FoldAssignment,
}

/// Scores every grid candidate on one shared fold assignment and returns
/// the lowest mean MSE; ties keep the earliest candidate.
pub fn grid_search<T: Trainer>(
    train: &Dataset,
    target: Target,
    grid: &HyperGrid,
    k: usize,
    seed: u64,
    trainer: &T,
) -> Result<TuningResult, TuningError> {
    let folds = make_folds(train.n(), k, seed)?;
    search_with_folds(train, target, grid, folds, trainer)
}

/// [`grid_search`] with a caller-supplied fold assignment.
pub fn search_with_folds<T: Trainer>(
    train: &Dataset,
    target: Target,
    grid: &HyperGrid,
    folds: FoldAssignment,
    trainer: &T,
) -> Result<TuningResult, TuningError> {
    check_folds(train, &folds)?;
    let data = prepare_folds(train, target, &folds);
    let candidates = grid.candidates();
    let groups = staged_groups(&candidates, trainer.staged_key());

    let mut scored: Vec<(usize, CandidateScore)> = groups
        .into_par_iter()
        .flat_map_iter(|group| score_group(&data, &candidates, &group, trainer))
        .collect();
    scored.sort_by_key(|(i, _)| *i);
    let per_candidate: Vec<CandidateScore> = scored.into_iter().map(|(_, c)| c).collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, c) in per_candidate.iter().enumerate() {
        if let Some(m) = c.mean_mse {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((i, m));
            }
        }
    }
    let Some((i, best_cv_mse)) = best else {
        return Err(TuningError::AllCandidatesInfeasible(per_candidate.len()));
    };
    Ok(TuningResult {
        best_candidate: per_candidate[i].candidate.clone(),
        best_cv_mse,
        per_candidate,
        folds,
    })
}

fn stage_value(candidate: &Candidate, key: &str) -> Option<usize> {
    let v = *candidate.get(key)?;
    (v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as usize)
}

/// Groups candidate indices that differ only in the staged key.
fn staged_groups(candidates: &[Candidate], key: Option<&str>) -> Vec<Vec<usize>> {
    let Some(key) = key else {
        return (0..candidates.len()).map(|i| vec![i]).collect();
    };
    let mut groups: Vec<(Option<Vec<(&str, u64)>>, Vec<usize>)> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let rest = stage_value(c, key).map(|_| {
            c.iter()
                .filter(|(k, _)| k.as_str() != key)
                .map(|(k, v)| (k.as_str(), v.to_bits()))
                .collect::<Vec<_>>()
        });
        match groups.iter_mut().find(|(r, _)| r.is_some() && *r == rest) {
            Some((_, g)) => g.push(i),
            None => groups.push((rest, vec![i])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

fn to_score(candidate: &Candidate, r: Result<CvScore, TuningError>) -> CandidateScore {
    match r {
        Ok(s) => CandidateScore {
            candidate: candidate.clone(),
            mean_mse: Some(s.mean_mse),
            fold_mses: s.fold_mses,
            error: None,
        },
        Err(e) => {
            log::debug!("candidate {candidate:?} infeasible: {e}");
            CandidateScore {
                candidate: candidate.clone(),
                mean_mse: None,
                fold_mses: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    }
}

fn score_group<T: Trainer>(
    data: &[FoldData],
    candidates: &[Candidate],
    group: &[usize],
    trainer: &T,
) -> Vec<(usize, CandidateScore)> {
    let one_by_one = || {
        group
            .iter()
            .map(|&i| (i, to_score(&candidates[i], score_prepared(data, &candidates[i], trainer))))
            .collect()
    };
    let Some(key) = trainer.staged_key().filter(|_| group.len() > 1) else {
        return one_by_one();
    };
    let stages: Vec<usize> = group
        .iter()
        .map(|&i| stage_value(&candidates[i], key).expect("grouped candidates carry a stage"))
        .collect();
    let mut fold_mses = vec![Vec::with_capacity(data.len()); group.len()];
    for (f, d) in data.iter().enumerate() {
        let preds = match trainer.staged_predictions(&d.x_fit, &d.y_fit, &candidates[group[0]], &stages, &d.x_held) {
            Ok(p) => p,
            // a failure may belong to one stage only; score each on its own
            Err(_) => return one_by_one(),
        };
        for (slot, pred) in preds.iter().enumerate() {
            match fold_mse(f, pred, &d.y_held) {
                Ok(m) => fold_mses[slot].push(m),
                Err(_) => return one_by_one(),
            }
        }
    }
    group
        .iter()
        .zip(fold_mses)
        .map(|(&i, m)| {
            let s = CvScore {
                mean_mse: mean(&m),
                fold_mses: m,
            };
            (i, to_score(&candidates[i], Ok(s)))
        })
        .collect()
}
