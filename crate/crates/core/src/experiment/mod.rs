//! End-to-end study: load, split, scale, tune, refit, evaluate, partial
//! dependence and reporting, plus the repeated-split study.

pub mod config;
pub mod report;

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{default_grid, missing_reference_optima, DataSource, Grids, RunConfig, REFERENCE_OPTIMA};
pub use report::{emit_report, literature, write_task_artifacts, LiteratureRow};

use crate::dataset::{synthesize, Dataset, DatasetError, FeatureSchema, MinMaxScaler, SplitSpec, SynthSpec, Target};
use crate::metrics::{evaluate, EvalReport, MetricsError};
use crate::model::{Candidate, EngineTrainer, ModelError, ModelKind, Predictor, TrainedModel};
use crate::sensitivity::{pdp_compute, pdp_grid, PdpCurve, SensitivityError};
use crate::tuning::{grid_search, TuningError, TuningResult};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Data {
        stage: &'static str,
        #[source]
        source: DatasetError,
    },
    #[error("{stage}: {source}")]
    Tuning {
        stage: &'static str,
        #[source]
        source: TuningError,
    },
    #[error("{stage}: {source}")]
    Model {
        stage: &'static str,
        #[source]
        source: ModelError,
    },
    #[error("{stage}: {source}")]
    Metrics {
        stage: &'static str,
        #[source]
        source: MetricsError,
    },
    #[error("{stage}: {source}")]
    Sensitivity {
        stage: &'static str,
        #[source]
        source: SensitivityError,
    },
    #[error("{stage}: {path}: {source}")]
    Io {
        stage: &'static str,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {path}: {message}")]
    Format {
        stage: &'static str,
        path: String,
        message: String,
    },
    #[error("repeat with seed {seed}: {source}")]
    Repeat {
        seed: u64,
        #[source]
        source: Box<ExperimentError>,
    },
}

impl ExperimentError {
    /// Process exit code: 1 config, 2 data, 3 solver non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Data { .. } | ExperimentError::Metrics { .. } => 2,
            ExperimentError::Tuning { source, .. } if source.is_non_convergence() => 3,
            ExperimentError::Model { source, .. } if source.is_non_convergence() => 3,
            ExperimentError::Tuning { .. } | ExperimentError::Model { .. } => 2,
            ExperimentError::Sensitivity { .. } => 2,
            ExperimentError::Io { .. } | ExperimentError::Format { .. } => 1,
            ExperimentError::Repeat { source, .. } => source.exit_code(),
        }
    }

    pub fn is_non_convergence(&self) -> bool {
        self.exit_code() == 3
    }

    pub(crate) fn io(stage: &'static str, path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            stage,
            path: path.display().to_string(),
            source,
        }
    }
}

fn data_err(stage: &'static str) -> impl Fn(DatasetError) -> ExperimentError {
    move |source| ExperimentError::Data { stage, source }
}

/// Loads or generates the dataset named by the config.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset, ExperimentError> {
    match &cfg.data {
        DataSource::Csv { path } => {
            cfg.check_paths()?;
            Dataset::load_csv(path, &FeatureSchema::soil()).map_err(data_err("load"))
        }
        &DataSource::Synthetic { seed, n, noise_scale } => Ok(synthesize(&SynthSpec { seed, n, noise_scale })),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }
}

/// One actual-versus-predicted pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub phase: Phase,
    pub row_id: u64,
    pub actual: f64,
    pub predicted: f64,
}

/// Everything up to and including hyperparameter search. The test
/// partition is carried along untouched.
#[derive(Debug, Clone)]
pub struct TuneStage {
    pub model: ModelKind,
    pub target: Target,
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub scaler: MinMaxScaler,
    pub tuning: TuningResult,
}

#[derive(Serialize)]
struct TuningArtifacts<'a> {
    model: ModelKind,
    target: Target,
    seed: u64,
    scaler: &'a MinMaxScaler,
    tuning: &'a TuningResult,
}

impl TuneStage {
    /// Scaler, folds, per-candidate scores and winner as JSON.
    pub fn artifacts_json(&self) -> String {
        serde_json::to_string_pretty(&TuningArtifacts {
            model: self.model,
            target: self.target,
            seed: self.seed,
            scaler: &self.scaler,
            tuning: &self.tuning,
        })
        .expect("tuning artifacts serialize")
            + "\n"
    }
}

/// Splits with `seed`, fits the scaler on the training rows and grid
/// searches on them.
pub fn tune_stage(
    cfg: &RunConfig,
    data: &Dataset,
    model: ModelKind,
    target: Target,
    seed: u64,
) -> Result<TuneStage, ExperimentError> {
    let (train, test) = data
        .split(&SplitSpec::new(cfg.train_fraction, seed))
        .map_err(data_err("split"))?;
    let scaler = MinMaxScaler::fit(&train);
    let trainer = EngineTrainer::new(model, seed);
    log::info!("tuning {model} for {} ({} candidates)", target.name(), cfg.grids.get(model).candidate_count());
    let tuning = grid_search(&train, target, cfg.grids.get(model), cfg.cv_k, seed, &trainer)
        .map_err(|source| ExperimentError::Tuning { stage: "tune", source })?;
    Ok(TuneStage {
        model,
        target,
        seed,
        train,
        test,
        scaler,
        tuning,
    })
}

/// Serializable results of one (model, target) task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub model: ModelKind,
    pub target: Target,
    pub seed: u64,
    pub hyperparameters: Candidate,
    pub cv_mse: f64,
    /// False when the final SVR fit stopped on its update budget.
    pub converged: bool,
    pub n_train: usize,
    pub n_test: usize,
    pub train: EvalReport,
    pub test: EvalReport,
    pub scatter: Vec<ScatterPoint>,
    pub pdp: Vec<PdpCurve>,
}

/// A task report plus the fitted objects behind it.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub report: TaskReport,
    pub bundle: ModelBundle,
    pub tuning: TuningResult,
}

/// A fitted model with what is needed to apply it to raw rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub model: ModelKind,
    pub target: Target,
    pub seed: u64,
    pub train_fraction: f64,
    pub hyperparameters: Candidate,
    pub scaler: MinMaxScaler,
    pub trained: TrainedModel,
}

impl ModelBundle {
    /// Predictions for raw (unscaled) rows.
    pub fn predict_raw(&self, d: &Dataset) -> Result<Vec<f64>, ExperimentError> {
        self.trained
            .predict_rows(&self.scaler.transform_matrix(d.x()))
            .map_err(|source| ExperimentError::Model { stage: "predict", source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io("load model", path, e))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Format {
            stage: "load model",
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Train and test metrics plus scatter data for a bundle on its own split.
pub fn evaluate_bundle(
    bundle: &ModelBundle,
    train: &Dataset,
    test: &Dataset,
) -> Result<(EvalReport, EvalReport, Vec<ScatterPoint>), ExperimentError> {
    let mut scatter = Vec::with_capacity(train.n() + test.n());
    let mut reports = Vec::with_capacity(2);
    for (phase, d) in [(Phase::Train, train), (Phase::Test, test)] {
        let pred = bundle.predict_raw(d)?;
        let actual = d.target(bundle.target);
        reports.push(
            evaluate(&actual, &pred, d.row_ids()).map_err(|source| ExperimentError::Metrics { stage: "evaluate", source })?,
        );
        scatter.extend(d.row_ids().iter().zip(actual.iter().zip(&pred)).map(|(&row_id, (&a, &p))| ScatterPoint {
            phase,
            row_id,
            actual: a,
            predicted: p,
        }));
    }
    let test_report = reports.pop().expect("two phases");
    let train_report = reports.pop().expect("two phases");
    Ok((train_report, test_report, scatter))
}

/// Partial dependence curves for every input feature over `background`.
/// Features that are constant over the background are skipped.
pub fn bundle_pdps(bundle: &ModelBundle, background: &Dataset, n_points: usize) -> Result<Vec<PdpCurve>, ExperimentError> {
    let sens = |source| ExperimentError::Sensitivity { stage: "sensitivity", source };
    let mut curves = Vec::new();
    for name in background.schema().input_names() {
        let grid = match pdp_grid(background, name, n_points) {
            Ok(g) => g,
            Err(SensitivityError::DegenerateFeature(f)) => {
                log::warn!("skipping partial dependence for constant feature {f}");
                continue;
            }
            Err(e) => return Err(sens(e)),
        };
        curves.push(pdp_compute(&bundle.trained, background, &bundle.scaler, name, &grid).map_err(sens)?);
    }
    Ok(curves)
}

/// Refits the winning candidate on the full training partition, evaluates
/// on both partitions and, when `with_pdp`, computes partial dependence over
/// the training rows.
pub fn finish_stage(cfg: &RunConfig, stage: TuneStage, with_pdp: bool) -> Result<TaskOutcome, ExperimentError> {
    let TuneStage {
        model,
        target,
        seed,
        train,
        test,
        scaler,
        tuning,
    } = stage;
    let trainer = EngineTrainer::new(model, seed);
    let trained = trainer
        .train_lenient(&scaler.transform_matrix(train.x()), &train.target(target), &tuning.best_candidate)
        .map_err(|source| ExperimentError::Model { stage: "train", source })?;
    if !trained.converged() {
        log::warn!("final {model} fit for {} did not converge; keeping the best iterate", target.name());
    }
    let bundle = ModelBundle {
        model,
        target,
        seed,
        train_fraction: cfg.train_fraction,
        hyperparameters: tuning.best_candidate.clone(),
        scaler,
        trained,
    };
    let (train_report, test_report, scatter) = evaluate_bundle(&bundle, &train, &test)?;
    let pdp = if with_pdp {
        bundle_pdps(&bundle, &train, cfg.pdp_points)?
    } else {
        Vec::new()
    };
    Ok(TaskOutcome {
        report: TaskReport {
            model,
            target,
            seed,
            hyperparameters: tuning.best_candidate.clone(),
            cv_mse: tuning.best_cv_mse,
            converged: bundle.trained.converged(),
            n_train: train.n(),
            n_test: test.n(),
            train: train_report,
            test: test_report,
            scatter,
            pdp,
        },
        bundle,
        tuning,
    })
}

/// One full task: split, scale, tune, refit, evaluate and sensitivity.
pub fn run_task(
    cfg: &RunConfig,
    data: &Dataset,
    model: ModelKind,
    target: Target,
    seed: u64,
) -> Result<TaskOutcome, ExperimentError> {
    let stage = tune_stage(cfg, data, model, target, seed)?;
    finish_stage(cfg, stage, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
}

impl MetricSet {
    pub fn of(r: &EvalReport) -> Self {
        Self {
            r2: r.r2,
            rmse: r.rmse,
            mae: r.mae,
            mape: r.mape,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.r2, self.rmse, self.mae, self.mape]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            r2: a[0],
            rmse: a[1],
            mae: a[2],
            mape: a[3],
        }
    }
}

pub const METRIC_NAMES: [&str; 4] = ["r2", "rmse", "mae", "mape"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRun {
    pub seed: u64,
    pub converged: bool,
    pub hyperparameters: Candidate,
    pub test: MetricSet,
}

/// Test metrics aggregated over repeated splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub model: ModelKind,
    pub target: Target,
    pub runs: Vec<RepeatRun>,
    pub mean: MetricSet,
    /// Sample standard deviation (n - 1 denominator).
    pub std: MetricSet,
    /// `mean±std` with four decimals, keyed by metric name.
    pub formatted: IndexMap<String, String>,
}

/// "0.9996±0.0004" style text.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4}±{std:.4}")
}

/// Mean and sample standard deviation of each metric over `runs`.
pub fn aggregate(runs: &[MetricSet]) -> (MetricSet, MetricSet) {
    let n = runs.len() as f64;
    let mut mean = [0.0; 4];
    let mut std = [0.0; 4];
    for m in 0..4 {
        mean[m] = runs.iter().map(|r| r.to_array()[m]).sum::<f64>() / n;
        let ss: f64 = runs.iter().map(|r| (r.to_array()[m] - mean[m]).powi(2)).sum();
        std[m] = if runs.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    }
    (MetricSet::from_array(mean), MetricSet::from_array(std))
}

/// Runs the task with seeds `base_seed .. base_seed + n_repeats` and
/// aggregates the test metrics.
pub fn repeat_study(
    cfg: &RunConfig,
    data: &Dataset,
    model: ModelKind,
    target: Target,
    n_repeats: usize,
) -> Result<RepeatSummary, ExperimentError> {
    if n_repeats < 2 {
        return Err(ExperimentError::Config(format!("repeats must be at least 2, got {n_repeats}")));
    }
    let mut runs = Vec::with_capacity(n_repeats);
    for seed in cfg.base_seed..cfg.base_seed + n_repeats as u64 {
        let wrap = |e| ExperimentError::Repeat {
            seed,
            source: Box::new(e),
        };
        let stage = tune_stage(cfg, data, model, target, seed).map_err(wrap)?;
        let out = finish_stage(cfg, stage, false).map_err(wrap)?;
        runs.push(RepeatRun {
            seed,
            converged: out.report.converged,
            hyperparameters: out.report.hyperparameters,
            test: MetricSet::of(&out.report.test),
        });
    }
    let metrics: Vec<MetricSet> = runs.iter().map(|r| r.test).collect();
    let (mean, std) = aggregate(&metrics);
    let formatted = METRIC_NAMES
        .iter()
        .zip(mean.to_array().into_iter().zip(std.to_array()))
        .map(|(name, (m, s))| (name.to_string(), format_mean_std(m, s)))
        .collect();
    Ok(RepeatSummary {
        model,
        target,
        runs,
        mean,
        std,
        formatted,
    })
}

/// Settings echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub data: DataSource,
    pub n_rows: usize,
    pub train_fraction: f64,
    pub cv_k: usize,
    pub base_seed: u64,
    pub pdp_points: usize,
    pub grids: Grids,
}

/// A task that stopped on solver non-convergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub model: ModelKind,
    pub target: Target,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub settings: RunSettings,
    pub tasks: Vec<TaskReport>,
    pub failures: Vec<TaskFailure>,
    pub repeat: Vec<RepeatSummary>,
    pub literature: Vec<LiteratureRow>,
    /// True when some task failed to converge or kept an unconverged fit.
    pub partial: bool,
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn task(&self, model: ModelKind, target: Target) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.model == model && t.target == target)
    }
}

/// Full study over every configured (model, target) pair. Tasks that fail
/// on solver non-convergence are recorded and the study continues; any
/// other error aborts. `repeats` adds the repeated-split study.
pub fn run_study(
    cfg: &RunConfig,
    data: &Dataset,
    repeats: Option<usize>,
    mut on_task: impl FnMut(&TaskOutcome) -> Result<(), ExperimentError>,
) -> Result<StudyReport, ExperimentError> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    let mut failures = Vec::new();
    for &model in &cfg.models {
        for &target in &cfg.targets {
            match run_task(cfg, data, model, target, cfg.base_seed) {
                Ok(out) => {
                    on_task(&out)?;
                    tasks.push(out.report);
                }
                Err(e) if e.is_non_convergence() => {
                    log::error!("{model} on {}: {e}", target.name());
                    failures.push(TaskFailure {
                        model,
                        target,
                        error: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    let mut repeat = Vec::new();
    if let Some(n) = repeats {
        for &model in &cfg.models {
            for &target in &cfg.targets {
                repeat.push(repeat_study(cfg, data, model, target, n)?);
            }
        }
    }
    let partial = !failures.is_empty()
        || tasks.iter().any(|t| !t.converged)
        || repeat.iter().any(|r| r.runs.iter().any(|run| !run.converged));
    Ok(StudyReport {
        settings: RunSettings {
            data: cfg.data.clone(),
            n_rows: data.n(),
            train_fraction: cfg.train_fraction,
            cv_k: cfg.cv_k,
            base_seed: cfg.base_seed,
            pdp_points: cfg.pdp_points,
            grids: cfg.grids.clone(),
        },
        tasks,
        failures,
        repeat,
        literature: literature(),
        partial,
    })
}
