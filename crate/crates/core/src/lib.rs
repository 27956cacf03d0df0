//! Regression toolkit for estimating strength properties (CBR, UCS, R-value)
//! of stabilized subgrade soil.
//!
//! The crate provides two learners written from scratch:
//!
//! * [`svr`]: epsilon-insensitive support vector regression with an RBF
//!   kernel, trained by pairwise coordinate ascent on the dual.
//! * [`gbdt`]: second-order gradient boosted regression trees with L2 leaf
//!   regularization and a per-leaf complexity penalty, grown either
//!   depth-wise with axis-aligned splits or as oblivious (symmetric) trees.
//!
//! Around them sits the study pipeline: [`dataset`] loading, splitting and
//! min-max scaling fitted on training rows only, [`tuning`] by k-fold grid
//! search, [`metrics`], [`sensitivity`] via partial dependence, and the
//! [`experiment`] orchestration that writes report files.

pub mod dataset;
pub mod experiment;
pub mod gbdt;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod sensitivity;
pub mod svr;
pub mod tuning;

pub use dataset::{Dataset, FeatureSchema, MinMaxScaler, SplitSpec, SummaryStats, Target};
pub use gbdt::{BoostHyperParams, BoostedEnsemble, RegressionTree, TreeShape};
pub use matrix::Matrix;
pub use metrics::EvalReport;
pub use model::{ModelKind, Predictor, TrainedModel};
pub use sensitivity::PdpCurve;
pub use svr::{KernelSpec, SvrHyperParams, SvrModel};
pub use tuning::{FoldAssignment, HyperGrid, TuningResult};
