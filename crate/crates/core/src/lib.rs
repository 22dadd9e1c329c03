//! Expand-and-sparsify function approximation.
//!
//! Inputs are lifted by a random projection `W` into `R^d`, sparsified to a
//! short list of active units, and read out by averaging training targets
//! over the region each unit responds to.

pub mod approximator;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod projection;
pub mod rng;
pub mod sparsifier;
pub mod stats;

pub use approximator::{
    ClassifierReport, DeadUnitPolicy, EasApproximator, EasClassifier, EvalReport, FitOptions, NoActiveFallback,
};
pub use data::{Dataset, ManifoldSpec, TargetFunction, TargetTag, Targets};
pub use error::{Error, ErrorCategory, Result};
pub use metrics::{CodeRule, OverlapBin, OverlapProfile};
pub use projection::{ProjectionMatrix, RowDistribution};
pub use sparsifier::{SparseCode, SparsifyConfig, SparsifyMode, ThresholdVector, TieRule};
