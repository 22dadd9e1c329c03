//! Experiment drivers, model files and CSV output.

pub mod config;
pub mod experiments;
pub mod model_file;

pub use config::{default_k, ExperimentConfig, ExperimentKind, ProfileCode, ProfileInputs};
pub use experiments::{run_experiment, ExperimentOutput, Report};
pub use model_file::{load_model, model_from_bytes, model_to_bytes, save_model, ModelEncoding};
