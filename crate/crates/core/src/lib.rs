//! One-pass AUC optimization for streaming binary classification.
//!
//! Learners see each example once and keep only per-class first and
//! second-order statistics (exact or sketched), never the stream itself.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod exact;
pub mod harness;
pub mod learner;
pub mod model;
pub mod sketch;
pub mod synth;

pub use data::{Dataset, Instance, Label, SparseVector};
pub use error::{ConfigError, DataError, EvalError, HarnessError};
pub use harness::{run_cv, EvalReport, ExperimentConfig};
pub use learner::{OnlineLearner, StepPolicy};
pub use model::{Algorithm, LearnerSpec, Model, SavedModel};
