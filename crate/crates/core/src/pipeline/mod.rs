//! Pipeline orchestration: configuration, artifact layout, the stage
//! commands and evaluation metrics.
//!
//! Each command reads its inputs from the artifacts directory, refuses to
//! run when an upstream artifact is missing, and writes its outputs to a
//! fixed location (see [`ArtifactLayout`]). Given the same configuration
//! and seed every command reproduces its artifacts byte for byte.

mod commands;
mod config;
mod layout;
mod metrics;

pub use commands::{
    cmd_encode, cmd_evaluate, cmd_fit_gmm, cmd_predict, cmd_split, cmd_train_ae, cmd_train_domain,
    cmd_transport, predict_transfer, run_all,
};
pub use config::{ConfigEntries, DomainPaths, GmmSelection, PipelineConfig};
pub use layout::{ArtifactLayout, Domain};
pub use metrics::{
    evaluate, format_significant, read_predictions, write_predictions, EvalReport, Prediction,
    PREDICTIONS_HEADER,
};
