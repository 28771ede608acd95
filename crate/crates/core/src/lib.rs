//! Cross-domain transfer of user preference distributions.
//!
//! Users are modeled as weighted mixtures over Gaussian components fitted to
//! each domain's item embeddings. Components of the source and target domains
//! are aligned with entropic optimal transport over Wasserstein-2 costs, and a
//! source user's weights are carried through the transport plan to predict
//! ratings for target-domain items the user has never seen.
//!
//! Stages, in pipeline order:
//!
//! - [`data`]: embedding/interaction formats and the train/valid/test split;
//! - [`autoencoder`]: shared dimensionality reduction for both domains;
//! - [`gmm`]: EM-fitted full-covariance mixtures and BIC model selection;
//! - [`preference`]: per-domain weight learner and rating predictor;
//! - [`transport`]: Gaussian W2 costs, Sinkhorn, weight transfer;
//! - [`pipeline`]: configuration, artifact layout, commands and metrics.

pub mod autoencoder;
pub mod data;
pub mod error;
pub mod gmm;
mod io;
pub mod nn;
pub mod pipeline;
pub mod preference;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
