//! Component alignment across domains.
//!
//! Source and target Gaussian components are compared with the closed-form
//! Wasserstein-2 distance, coupled by entropic optimal transport with uniform
//! marginals, and user weights are pushed through the resulting plan.

mod sinkhorn;
mod transfer;
mod w2;

pub use sinkhorn::{
    default_epsilon, marginal_error, sinkhorn, sinkhorn_with, SinkhornConfig, TransportPlan,
};
pub use transfer::transfer_weights;
pub use w2::{cost_matrix, matrix_sqrt_spd, w2_gaussian, CostMatrix, W2_NEGATIVE_SLACK};
