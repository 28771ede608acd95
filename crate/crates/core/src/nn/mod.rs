//! Dense feedforward networks with backprop and Adam.
//!
//! Everything runs in `f64`. Batched passes take one sample per column.

mod adam;
mod gradcheck;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, max_relative_error, numeric_gradient};
pub use mlp::{Activation, ForwardTrace, Layer, Mlp, MlpGrads};
