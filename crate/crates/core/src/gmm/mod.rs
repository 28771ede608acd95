//! Full-covariance Gaussian mixtures fitted by EM.

mod bic;
mod component;
mod em;
mod model;

pub use bic::{bic, select_k_bic, BicScore, BicSelection};
pub(crate) use component::check_symmetric;
pub use component::{component_log_density, mahalanobis_sq, GaussianComponent, SYMMETRY_TOL};
pub use em::{fit_gmm_em, log_likelihood, responsibilities, FitInfo, GmmConfig};
pub use model::{parameter_count, GmmModel, SIMPLEX_TOL};
