use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{FitInfo, GaussianComponent};
use crate::error::{check_dim, Error, Result};

/// Tolerance on the mixing weights summing to one.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A Gaussian mixture over one domain's item embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmDocument", into = "GmmDocument")]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
    weights: Vec<f64>,
    fit: Option<FitInfo>,
}

impl GmmModel {
    pub fn new(components: Vec<GaussianComponent>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument(
                "mixture needs at least one component".into(),
            ));
        }
        check_dim(components.len(), weights.len())?;
        let dim = components[0].dim();
        for c in &components {
            check_dim(dim, c.dim())?;
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "mixing weights must be nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "mixing weights sum to {total}, not 1"
            )));
        }
        Ok(Self {
            components,
            weights,
            fit: None,
        })
    }

    pub(crate) fn with_fit(
        components: Vec<GaussianComponent>,
        weights: Vec<f64>,
        fit: FitInfo,
    ) -> Result<Self> {
        let mut model = Self::new(components, weights)?;
        model.fit = Some(fit);
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn fit_info(&self) -> Option<&FitInfo> {
        self.fit.as_ref()
    }

    /// Free parameters of a full-covariance mixture:
    /// `(K - 1) + K d + K d (d + 1) / 2`.
    pub fn parameter_count(&self) -> usize {
        parameter_count(self.k(), self.dim())
    }

    /// Log-density of `x` under every component.
    pub fn component_log_densities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.log_density(x)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }
}

pub fn parameter_count(k: usize, d: usize) -> usize {
    (k - 1) + k * d + k * d * (d + 1) / 2
}

#[derive(Serialize, Deserialize)]
struct GmmDocument {
    dim: usize,
    k: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// One row-major `dim x dim` matrix per component.
    covariances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<FitInfo>,
}

impl From<GmmModel> for GmmDocument {
    fn from(m: GmmModel) -> Self {
        GmmDocument {
            dim: m.dim(),
            k: m.k(),
            means: m
                .components
                .iter()
                .map(|c| c.mean().as_slice().to_vec())
                .collect(),
            covariances: m
                .components
                .iter()
                .map(|c| c.covariance().transpose().as_slice().to_vec())
                .collect(),
            weights: m.weights,
            fit: m.fit,
        }
    }
}

impl TryFrom<GmmDocument> for GmmModel {
    type Error = Error;

    fn try_from(doc: GmmDocument) -> Result<Self> {
        check_dim(doc.k, doc.means.len())?;
        check_dim(doc.k, doc.covariances.len())?;
        let components = doc
            .means
            .into_iter()
            .zip(doc.covariances)
            .map(|(mean, cov)| {
                check_dim(doc.dim, mean.len())?;
                check_dim(doc.dim * doc.dim, cov.len())?;
                GaussianComponent::new(
                    DVector::from_vec(mean),
                    DMatrix::from_row_slice(doc.dim, doc.dim, &cov),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = GmmModel::new(components, doc.weights)?;
        model.fit = doc.fit;
        Ok(model)
    }
}
