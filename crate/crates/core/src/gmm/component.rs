use std::f64::consts::TAU;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};

/// Largest tolerated `|a_ij - a_ji|`, relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// A full-covariance Gaussian with its Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl PartialEq for GaussianComponent {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.covariance == other.covariance
    }
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "matrix is {}x{}, not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), covariance.nrows())?;
        check_symmetric(&covariance)?;
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite Gaussian parameter".into(),
            ));
        }
        let cholesky = Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let log_det = 2.0
            * cholesky
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        Ok(Self {
            mean,
            covariance,
            cholesky,
            log_det,
        })
    }

    /// Zero mean, identity covariance.
    pub fn standard(dim: usize) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = Σ`.
    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        self.cholesky.l()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `(x - μ)ᵀ Σ⁻¹ (x - μ)` via a triangular solve.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let diff = DVector::from_column_slice(x) - &self.mean;
        Ok(self.whitened_norm_sq(diff))
    }

    fn whitened_norm_sq(&self, diff: DVector<f64>) -> f64 {
        let y = self
            .cholesky
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        y.norm_squared()
    }

    /// `log N(x; μ, Σ) = -½ [d ln 2π + ln|Σ| + D²]`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let maha = self.mahalanobis_sq(x)?;
        Ok(self.log_density_from_mahalanobis(maha))
    }

    pub(crate) fn log_density_from_mahalanobis(&self, maha: f64) -> f64 {
        -0.5 * (self.dim() as f64 * TAU.ln() + self.log_det + maha)
    }

    /// Squared Mahalanobis distances for every column of `points` (`d x n`).
    pub(crate) fn mahalanobis_columns(&self, points: &DMatrix<f64>) -> Vec<f64> {
        let mut diff = points.clone();
        for mut col in diff.column_iter_mut() {
            col -= &self.mean;
        }
        // solve_* reads only the lower triangle of the dirty factor
        self.cholesky
            .l_dirty()
            .solve_lower_triangular_mut(&mut diff);
        diff.column_iter().map(|c| c.norm_squared()).collect()
    }
}

pub fn component_log_density(c: &GaussianComponent, x: &[f64]) -> Result<f64> {
    c.log_density(x)
}

pub fn mahalanobis_sq(c: &GaussianComponent, x: &[f64]) -> Result<f64> {
    c.mahalanobis_sq(x)
}
