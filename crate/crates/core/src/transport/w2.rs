use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gmm::{check_symmetric, GaussianComponent, GmmModel};

/// Squared distances in `[-W2_NEGATIVE_SLACK, 0)` are roundoff and clamp to 0.
pub const W2_NEGATIVE_SLACK: f64 = 1e-8;

/// Principal square root of a symmetric positive semi-definite matrix.
///
/// Uses a symmetric eigendecomposition; negative eigenvalues from roundoff
/// are clamped to zero.
pub fn matrix_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let mut s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    s = (&s + s.transpose()) * 0.5;
    Ok(s)
}

/// `Tr((B A B)^{1/2})` for symmetric `A` and `B`, via eigenvalues only.
fn trace_sqrt_sandwich(a: &DMatrix<f64>, b_sqrt: &DMatrix<f64>) -> f64 {
    let mut inner = b_sqrt * a * b_sqrt;
    inner = (&inner + inner.transpose()) * 0.5;
    SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum()
}

fn w2_with_sqrt(
    g1: &GaussianComponent,
    g2: &GaussianComponent,
    g2_sqrt: &DMatrix<f64>,
) -> Result<f64> {
    check_dim(g1.dim(), g2.dim())?;
    let mean_term = (g1.mean() - g2.mean()).norm_squared();
    let cross = trace_sqrt_sandwich(g1.covariance(), g2_sqrt);
    let value = mean_term + g1.covariance().trace() + g2.covariance().trace() - 2.0 * cross;
    if value < -W2_NEGATIVE_SLACK {
        return Err(Error::Numerical(format!(
            "squared W2 distance {value} is negative beyond roundoff"
        )));
    }
    Ok(value.max(0.0))
}

/// Squared 2-Wasserstein distance between two Gaussians:
/// `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{1/2})`.
pub fn w2_gaussian(g1: &GaussianComponent, g2: &GaussianComponent) -> Result<f64> {
    check_dim(g1.dim(), g2.dim())?;
    let g2_sqrt = matrix_sqrt_spd(g2.covariance())?;
    w2_with_sqrt(g1, g2, &g2_sqrt)
}

/// Pairwise transport costs between source (rows) and target (columns) components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDocument", into = "MatrixDocument")]
pub struct CostMatrix {
    values: DMatrix<f64>,
}

impl CostMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty cost matrix".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "costs must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_dim(n, r.len())?;
        }
        Self::new(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.max()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.values * factor)
    }
}

/// `values[i][j] = w2_gaussian(source_i, target_j)`; entries computed in parallel.
pub fn cost_matrix(gmm_s: &GmmModel, gmm_t: &GmmModel) -> Result<CostMatrix> {
    check_dim(gmm_s.dim(), gmm_t.dim())?;
    let roots: Vec<DMatrix<f64>> = gmm_t
        .components()
        .par_iter()
        .map(|c| matrix_sqrt_spd(c.covariance()))
        .collect::<Result<_>>()?;
    let (m, n) = (gmm_s.k(), gmm_t.k());
    let entries: Vec<f64> = (0..m * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            w2_with_sqrt(&gmm_s.components()[i], &gmm_t.components()[j], &roots[j])
        })
        .collect::<Result<_>>()?;
    CostMatrix::new(DMatrix::from_row_slice(m, n, &entries))
}

#[derive(Serialize, Deserialize)]
pub(crate) struct MatrixDocument {
    rows: usize,
    cols: usize,
    /// Row-major.
    values: Vec<f64>,
}

impl MatrixDocument {
    pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            values: m.transpose().as_slice().to_vec(),
        }
    }

    pub(crate) fn into_matrix(self) -> Result<DMatrix<f64>> {
        check_dim(self.rows * self.cols, self.values.len())?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.values))
    }
}

impl From<CostMatrix> for MatrixDocument {
    fn from(c: CostMatrix) -> Self {
        Self::from_matrix(&c.values)
    }
}

impl TryFrom<MatrixDocument> for CostMatrix {
    type Error = Error;

    fn try_from(doc: MatrixDocument) -> Result<Self> {
        CostMatrix::new(doc.into_matrix()?)
    }
}
