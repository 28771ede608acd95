use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::w2::MatrixDocument;
use super::CostMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropic regularization; `None` means [`default_epsilon`] of the cost.
    pub epsilon: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

/// `0.05 * max(cost)`, or `1.0` for an all-zero cost.
pub fn default_epsilon(cost: &CostMatrix) -> f64 {
    let max = cost.max();
    if max > 0.0 {
        0.05 * max
    } else {
        1.0
    }
}

const ANNEAL_FACTOR: f64 = 0.5;
const STAGE_ITERS: usize = 200;
/// Scaling is considered stalled when the marginal error shrinks by less
/// than `STALL_RATIO` over `STALL_WINDOW` sweeps.
const STALL_WINDOW: usize = 50;
const STALL_RATIO: f64 = 0.5;

/// A coupling between `m` source and `n` target components with uniform
/// marginals `1/m` (rows) and `1/n` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    values: DMatrix<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    /// `Σ_i |row_i − 1/m| + Σ_j |col_j − 1/n|`.
    pub marginal_error: f64,
}

/// L1 distance of the plan's marginals from uniform.
pub fn marginal_error(values: &DMatrix<f64>) -> f64 {
    let (m, n) = values.shape();
    let rows: f64 = values
        .row_iter()
        .map(|r| (r.sum() - 1.0 / m as f64).abs())
        .sum();
    let cols: f64 = values
        .column_iter()
        .map(|c| (c.sum() - 1.0 / n as f64).abs())
        .sum();
    rows + cols
}

impl TransportPlan {
    /// Wraps an externally built coupling, e.g. the identity `(1/m) I`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty transport plan".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "plan entries must be finite and nonnegative".into(),
            ));
        }
        let marginal_error = marginal_error(&values);
        Ok(Self {
            values,
            epsilon: 0.0,
            iterations: 0,
            marginal_error,
        })
    }

    /// `(1/m) I`, which maps every component onto itself.
    pub fn identity(m: usize) -> Self {
        Self::from_values(DMatrix::identity(m, m) / m as f64).expect("identity coupling is valid")
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

    /// `⟨T, C⟩`.
    pub fn transport_cost(&self, cost: &CostMatrix) -> f64 {
        self.values.component_mul(cost.values()).sum()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Dual potentials, stored divided by the current epsilon.
struct Dual {
    scaled: DMatrix<f64>,
    log_a: f64,
    log_b: f64,
    f: DVector<f64>,
    g: DVector<f64>,
}

impl Dual {
    fn sweep(&mut self) {
        let (m, n) = self.scaled.shape();
        for i in 0..m {
            self.f[i] = self.log_a - log_sum_exp((0..n).map(|j| self.g[j] - self.scaled[(i, j)]));
        }
        for j in 0..n {
            self.g[j] = self.log_b - log_sum_exp((0..m).map(|i| self.f[i] - self.scaled[(i, j)]));
        }
    }

    fn plan_at(&self, f: &DVector<f64>, g: &DVector<f64>) -> DMatrix<f64> {
        let (m, n) = self.scaled.shape();
        DMatrix::from_fn(m, n, |i, j| (f[i] + g[j] - self.scaled[(i, j)]).exp())
    }

    fn plan(&self) -> DMatrix<f64> {
        self.plan_at(&self.f, &self.g)
    }

    fn is_finite(&self) -> bool {
        self.f.iter().chain(self.g.iter()).all(|v| v.is_finite())
    }

    /// One damped Newton step on the marginal equations
    /// `rowsum(T) = 1/m`, `colsum(T) = 1/n`. The Jacobian
    /// `[[diag(r), T], [Tᵀ, diag(c)]]` is reduced to its Schur complement on
    /// the column block; its null direction (constant shift between `f` and
    /// `g`) is removed with a rank-one term. Returns the new marginal error,
    /// or `None` if no step length improved on `current`.
    fn newton_step(&mut self, plan: &DMatrix<f64>, current: f64) -> Option<f64> {
        let (m, n) = plan.shape();
        let rows = plan.column_sum();
        let cols = plan.row_sum().transpose();
        if rows.iter().any(|&r| !(r > 0.0)) {
            return None;
        }
        let res_r = rows.map(|r| r - 1.0 / m as f64);
        let res_c = cols.map(|c| c - 1.0 / n as f64);
        let inv_r = rows.map(|r| 1.0 / r);
        // S = diag(c) - Tᵀ diag(1/r) T + 11ᵀ/n
        let scaled_plan = DMatrix::from_fn(m, n, |i, j| plan[(i, j)] * inv_r[i]);
        let mut schur = -(plan.transpose() * &scaled_plan);
        for j in 0..n {
            schur[(j, j)] += cols[j];
        }
        schur.add_scalar_mut(1.0 / n as f64);
        let rhs = -&res_c + plan.transpose() * res_r.component_mul(&inv_r);
        let dg = schur.lu().solve(&rhs)?;
        let df = -(res_r + plan * &dg).component_mul(&inv_r);
        let mut step = 1.0;
        for _ in 0..30 {
            let f = &self.f + &df * step;
            let g = &self.g + &dg * step;
            let trial = self.plan_at(&f, &g);
            let err = marginal_error(&trial);
            if err.is_finite() && err < current {
                self.f = f;
                self.g = g;
                return Some(err);
            }
            step *= 0.5;
        }
        None
    }
}

/// Entropic optimal transport between uniform marginals by log-domain
/// Sinkhorn iteration.
///
/// Dual potentials `f` (rows) and `g` (columns) are updated alternately,
/// `f_i = ε (ln a_i − LSE_j((g_j − C_ij)/ε))` and likewise for `g`, and the
/// plan is `T_ij = exp((f_i + g_j − C_ij)/ε)`. Epsilon is annealed from the
/// cost scale down to the target, warm-starting each stage. At the target,
/// if scaling stalls (small epsilon with nearly disconnected plans converges
/// very slowly) the same dual is refined by damped Newton steps, which share
/// the fixed point. Iteration stops once the L1 marginal violation drops
/// below `tol`. Hitting `max_iter` with a violation above `100 * tol` is an
/// error; a smaller residual is returned with a warning.
pub fn sinkhorn(
    cost: &CostMatrix,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let c = cost.values();
    let (m, n) = c.shape();
    if (c / epsilon).iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "cost/epsilon overflows for epsilon = {epsilon}; use a larger epsilon"
        )));
    }
    let non_finite = |iterations: usize| {
        Error::Numerical(format!(
            "Sinkhorn potentials became non-finite at iteration {iterations}; \
             epsilon = {epsilon} is too small for the cost scale, use a larger epsilon"
        ))
    };

    let mut stage_eps = cost.max().max(epsilon);
    let mut dual = Dual {
        scaled: c / stage_eps,
        log_a: -(m as f64).ln(),
        log_b: -(n as f64).ln(),
        f: DVector::zeros(m),
        g: DVector::zeros(n),
    };
    let mut iterations = 0;

    // annealing stages above the target epsilon
    while stage_eps > epsilon && iterations < max_iter {
        for _ in 0..STAGE_ITERS {
            if iterations >= max_iter {
                break;
            }
            iterations += 1;
            dual.sweep();
            if !dual.is_finite() {
                return Err(non_finite(iterations));
            }
            if marginal_error(&dual.plan()) < tol.sqrt() {
                break;
            }
        }
        let next = (stage_eps * ANNEAL_FACTOR).max(epsilon);
        dual.f *= stage_eps / next;
        dual.g *= stage_eps / next;
        dual.scaled = c / next;
        stage_eps = next;
    }
    if stage_eps > epsilon {
        dual.f *= stage_eps / epsilon;
        dual.g *= stage_eps / epsilon;
        dual.scaled = c / epsilon;
    }

    let mut plan = dual.plan();
    let mut error = marginal_error(&plan);
    let mut checkpoint = error;
    let mut since_checkpoint = 0;
    while error >= tol && iterations < max_iter {
        iterations += 1;
        dual.sweep();
        if !dual.is_finite() {
            return Err(non_finite(iterations));
        }
        plan = dual.plan();
        error = marginal_error(&plan);
        since_checkpoint += 1;
        if since_checkpoint == STALL_WINDOW {
            if error > STALL_RATIO * checkpoint {
                while error >= tol && iterations < max_iter {
                    iterations += 1;
                    match dual.newton_step(&plan, error) {
                        Some(e) => {
                            error = e;
                            plan = dual.plan();
                        }
                        None => break,
                    }
                }
            }
            checkpoint = error;
            since_checkpoint = 0;
        }
    }
    if error >= tol {
        if error > 100.0 * tol {
            return Err(Error::Numerical(format!(
                "Sinkhorn did not converge: marginal error {error:.3e} after {iterations} \
                 iterations (tol {tol:.1e}, epsilon {epsilon:.3e}, {m}x{n} cost, max cost {:.3e})",
                cost.max()
            )));
        }
        warn!("Sinkhorn stopped at max_iter with marginal error {error:.3e} (tol {tol:.1e})");
    }
    Ok(TransportPlan {
        values: plan,
        epsilon,
        iterations,
        marginal_error: error,
    })
}

/// [`sinkhorn`] with the configured or default epsilon.
pub fn sinkhorn_with(cost: &CostMatrix, config: &SinkhornConfig) -> Result<TransportPlan> {
    let epsilon = config.epsilon.unwrap_or_else(|| default_epsilon(cost));
    sinkhorn(cost, epsilon, config.max_iter, config.tol)
}

#[derive(Serialize, Deserialize)]
struct PlanDocument {
    epsilon: f64,
    iterations: usize,
    marginal_error: f64,
    #[serde(flatten)]
    matrix: MatrixDocument,
}

impl Serialize for TransportPlan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PlanDocument {
            epsilon: self.epsilon,
            iterations: self.iterations,
            marginal_error: self.marginal_error,
            matrix: MatrixDocument::from_matrix(&self.values),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TransportPlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = PlanDocument::deserialize(d)?;
        let values = doc.matrix.into_matrix().map_err(serde::de::Error::custom)?;
        let mut plan = TransportPlan::from_values(values).map_err(serde::de::Error::custom)?;
        plan.epsilon = doc.epsilon;
        plan.iterations = doc.iterations;
        plan.marginal_error = doc.marginal_error;
        Ok(plan)
    }
}
