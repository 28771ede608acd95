use log::debug;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GaussianComponent, GmmModel};
use crate::error::{check_dim, Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    /// Restarts from independent k-means++ seedings; the best log-likelihood wins.
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    /// Ridge added to every covariance, as a fraction of the mean data variance.
    pub reg_scale: f64,
    /// Lloyd iterations refining the k-means++ seeding.
    pub kmeans_iter: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            n_init: 4,
            max_iter: 300,
            tol: 1e-5,
            reg_scale: 1e-6,
            kmeans_iter: 20,
        }
    }
}

/// Fit metadata recorded alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub seed: u64,
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Total log-likelihood of the training points.
    pub log_likelihood: f64,
    pub reg_floor: f64,
    /// Mean log-likelihood after initialization and after every EM iteration.
    #[serde(skip)]
    pub history: Vec<f64>,
}

pub(crate) fn to_columns(points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidArgument("no points".into()))?;
    let d = first.len();
    if d == 0 {
        return Err(Error::InvalidArgument("points have zero dimension".into()));
    }
    for p in points {
        check_dim(d, p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite point coordinate".into()));
        }
    }
    Ok(DMatrix::from_fn(d, points.len(), |r, c| points[c][r]))
}

/// `reg_scale` times the mean per-dimension population variance
/// (`reg_scale` itself when the data has zero spread).
fn regularization_floor(x: &DMatrix<f64>, reg_scale: f64) -> f64 {
    let n = x.ncols() as f64;
    let mean_var = x
        .row_iter()
        .map(|row| {
            let mu = row.sum() / n;
            row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / x.nrows() as f64;
    if mean_var > 0.0 {
        reg_scale * mean_var
    } else {
        reg_scale
    }
}

/// Row-wise log-sum-exp of an `n x k` matrix; entries may be `-inf`.
fn log_sum_exp_rows(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return max;
            }
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .collect()
}

/// `ln π_k + ln N(x_i; μ_k, Σ_k)` as an `n x K` matrix.
fn weighted_log_probs(
    components: &[GaussianComponent],
    weights: &[f64],
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut lp = DMatrix::zeros(x.ncols(), components.len());
    for (k, (c, &w)) in components.iter().zip(weights).enumerate() {
        let log_w = w.ln();
        for (i, maha) in c.mahalanobis_columns(x).into_iter().enumerate() {
            lp[(i, k)] = log_w + c.log_density_from_mahalanobis(maha);
        }
    }
    lp
}

/// E-step: responsibilities (`n x K`, row-stochastic) and mean log-likelihood.
pub(crate) fn e_step(
    components: &[GaussianComponent],
    weights: &[f64],
    x: &DMatrix<f64>,
) -> (DMatrix<f64>, f64) {
    let mut lp = weighted_log_probs(components, weights, x);
    let lse = log_sum_exp_rows(&lp);
    for (mut row, &norm) in lp.row_iter_mut().zip(&lse) {
        row.apply(|v| *v = (*v - norm).exp());
    }
    let mean_ll = lse.iter().sum::<f64>() / x.ncols() as f64;
    (lp, mean_ll)
}

pub(crate) fn total_log_likelihood(
    components: &[GaussianComponent],
    weights: &[f64],
    x: &DMatrix<f64>,
) -> f64 {
    log_sum_exp_rows(&weighted_log_probs(components, weights, x))
        .iter()
        .sum()
}

/// M-step: weights, means and regularized covariances from responsibilities.
fn m_step(
    x: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    reg_floor: f64,
) -> Result<(Vec<GaussianComponent>, Vec<f64>)> {
    let (d, n) = x.shape();
    let k = resp.ncols();
    let mut components = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for j in 0..k {
        let r = resp.column(j);
        let nk = r.sum() + 10.0 * f64::EPSILON;
        let mean = (x * r) / nk;
        let mut centered = x.clone();
        for (i, mut col) in centered.column_iter_mut().enumerate() {
            col -= &mean;
            col *= r[i].sqrt();
        }
        let mut cov = (&centered * centered.transpose()) / nk;
        cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..d {
            cov[(i, i)] += reg_floor;
        }
        let component = GaussianComponent::new(mean, cov).map_err(|e| {
            Error::Numerical(format!("component {j} singular after regularization: {e}"))
        })?;
        components.push(component);
        weights.push(nk / n as f64);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((components, weights))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd refinement; returns hard assignments.
fn kmeans_assignments(x: &DMatrix<f64>, k: usize, iters: usize, rng: &mut SeededRng) -> Vec<usize> {
    let n = x.ncols();
    let col = |i: usize| x.column(i);
    let mut centers: Vec<Vec<f64>> = vec![col(rng.below(n)).iter().copied().collect()];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(col(i).as_slice(), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.unit() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &dist) in nearest.iter().enumerate() {
                acc += dist;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        let c: Vec<f64> = col(pick).iter().copied().collect();
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(sq_dist(col(i).as_slice(), &c));
        }
        centers.push(c);
    }

    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let p = col(i);
                let mut best = (f64::INFINITY, 0);
                for (j, c) in centers.iter().enumerate() {
                    let dist = sq_dist(p.as_slice(), c);
                    if dist < best.0 {
                        best = (dist, j);
                    }
                }
                best.1
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..iters {
        let d = x.nrows();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(col(i).iter()) {
                *s += v;
            }
        }
        for j in 0..k {
            // empty clusters keep their previous center
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

struct Run {
    components: Vec<GaussianComponent>,
    weights: Vec<f64>,
    info: FitInfo,
}

fn fit_once(
    x: &DMatrix<f64>,
    k: usize,
    seed: u64,
    restart: usize,
    config: &GmmConfig,
    reg_floor: f64,
) -> Result<Run> {
    let mut rng = SeededRng::with_stream(seed, restart as u64);
    let labels = kmeans_assignments(x, k, config.kmeans_iter, &mut rng);
    let mut resp = DMatrix::zeros(x.ncols(), k);
    for (i, &l) in labels.iter().enumerate() {
        resp[(i, l)] = 1.0;
    }
    let (mut components, mut weights) = m_step(x, &resp, reg_floor)?;
    let (mut resp, mut ll) = e_step(&components, &weights, x);
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let (c, w) = m_step(x, &resp, reg_floor)?;
        let (r, next_ll) = e_step(&c, &w, x);
        if !next_ll.is_finite() {
            return Err(Error::Numerical(format!("log-likelihood became {next_ll}")));
        }
        components = c;
        weights = w;
        resp = r;
        history.push(next_ll);
        let gain = next_ll - ll;
        ll = next_ll;
        if gain < config.tol {
            converged = true;
            break;
        }
    }
    debug!("gmm restart {restart}: {iterations} iterations, mean ll {ll:.6}");
    Ok(Run {
        components,
        weights,
        info: FitInfo {
            seed,
            restart,
            iterations,
            converged,
            log_likelihood: ll * x.ncols() as f64,
            reg_floor,
            history,
        },
    })
}

/// Fits a `k`-component full-covariance mixture by EM.
///
/// Each of `config.n_init` restarts is seeded by k-means++ on its own
/// generator stream and runs until the mean log-likelihood gains less than
/// `config.tol` or `config.max_iter` iterations pass. Restarts run in
/// parallel; the one with the highest log-likelihood is kept (ties go to the
/// lowest restart index), so the result depends only on `seed`.
pub fn fit_gmm_em(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    config: &GmmConfig,
) -> Result<GmmModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds the number of points ({})",
            points.len()
        )));
    }
    let x = to_columns(points)?;
    let reg_floor = regularization_floor(&x, config.reg_scale);
    let runs: Vec<Result<Run>> = (0..config.n_init.max(1))
        .into_par_iter()
        .map(|r| fit_once(&x, k, seed, r, config, reg_floor))
        .collect();
    let mut best: Option<Run> = None;
    for run in runs {
        let run = run?;
        if best
            .as_ref()
            .is_none_or(|b| run.info.log_likelihood > b.info.log_likelihood)
        {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    GmmModel::with_fit(best.components, best.weights, best.info)
}

/// Per-point responsibilities (`n x K`); each row sums to one.
pub fn responsibilities(model: &GmmModel, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let x = to_columns(points)?;
    check_dim(model.dim(), x.nrows())?;
    Ok(e_step(model.components(), model.weights(), &x).0)
}

/// `Σ_x log Σ_k π_k N(x; μ_k, Σ_k)`, computed with log-sum-exp.
pub fn log_likelihood(model: &GmmModel, points: &[Vec<f64>]) -> Result<f64> {
    let x = to_columns(points)?;
    check_dim(model.dim(), x.nrows())?;
    Ok(total_log_likelihood(
        model.components(),
        model.weights(),
        &x,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn k1_population_moments() {
        let pts = scalars(&[-1.0, 1.0]);
        let m = fit_gmm_em(&pts, 1, 0, &GmmConfig::default()).unwrap();
        let c = &m.components()[0];
        assert!(c.mean()[0].abs() < 1e-12);
        // variance 1 plus the ridge of 1e-6 * 1
        assert!((c.covariance()[(0, 0)] - 1.0).abs() < 2e-6);
        assert_eq!(m.weights(), &[1.0]);
    }

    #[test]
    fn k1_matches_sample_mean_and_covariance() {
        let mut rng = SeededRng::new(2);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.normal(), 2.0 * rng.normal() + 1.0, rng.normal()])
            .collect();
        let m = fit_gmm_em(&pts, 1, 0, &GmmConfig::default()).unwrap();
        let n = pts.len() as f64;
        let mean: Vec<f64> = (0..3)
            .map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n)
            .collect();
        let floor = m.fit_info().unwrap().reg_floor;
        let c = &m.components()[0];
        for a in 0..3 {
            assert!((c.mean()[a] - mean[a]).abs() < 1e-12);
            for b in 0..3 {
                let s = pts
                    .iter()
                    .map(|p| (p[a] - mean[a]) * (p[b] - mean[b]))
                    .sum::<f64>()
                    / n;
                let expected = s + if a == b { floor } else { 0.0 };
                assert!((c.covariance()[(a, b)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_clusters() {
        let pts = scalars(&[0.0, 0.1, 10.0, 10.1]);
        let m = fit_gmm_em(&pts, 2, 3, &GmmConfig::default()).unwrap();
        let mut means: Vec<(f64, f64)> = m
            .components()
            .iter()
            .zip(m.weights())
            .map(|(c, &w)| (c.mean()[0], w))
            .collect();
        means.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((means[0].0 - 0.05).abs() < 1e-9);
        assert!((means[1].0 - 10.05).abs() < 1e-9);
        assert!((means[0].1 - 0.5).abs() < 1e-9);

        // exhaustive responsibilities at the fixed point are 0/1 to machine precision
        let resp = responsibilities(&m, &pts).unwrap();
        for i in 0..4 {
            let row_max = resp.row(i).max();
            assert!(row_max > 1.0 - 1e-12);
        }
    }

    #[test]
    fn em_is_monotone_and_deterministic() {
        let mut rng = SeededRng::new(8);
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|i| {
                let c = (i % 3) as f64 * 3.0;
                vec![c + rng.normal(), -c + 0.5 * rng.normal()]
            })
            .collect();
        let m = fit_gmm_em(&pts, 3, 11, &GmmConfig::default()).unwrap();
        let hist = &m.fit_info().unwrap().history;
        for w in hist.windows(2) {
            assert!(w[1] - w[0] >= -1e-9, "decrease {}", w[1] - w[0]);
        }
        let again = fit_gmm_em(&pts, 3, 11, &GmmConfig::default()).unwrap();
        assert_eq!(m, again);
        let resp = responsibilities(&m, &pts).unwrap();
        for row in resp.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_k() {
        let pts = scalars(&[1.0, 2.0]);
        assert!(fit_gmm_em(&pts, 3, 0, &GmmConfig::default()).is_err());
        assert!(fit_gmm_em(&pts, 0, 0, &GmmConfig::default()).is_err());
    }

    #[test]
    fn identical_points_stay_finite() {
        let pts = vec![vec![1.0, 1.0]; 10];
        let m = fit_gmm_em(&pts, 2, 0, &GmmConfig::default()).unwrap();
        assert!(m.fit_info().unwrap().log_likelihood.is_finite());
    }

    #[test]
    fn log_likelihood_matches_naive_sum() {
        let mut rng = SeededRng::new(5);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let m = fit_gmm_em(&pts, 2, 1, &GmmConfig::default()).unwrap();
        let naive: f64 = pts
            .iter()
            .map(|p| {
                m.components()
                    .iter()
                    .zip(m.weights())
                    .map(|(c, w)| w * c.log_density(p).unwrap().exp())
                    .sum::<f64>()
                    .ln()
            })
            .sum();
        let ll = log_likelihood(&m, &pts).unwrap();
        assert!((ll - naive).abs() < 1e-9 * naive.abs().max(1.0));
        assert!((ll - m.fit_info().unwrap().log_likelihood).abs() < 1e-9 * ll.abs());
    }
}
