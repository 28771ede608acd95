use serde::{Deserialize, Serialize};

use super::{fit_gmm_em, parameter_count, GmmConfig, GmmModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicScore {
    pub k: usize,
    pub log_likelihood: f64,
    pub bic: f64,
}

#[derive(Debug, Clone)]
pub struct BicSelection {
    pub k: usize,
    pub model: GmmModel,
    /// One entry per candidate, in candidate order.
    pub scores: Vec<BicScore>,
}

/// `-2 logL + p ln n` for a full-covariance mixture.
pub fn bic(log_likelihood: f64, k: usize, dim: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + parameter_count(k, dim) as f64 * (n as f64).ln()
}

/// Fits every candidate component count and keeps the lowest BIC.
///
/// Ties go to the smaller K.
pub fn select_k_bic(
    points: &[Vec<f64>],
    candidate_ks: &[usize],
    seed: u64,
    config: &GmmConfig,
) -> Result<BicSelection> {
    if candidate_ks.is_empty() {
        return Err(Error::InvalidArgument(
            "no candidate component counts".into(),
        ));
    }
    if let Some(&k) = candidate_ks.iter().find(|&&k| k == 0 || k > points.len()) {
        return Err(Error::InvalidArgument(format!(
            "candidate K = {k} is outside 1..={}",
            points.len()
        )));
    }
    let mut scores = Vec::with_capacity(candidate_ks.len());
    let mut best: Option<(f64, GmmModel)> = None;
    for &k in candidate_ks {
        let model = fit_gmm_em(points, k, seed, config)?;
        let ll = model.fit_info().expect("fitted model").log_likelihood;
        let score = bic(ll, k, model.dim(), points.len());
        scores.push(BicScore {
            k,
            log_likelihood: ll,
            bic: score,
        });
        let better = match &best {
            None => true,
            Some((b, m)) => score < *b || (score == *b && k < m.k()),
        };
        if better {
            best = Some((score, model));
        }
    }
    let (_, model) = best.expect("non-empty candidates");
    Ok(BicSelection {
        k: model.k(),
        model,
        scores,
    })
}
