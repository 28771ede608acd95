use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PreferenceWeights, TrainingInfo};
use crate::data::{MAX_RATING, MIN_RATING};
use crate::error::{check_dim, Error, Result};
use crate::gmm::GmmModel;
use crate::io::{read_json, write_json};
use crate::nn::{Activation, Mlp, MlpGrads};

/// Bundle file inside a domain model directory.
pub const BUNDLE_FILE: &str = "bundle.json";
const GMM_FILE: &str = "gmm.json";
const W_LEARNER_FILE: &str = "w_learner.json";
const R_PREDICTOR_FILE: &str = "r_predictor.json";

/// One domain's frozen mixture plus the two trained networks.
///
/// The w-learner maps a user embedding to simplex weights over the mixture's
/// components; the r-predictor maps the weighted component evidence of an
/// item (see [`feature_vector`]) to a rating.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainModel {
    gmm: GmmModel,
    w_learner: Mlp,
    r_predictor: Mlp,
    rating_bounds: (f64, f64),
    training: Option<TrainingInfo>,
}

impl DomainModel {
    pub fn new(gmm: GmmModel, w_learner: Mlp, r_predictor: Mlp) -> Result<Self> {
        check_dim(gmm.dim(), w_learner.in_dim())?;
        check_dim(gmm.k(), w_learner.out_dim())?;
        check_dim(gmm.k(), r_predictor.in_dim())?;
        check_dim(1, r_predictor.out_dim())?;
        if w_learner.layers().last().map(|l| l.activation) != Some(Activation::Softmax) {
            return Err(Error::InvalidArgument(
                "w-learner must end in a softmax layer".into(),
            ));
        }
        Ok(Self {
            gmm,
            w_learner,
            r_predictor,
            rating_bounds: (MIN_RATING, MAX_RATING),
            training: None,
        })
    }

    pub(crate) fn with_training(mut self, info: TrainingInfo) -> Self {
        self.training = Some(info);
        self
    }

    pub fn k(&self) -> usize {
        self.gmm.k()
    }

    pub fn dim(&self) -> usize {
        self.gmm.dim()
    }

    pub fn gmm(&self) -> &GmmModel {
        &self.gmm
    }

    pub fn w_learner(&self) -> &Mlp {
        &self.w_learner
    }

    pub fn r_predictor(&self) -> &Mlp {
        &self.r_predictor
    }

    pub fn rating_bounds(&self) -> (f64, f64) {
        self.rating_bounds
    }

    pub fn training_info(&self) -> Option<&TrainingInfo> {
        self.training.as_ref()
    }

    /// Softmax output of the w-learner for user embedding `z_u`.
    pub fn user_weights(&self, z_u: &[f64]) -> Result<PreferenceWeights> {
        PreferenceWeights::new(self.w_learner.forward(z_u)?)
    }

    /// r-predictor output without clamping to the rating scale.
    pub fn predict_unclamped(&self, w: &PreferenceWeights, z_v: &[f64]) -> Result<f64> {
        let features = feature_vector(w, &self.gmm, z_v)?;
        Ok(self.r_predictor.forward(&features)?[0])
    }

    /// Predicted rating of an item for a user with weights `w`, clamped to
    /// the rating scale.
    pub fn predict_rating(&self, w: &PreferenceWeights, z_v: &[f64]) -> Result<f64> {
        let (lo, hi) = self.rating_bounds;
        Ok(self.predict_unclamped(w, z_v)?.clamp(lo, hi))
    }

    /// Writes `bundle.json` plus the mixture and both networks into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io::create_dir(dir)?;
        self.gmm.save(&dir.join(GMM_FILE))?;
        write_json(&dir.join(W_LEARNER_FILE), &self.w_learner)?;
        write_json(&dir.join(R_PREDICTOR_FILE), &self.r_predictor)?;
        let bundle = Bundle {
            gmm: GMM_FILE.into(),
            w_learner: W_LEARNER_FILE.into(),
            r_predictor: R_PREDICTOR_FILE.into(),
            rating_bounds: self.rating_bounds,
            training: self.training.clone(),
        };
        write_json(&dir.join(BUNDLE_FILE), &bundle)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bundle: Bundle = read_json(&dir.join(BUNDLE_FILE))?;
        let gmm = GmmModel::load(&dir.join(&bundle.gmm))?;
        let w_learner = read_json(&dir.join(&bundle.w_learner))?;
        let r_predictor = read_json(&dir.join(&bundle.r_predictor))?;
        let mut model = Self::new(gmm, w_learner, r_predictor)?;
        let (lo, hi) = bundle.rating_bounds;
        if !(lo < hi) {
            return Err(Error::Data(format!("invalid rating bounds ({lo}, {hi})")));
        }
        model.rating_bounds = bundle.rating_bounds;
        model.training = bundle.training;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    gmm: String,
    w_learner: String,
    r_predictor: String,
    rating_bounds: (f64, f64),
    training: Option<TrainingInfo>,
}

/// Max-normalized component evidence of one item: `exp(L_k − max_j L_j)`
/// with `L_k` the item's log-density under component `k`.
pub fn item_evidence(gmm: &GmmModel, z_v: &[f64]) -> Result<Vec<f64>> {
    check_dim(gmm.dim(), z_v.len())?;
    if z_v.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite item embedding".into()));
    }
    let mut ld = gmm.component_log_densities(z_v)?;
    normalize_evidence(&mut ld);
    Ok(ld)
}

fn normalize_evidence(ld: &mut [f64]) {
    let max = ld.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ld.iter_mut().for_each(|l| *l = (*l - max).exp());
}

/// [`item_evidence`] for every column of `points` (`d x n`), giving `K x n`.
pub fn evidence_matrix(gmm: &GmmModel, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(gmm.dim(), points.nrows())?;
    let rows: Vec<Vec<f64>> = gmm
        .components()
        .par_iter()
        .map(|c| {
            c.mahalanobis_columns(points)
                .into_iter()
                .map(|m| c.log_density_from_mahalanobis(m))
                .collect()
        })
        .collect();
    let mut out = DMatrix::from_fn(gmm.k(), points.ncols(), |k, j| rows[k][j]);
    for mut col in out.column_iter_mut() {
        normalize_evidence(col.as_mut_slice());
    }
    Ok(out)
}

/// r-predictor input for user weights `w` and item `z_v`:
/// `w_k · exp(L_k − max_j L_j)`.
pub fn feature_vector(w: &PreferenceWeights, gmm: &GmmModel, z_v: &[f64]) -> Result<Vec<f64>> {
    check_dim(gmm.k(), w.len())?;
    let mut evidence = item_evidence(gmm, z_v)?;
    evidence
        .iter_mut()
        .zip(w.as_slice())
        .for_each(|(e, w)| *e *= w);
    Ok(evidence)
}

/// Training examples in column layout: user embeddings (`d x B`), item
/// evidence (`K x B`, see [`evidence_matrix`]) and target ratings.
#[derive(Debug, Clone)]
pub struct RatingBatch {
    pub users: DMatrix<f64>,
    pub evidence: DMatrix<f64>,
    pub ratings: Vec<f64>,
}

/// Mean squared rating error over `batch` and its gradients with respect to
/// the w-learner and r-predictor parameters (mixture held fixed, no clamp).
pub fn rating_loss(
    w_learner: &Mlp,
    r_predictor: &Mlp,
    batch: &RatingBatch,
) -> Result<(f64, MlpGrads, MlpGrads)> {
    let n = batch.ratings.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty rating batch".into()));
    }
    check_dim(n, batch.users.ncols())?;
    check_dim(n, batch.evidence.ncols())?;
    check_dim(r_predictor.in_dim(), batch.evidence.nrows())?;

    let w_trace = w_learner.forward_batch(batch.users.clone())?;
    let weights = w_trace.output();
    let features = weights.component_mul(&batch.evidence);
    let r_trace = r_predictor.forward_batch(features)?;
    let preds = r_trace.output();

    let mut loss = 0.0;
    let mut out_grad = DMatrix::zeros(1, n);
    for (j, &y) in batch.ratings.iter().enumerate() {
        let err = preds[(0, j)] - y;
        loss += err * err;
        out_grad[(0, j)] = 2.0 * err / n as f64;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(
            "non-finite rating loss; training diverged".into(),
        ));
    }

    let (r_grads, feature_grad) = r_predictor.backward_batch(&r_trace, &out_grad)?;
    let weight_grad = feature_grad.component_mul(&batch.evidence);
    let (w_grads, _) = w_learner.backward_batch(&w_trace, &weight_grad)?;
    Ok((loss, w_grads, r_grads))
}
