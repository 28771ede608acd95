use std::collections::HashMap;

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{evidence_matrix, rating_loss, DomainModel, RatingBatch};
use crate::data::{EmbeddingTable, InteractionRecord};
use crate::error::{check_dim, Error, Result};
use crate::gmm::GmmModel;
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Mlp};
use crate::rng::SeededRng;

/// Hyperparameters for [`train_domain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTrainConfig {
    /// w-learner hidden width; defaults to the embedding dimension.
    pub hidden: Option<usize>,
    /// r-predictor hidden width; defaults to K.
    pub predictor_hidden: Option<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a valid-RMSE improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    /// Keep every r-predictor weight nonnegative (projected after each
    /// step), making predicted ratings nondecreasing in each component's
    /// weighted evidence.
    pub monotone_predictor: bool,
    /// Independent initializations; the one with the lowest validation
    /// RMSE is kept.
    pub restarts: usize,
}

impl Default for DomainTrainConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            predictor_hidden: None,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            learning_rate: 1e-3,
            monotone_predictor: true,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches.
    pub train_mse: f64,
    pub valid_rmse: f64,
}

/// Metadata stored with a trained [`DomainModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    /// Seed of the kept restart.
    pub seed: u64,
    pub restart: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid_rmse: f64,
    /// Full-pass training MSE of the initial and the returned parameters.
    pub initial_train_mse: f64,
    pub final_train_mse: f64,
    pub history: Vec<EpochStats>,
}

/// Rating examples resolved to column indices of shared user/evidence matrices.
struct Examples {
    users: DMatrix<f64>,
    evidence: DMatrix<f64>,
    pairs: Vec<(usize, usize, f64)>,
}

impl Examples {
    fn resolve(
        users: &EmbeddingTable,
        items: &EmbeddingTable,
        gmm: &GmmModel,
        records: &[InteractionRecord],
    ) -> Result<Self> {
        let mut user_cols: HashMap<&str, usize> = HashMap::new();
        let mut item_cols: HashMap<&str, usize> = HashMap::new();
        let mut user_data = Vec::new();
        let mut item_data = Vec::new();
        let mut pairs = Vec::with_capacity(records.len());
        for r in records {
            let u = match user_cols.get(r.user_id.as_str()) {
                Some(&u) => u,
                None => {
                    let z = users
                        .get_f64(&r.user_id)
                        .ok_or_else(|| Error::Data(format!("unknown user id {:?}", r.user_id)))?;
                    user_data.extend(z);
                    user_cols.insert(&r.user_id, user_cols.len());
                    user_cols.len() - 1
                }
            };
            let v = match item_cols.get(r.item_id.as_str()) {
                Some(&v) => v,
                None => {
                    let z = items
                        .get_f64(&r.item_id)
                        .ok_or_else(|| Error::Data(format!("unknown item id {:?}", r.item_id)))?;
                    item_data.extend(z);
                    item_cols.insert(&r.item_id, item_cols.len());
                    item_cols.len() - 1
                }
            };
            pairs.push((u, v, r.rating));
        }
        let d = users.dim();
        let users = DMatrix::from_column_slice(d, user_cols.len(), &user_data);
        let items = DMatrix::from_column_slice(d, item_cols.len(), &item_data);
        let evidence = evidence_matrix(gmm, &items)?;
        Ok(Self {
            users,
            evidence,
            pairs,
        })
    }

    fn batch(&self, indices: &[usize]) -> RatingBatch {
        let users = DMatrix::from_fn(self.users.nrows(), indices.len(), |r, c| {
            self.users[(r, self.pairs[indices[c]].0)]
        });
        let evidence = DMatrix::from_fn(self.evidence.nrows(), indices.len(), |r, c| {
            self.evidence[(r, self.pairs[indices[c]].1)]
        });
        let ratings = indices.iter().map(|&i| self.pairs[i].2).collect();
        RatingBatch {
            users,
            evidence,
            ratings,
        }
    }

    fn all(&self) -> RatingBatch {
        self.batch(&(0..self.pairs.len()).collect::<Vec<_>>())
    }

    /// RMSE of clamped predictions.
    fn rmse(&self, w_learner: &Mlp, r_predictor: &Mlp, bounds: (f64, f64)) -> Result<f64> {
        let batch = self.all();
        let weights = w_learner.forward_batch(batch.users)?;
        let features = weights.output().component_mul(&batch.evidence);
        let preds = r_predictor.forward_batch(features)?;
        let sse: f64 = preds
            .output()
            .iter()
            .zip(&batch.ratings)
            .map(|(p, y)| (p.clamp(bounds.0, bounds.1) - y).powi(2))
            .sum();
        Ok((sse / batch.ratings.len() as f64).sqrt())
    }
}

fn project_nonnegative(mlp: &mut Mlp) {
    for layer in mlp.layers_mut() {
        layer.weights.apply(|w| *w = w.max(0.0));
    }
}

/// Trains one domain's w-learner and r-predictor on `train` by mini-batch
/// Adam over the unclamped mean squared rating error, keeping the mixture
/// fixed.
///
/// After every epoch the clamped RMSE on `valid` is measured; the parameters
/// with the lowest value are returned, and training stops after `patience`
/// epochs without improvement. With an empty `valid` the training RMSE is
/// used instead. The r-predictor's output bias starts at the mean training
/// rating.
///
/// With `restarts > 1` further runs start from seeds derived from `seed`
/// (restart 0 uses `seed` itself) and the run with the lowest validation
/// RMSE wins, ties going to the earlier restart.
pub fn train_domain(
    users: &EmbeddingTable,
    items: &EmbeddingTable,
    gmm: GmmModel,
    train: &[InteractionRecord],
    valid: &[InteractionRecord],
    config: &DomainTrainConfig,
    seed: u64,
) -> Result<DomainModel> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be positive".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    check_dim(gmm.dim(), users.dim())?;
    check_dim(gmm.dim(), items.dim())?;
    let train_set = Examples::resolve(users, items, &gmm, train)?;
    let valid_set = if valid.is_empty() {
        warn!("no validation interactions; early stopping on training RMSE");
        None
    } else {
        Some(Examples::resolve(users, items, &gmm, valid)?)
    };

    let runs: Vec<Result<Run>> = (0..config.restarts)
        .into_par_iter()
        .map(|restart| {
            let seed = restart_seed(seed, restart);
            train_once(&train_set, valid_set.as_ref(), &gmm, train, config, seed)
        })
        .collect();
    let mut kept: Option<(usize, Run)> = None;
    for (restart, run) in runs.into_iter().enumerate() {
        let run = run?;
        debug!(
            "restart {restart}: best valid rmse {:.6}",
            run.info.best_valid_rmse
        );
        if kept
            .as_ref()
            .is_none_or(|(_, k)| run.info.best_valid_rmse < k.info.best_valid_rmse)
        {
            kept = Some((restart, run));
        }
    }
    let (restart, run) = kept.expect("at least one restart");
    let info = TrainingInfo {
        restart,
        ..run.info
    };
    Ok(DomainModel::new(gmm, run.w_learner, run.r_predictor)?.with_training(info))
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    if restart == 0 {
        seed
    } else {
        SeededRng::new(seed ^ restart as u64).next_u64()
    }
}

struct Run {
    w_learner: Mlp,
    r_predictor: Mlp,
    info: TrainingInfo,
}

fn train_once(
    train_set: &Examples,
    valid_set: Option<&Examples>,
    gmm: &GmmModel,
    train: &[InteractionRecord],
    config: &DomainTrainConfig,
    seed: u64,
) -> Result<Run> {
    let (d, k) = (gmm.dim(), gmm.k());
    let mut rng = SeededRng::new(seed);
    let hidden = config.hidden.unwrap_or(d);
    let predictor_hidden = config.predictor_hidden.unwrap_or(k);
    let mut w_learner = Mlp::init(
        &[d, hidden, k],
        &[Activation::Relu, Activation::Softmax],
        &mut rng,
    )?;
    let mut r_predictor = Mlp::init(
        &[k, predictor_hidden, 1],
        &[Activation::Relu, Activation::Linear],
        &mut rng,
    )?;
    // Features are nonnegative, so nonnegative weights make the predictor
    // nondecreasing in every component's weighted evidence: more weight on a
    // component means a higher rating for its items. Without this each
    // domain picks its own encoding (a component may come to mean "dislike"
    // in one domain and "like" in the other), and transferred weights are
    // read with the wrong meaning.
    if config.monotone_predictor {
        for layer in r_predictor.layers_mut() {
            layer.weights.apply(|w| *w = w.abs());
        }
    }
    let mean_rating = train.iter().map(|r| r.rating).sum::<f64>() / train.len() as f64;
    r_predictor.layers_mut().last_mut().unwrap().bias[0] = mean_rating;

    let model = DomainModel::new(gmm.clone(), w_learner.clone(), r_predictor.clone())?;
    let bounds = model.rating_bounds();
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut w_state = AdamState::new(&w_learner, adam);
    let mut r_state = AdamState::new(&r_predictor, adam);

    let full = train_set.all();
    let initial_train_mse = rating_loss(&w_learner, &r_predictor, &full)?.0;
    let eval = |w: &Mlp, r: &Mlp| match valid_set {
        Some(v) => v.rmse(w, r, bounds),
        None => train_set.rmse(w, r, bounds),
    };
    let mut best = (
        eval(&w_learner, &r_predictor)?,
        0,
        w_learner.clone(),
        r_predictor.clone(),
    );
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.pairs.len()).collect();
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train_set.batch(chunk);
            let (loss, gw, gr) = rating_loss(&w_learner, &r_predictor, &batch)?;
            total += loss * chunk.len() as f64;
            (w_learner, w_state) = adam_step(w_learner, &gw, w_state)?;
            (r_predictor, r_state) = adam_step(r_predictor, &gr, r_state)?;
            if config.monotone_predictor {
                project_nonnegative(&mut r_predictor);
            }
        }
        let train_mse = total / order.len() as f64;
        let valid_rmse = eval(&w_learner, &r_predictor)?;
        if !valid_rmse.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation RMSE at epoch {epoch}"
            )));
        }
        debug!("epoch {epoch}: train mse {train_mse:.6}, valid rmse {valid_rmse:.6}");
        history.push(EpochStats {
            epoch,
            train_mse,
            valid_rmse,
        });
        if valid_rmse < best.0 {
            best = (valid_rmse, epoch, w_learner.clone(), r_predictor.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (best_valid_rmse, best_epoch, w_learner, r_predictor) = best;
    let final_train_mse = rating_loss(&w_learner, &r_predictor, &full)?.0;
    let info = TrainingInfo {
        seed,
        restart: 0,
        epochs: history.len(),
        best_epoch,
        best_valid_rmse,
        initial_train_mse,
        final_train_mse,
        history,
    };
    Ok(Run {
        w_learner,
        r_predictor,
        info,
    })
}
