//! Shared autoencoder that maps raw entity embeddings of both domains into
//! one low-dimensional space.
//!
//! Encoder `in → hidden → latent` (relu, linear) and a mirrored decoder are
//! trained jointly on the pooled users and items of both domains by
//! mini-batch Adam on the mean squared reconstruction error
//! `(1/N) Σ ‖e − decode(encode(e))‖²`, with early stopping on a held-out
//! fraction of the pool.

use std::path::Path;

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingTable;
use crate::error::{check_dim, Error, Result};
use crate::io::{read_json, write_json};
use crate::nn::{adam_step, Activation, AdamConfig, AdamState, Mlp, MlpGrads};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    /// Hidden width of encoder and decoder; defaults to the input dimension.
    pub hidden: Option<usize>,
    pub latent: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Fraction of the pool held out for early stopping.
    pub holdout_fraction: f64,
    pub patience: usize,
    pub learning_rate: f64,
    /// The learning rate is multiplied by `lr_decay` after every
    /// `decay_patience` consecutive epochs without improvement.
    pub decay_patience: usize,
    pub lr_decay: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            latent: 128,
            batch_size: 256,
            max_epochs: 200,
            holdout_fraction: 0.1,
            patience: 10,
            learning_rate: 1e-3,
            decay_patience: 4,
            lr_decay: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams {
    encoder: Mlp,
    decoder: Mlp,
}

impl AutoencoderParams {
    pub fn new(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        check_dim(encoder.out_dim(), decoder.in_dim())?;
        check_dim(encoder.in_dim(), decoder.out_dim())?;
        Ok(Self { encoder, decoder })
    }

    pub fn init(input: usize, hidden: usize, latent: usize, rng: &mut SeededRng) -> Result<Self> {
        let acts = [Activation::Relu, Activation::Linear];
        let encoder = Mlp::init(&[input, hidden, latent], &acts, rng)?;
        let decoder = Mlp::init(&[latent, hidden, input], &acts, rng)?;
        Self::new(encoder, decoder)
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params: Self = read_json(path)?;
        Self::new(params.encoder, params.decoder)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderEpoch {
    pub epoch: usize,
    /// Mean reconstruction loss over the epoch's mini-batches.
    pub train_loss: f64,
    pub holdout_loss: f64,
}

/// Training record written next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderManifest {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub train_count: usize,
    pub holdout_count: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    /// Full-pass reconstruction loss of the returned parameters on the
    /// training part of the pool.
    pub final_loss: f64,
    pub best_holdout_loss: f64,
    pub history: Vec<AutoencoderEpoch>,
}

/// Reconstruction loss over the columns of `batch` plus gradients for
/// encoder and decoder.
pub fn reconstruction_loss_and_grads(
    params: &AutoencoderParams,
    batch: &DMatrix<f64>,
) -> Result<(f64, MlpGrads, MlpGrads)> {
    let n = batch.ncols();
    if n == 0 {
        return Err(Error::InvalidArgument("empty reconstruction batch".into()));
    }
    let enc = params.encoder.forward_batch(batch.clone())?;
    let dec = params.decoder.forward_batch(enc.output().clone())?;
    let residual = dec.output() - batch;
    let loss = residual.norm_squared() / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(
            "non-finite reconstruction loss; training diverged".into(),
        ));
    }
    let out_grad = residual * (2.0 / n as f64);
    let (dec_grads, latent_grad) = params.decoder.backward_batch(&dec, &out_grad)?;
    let (enc_grads, _) = params.encoder.backward_batch(&enc, &latent_grad)?;
    Ok((loss, enc_grads, dec_grads))
}

fn batch_loss(params: &AutoencoderParams, batch: &DMatrix<f64>) -> Result<f64> {
    let enc = params.encoder.forward_batch(batch.clone())?;
    let dec = params.decoder.forward_batch(enc.output().clone())?;
    Ok((dec.output() - batch).norm_squared() / batch.ncols() as f64)
}

/// `(1/|batch|) Σ ‖e − decode(encode(e))‖²`.
pub fn reconstruction_loss(params: &AutoencoderParams, batch: &[Vec<f64>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty reconstruction batch".into()));
    }
    let d = params.input_dim();
    for v in batch {
        check_dim(d, v.len())?;
    }
    let m = DMatrix::from_fn(d, batch.len(), |r, c| batch[c][r]);
    batch_loss(params, &m)
}

fn table_columns(table: &EmbeddingTable) -> DMatrix<f64> {
    let data: Vec<f64> = table
        .iter()
        .flat_map(|(_, v)| v.iter().map(|&x| x as f64))
        .collect();
    DMatrix::from_column_slice(table.dim(), table.len(), &data)
}

fn map_table(net: &Mlp, table: &EmbeddingTable) -> Result<EmbeddingTable> {
    check_dim(net.in_dim(), table.dim())?;
    let mut out = EmbeddingTable::new(net.out_dim())?;
    if table.is_empty() {
        return Ok(out);
    }
    let trace = net.forward_batch(table_columns(table))?;
    for ((id, _), col) in table.iter().zip(trace.output().column_iter()) {
        out.insert_f64(id, col.as_slice())?;
    }
    Ok(out)
}

/// Latent codes for every entry of `table`, same ids in the same order.
pub fn encode(params: &AutoencoderParams, table: &EmbeddingTable) -> Result<EmbeddingTable> {
    map_table(&params.encoder, table)
}

/// Reconstructions from latent codes.
pub fn decode(params: &AutoencoderParams, table: &EmbeddingTable) -> Result<EmbeddingTable> {
    map_table(&params.decoder, table)
}

/// Trains the shared autoencoder on the union of `pooled` tables.
///
/// The pool is shuffled once with `seed`; the last `holdout_fraction` of it
/// (rounded down) is held out. Each epoch reshuffles the training part,
/// and the parameters with the lowest holdout loss are returned (training
/// loss when the holdout is empty).
pub fn train_autoencoder(
    pooled: &[&EmbeddingTable],
    config: &AutoencoderConfig,
    seed: u64,
) -> Result<(AutoencoderParams, AutoencoderManifest)> {
    let Some(first) = pooled.first() else {
        return Err(Error::InvalidArgument(
            "no embedding tables to train on".into(),
        ));
    };
    let input = first.dim();
    for t in pooled {
        check_dim(input, t.dim())?;
    }
    let total: usize = pooled.iter().map(|t| t.len()).sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "pooled embedding set is empty".into(),
        ));
    }
    if config.batch_size == 0 || config.latent == 0 {
        return Err(Error::InvalidArgument(
            "batch_size and latent must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(Error::InvalidArgument(format!(
            "holdout_fraction must be in [0, 1), got {}",
            config.holdout_fraction
        )));
    }
    if !(config.lr_decay > 0.0 && config.lr_decay <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "lr_decay must be in (0, 1], got {}",
            config.lr_decay
        )));
    }

    let mut data = DMatrix::zeros(input, total);
    let mut col = 0;
    for t in pooled {
        for (_, v) in t.iter() {
            data.column_mut(col)
                .iter_mut()
                .zip(v)
                .for_each(|(d, &x)| *d = x as f64);
            col += 1;
        }
    }

    let mut rng = SeededRng::new(seed);
    let mut order: Vec<usize> = (0..total).collect();
    rng.shuffle(&mut order);
    let holdout_count = (config.holdout_fraction * total as f64).floor() as usize;
    let holdout_count = holdout_count.min(total - 1);
    let (train_idx, holdout_idx) = order.split_at(total - holdout_count);
    let gather = |idx: &[usize]| DMatrix::from_fn(input, idx.len(), |r, c| data[(r, idx[c])]);
    let train = gather(train_idx);
    let holdout = gather(holdout_idx);
    let mut train_order: Vec<usize> = (0..train.ncols()).collect();

    let hidden = config.hidden.unwrap_or(input);
    let mut params = AutoencoderParams::init(input, hidden, config.latent, &mut rng)?;
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut enc_state = AdamState::new(&params.encoder, adam);
    let mut dec_state = AdamState::new(&params.decoder, adam);
    let monitor = |p: &AutoencoderParams| {
        if holdout.ncols() > 0 {
            batch_loss(p, &holdout)
        } else {
            batch_loss(p, &train)
        }
    };

    let mut best = (monitor(&params)?, 0, params.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut train_order);
        let mut sum = 0.0;
        for chunk in train_order.chunks(config.batch_size) {
            let batch = DMatrix::from_fn(input, chunk.len(), |r, c| train[(r, chunk[c])]);
            let (loss, ge, gd) = reconstruction_loss_and_grads(&params, &batch)?;
            sum += loss * chunk.len() as f64;
            let AutoencoderParams { encoder, decoder } = params;
            let (encoder, s) = adam_step(encoder, &ge, enc_state)?;
            enc_state = s;
            let (decoder, s) = adam_step(decoder, &gd, dec_state)?;
            dec_state = s;
            params = AutoencoderParams { encoder, decoder };
        }
        let train_loss = sum / train.ncols() as f64;
        let holdout_loss = monitor(&params)?;
        if !holdout_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite holdout loss at epoch {epoch}"
            )));
        }
        debug!("autoencoder epoch {epoch}: train {train_loss:.6e}, holdout {holdout_loss:.6e}");
        history.push(AutoencoderEpoch {
            epoch,
            train_loss,
            holdout_loss,
        });
        if holdout_loss < best.0 {
            best = (holdout_loss, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
            if config.decay_patience > 0 && stale % config.decay_patience == 0 {
                enc_state.config.learning_rate *= config.lr_decay;
                dec_state.config.learning_rate *= config.lr_decay;
                debug!(
                    "autoencoder learning rate -> {:.3e}",
                    enc_state.config.learning_rate
                );
            }
        }
    }

    let (best_holdout_loss, best_epoch, params) = best;
    let manifest = AutoencoderManifest {
        input_dim: input,
        hidden_dim: hidden,
        latent_dim: config.latent,
        seed,
        train_count: train.ncols(),
        holdout_count: holdout.ncols(),
        epochs: history.len(),
        best_epoch,
        final_loss: batch_loss(&params, &train)?,
        best_holdout_loss,
        history,
    };
    Ok((params, manifest))
}
