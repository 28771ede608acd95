use std::collections::HashMap;
use std::path::Path;

use log::info;
use serde::Serialize;

use super::config::{GmmSelection, PipelineConfig};
use super::layout::{ArtifactLayout, Domain};
use super::metrics::{evaluate, read_predictions, write_predictions, EvalReport, Prediction};
use crate::autoencoder::{encode, train_autoencoder, AutoencoderParams};
use crate::data::{
    filter_min_interactions, load_embeddings, make_cross_domain_split, read_interactions,
    save_embeddings, CrossDomainSplit, DomainDataset, EmbeddingTable, InteractionRecord,
    SPLIT_MANIFEST,
};
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm_em, select_k_bic, BicScore, GmmModel};
use crate::io::{create_dir, read_json, write_json};
use crate::preference::{train_domain, DomainModel, PreferenceWeights, BUNDLE_FILE};
use crate::rng::SeededRng;
use crate::transport::{cost_matrix, default_epsilon, sinkhorn, transfer_weights, TransportPlan};

/// Per-stage seeds derived from the configured seed so that stages draw
/// independent streams: split `seed`, autoencoder `seed + 1`, mixtures
/// `seed + 2` (source) / `seed + 3` (target), domain training `seed + 4` /
/// `seed + 5`, source validation holdout `seed + 6`.
fn stage_seed(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(offset)
}

fn domain_offset(domain: Domain) -> u64 {
    match domain {
        Domain::Source => 0,
        Domain::Target => 1,
    }
}

fn require(path: &Path, produced_by: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_owned(),
            produced_by,
        })
    }
}

fn require_input(path: &Path, key: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "`{key}`: input file not found: {}",
            path.display()
        )))
    }
}

fn parent_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => create_dir(dir),
        None => Ok(()),
    }
}

fn layout(config: &PipelineConfig) -> ArtifactLayout {
    ArtifactLayout::new(&config.artifacts)
}

fn raw_tables(config: &PipelineConfig, domain: Domain) -> Result<(EmbeddingTable, EmbeddingTable)> {
    let paths = config.domain_paths(domain);
    require_input(&paths.users, &format!("{domain}.users"))?;
    require_input(&paths.items, &format!("{domain}.items"))?;
    Ok((
        load_embeddings(&paths.users)?,
        load_embeddings(&paths.items)?,
    ))
}

fn domain_dataset(config: &PipelineConfig, domain: Domain) -> Result<DomainDataset> {
    let paths = config.domain_paths(domain);
    require_input(&paths.interactions, &format!("{domain}.interactions"))?;
    let (users, items) = raw_tables(config, domain)?;
    let records = read_interactions(&paths.interactions)?;
    let records = filter_min_interactions(&records, config.min_interactions);
    DomainDataset::new(users, items, records)
}

/// Builds and writes the cross-domain train/valid/test split.
pub fn cmd_split(config: &PipelineConfig) -> Result<CrossDomainSplit> {
    let source = domain_dataset(config, Domain::Source)?;
    let target = domain_dataset(config, Domain::Target)?;
    let split = make_cross_domain_split(&source, &target, config.seed)?;
    let dir = layout(config).split_dir();
    split.save(&dir)?;
    let m = split.manifest();
    info!(
        "split: {} overlapping users; train {}+{}, valid {}, test {} -> {}",
        m.overlapping_users,
        m.train_source,
        m.train_target,
        m.valid,
        m.test,
        dir.display()
    );
    Ok(split)
}

/// Trains the shared autoencoder on all four raw tables, then encodes them.
pub fn cmd_train_ae(config: &PipelineConfig) -> Result<()> {
    let (su, si) = raw_tables(config, Domain::Source)?;
    let (tu, ti) = raw_tables(config, Domain::Target)?;
    let (params, manifest) = train_autoencoder(
        &[&su, &si, &tu, &ti],
        &config.autoencoder,
        stage_seed(config.seed, 1),
    )?;
    let layout = layout(config);
    parent_dir(&layout.autoencoder_params())?;
    params.save(&layout.autoencoder_params())?;
    write_json(&layout.autoencoder_manifest(), &manifest)?;
    info!(
        "autoencoder {}->{}->{}: {} epochs, final loss {:.6e}",
        manifest.input_dim,
        manifest.hidden_dim,
        manifest.latent_dim,
        manifest.epochs,
        manifest.final_loss
    );
    cmd_encode(config)
}

/// Encodes both domains' raw tables with the trained autoencoder.
pub fn cmd_encode(config: &PipelineConfig) -> Result<()> {
    let layout = layout(config);
    require(&layout.autoencoder_params(), "train-ae")?;
    let params = AutoencoderParams::load(&layout.autoencoder_params())?;
    for domain in Domain::BOTH {
        let (users, items) = raw_tables(config, domain)?;
        for (table, path) in [
            (users, layout.encoded_users(domain)),
            (items, layout.encoded_items(domain)),
        ] {
            let codes = encode(&params, &table)?;
            parent_dir(&path)?;
            save_embeddings(&codes, &path)?;
        }
    }
    info!(
        "encoded tables written to {}",
        layout.root().join("encoded").display()
    );
    Ok(())
}

fn encoded(layout: &ArtifactLayout, domain: Domain) -> Result<(EmbeddingTable, EmbeddingTable)> {
    let (users, items) = (layout.encoded_users(domain), layout.encoded_items(domain));
    require(&users, "train-ae")?;
    require(&items, "train-ae")?;
    Ok((load_embeddings(&users)?, load_embeddings(&items)?))
}

#[derive(Serialize)]
struct BicReport<'a> {
    selected_k: usize,
    scores: &'a [BicScore],
}

/// Fits the domain's mixture on its encoded item embeddings.
pub fn cmd_fit_gmm(config: &PipelineConfig, domain: Domain) -> Result<GmmModel> {
    let layout = layout(config);
    let items_path = layout.encoded_items(domain);
    require(&items_path, "train-ae")?;
    let items = load_embeddings(&items_path)?;
    let points: Vec<Vec<f64>> = items
        .iter()
        .map(|(_, v)| v.iter().map(|&x| x as f64).collect())
        .collect();
    let seed = stage_seed(config.seed, 2 + domain_offset(domain));
    let model = match &config.gmm {
        GmmSelection::Fixed(k) => fit_gmm_em(&points, *k, seed, &config.gmm_fit)?,
        GmmSelection::Bic(candidates) => {
            let sel = select_k_bic(&points, candidates, seed, &config.gmm_fit)?;
            parent_dir(&layout.gmm_bic(domain))?;
            write_json(
                &layout.gmm_bic(domain),
                &BicReport {
                    selected_k: sel.k,
                    scores: &sel.scores,
                },
            )?;
            info!("{domain}: BIC selected K = {}", sel.k);
            sel.model
        }
    };
    parent_dir(&layout.gmm(domain))?;
    model.save(&layout.gmm(domain))?;
    info!(
        "{domain}: fitted {} components on {} items",
        model.k(),
        points.len()
    );
    Ok(model)
}

fn load_split(layout: &ArtifactLayout) -> Result<CrossDomainSplit> {
    let dir = layout.split_dir();
    require(&dir.join(SPLIT_MANIFEST), "split")?;
    CrossDomainSplit::load(&dir)
}

/// Deterministic train/valid carve of the source training interactions.
fn source_holdout(
    records: &[InteractionRecord],
    fraction: f64,
    seed: u64,
) -> (Vec<InteractionRecord>, Vec<InteractionRecord>) {
    let n = records.len();
    let n_valid = ((fraction * n as f64).floor() as usize).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut is_valid = vec![false; n];
    order[..n_valid].iter().for_each(|&i| is_valid[i] = true);
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (r, v) in records.iter().zip(is_valid) {
        if v {
            valid.push(r.clone())
        } else {
            train.push(r.clone())
        }
    }
    (train, valid)
}

/// Trains the domain's w-learner and r-predictor.
///
/// The target domain uses the split's target training and validation
/// interactions; the source domain holds out `source_valid_fraction` of its
/// training interactions for early stopping.
pub fn cmd_train_domain(config: &PipelineConfig, domain: Domain) -> Result<DomainModel> {
    let layout = layout(config);
    let split = load_split(&layout)?;
    let (users, items) = encoded(&layout, domain)?;
    require(&layout.gmm(domain), "fit-gmm")?;
    let gmm = GmmModel::load(&layout.gmm(domain))?;
    let (train, valid) = match domain {
        Domain::Target => (split.train_target, split.valid),
        Domain::Source => source_holdout(
            &split.train_source,
            config.source_valid_fraction,
            stage_seed(config.seed, 6),
        ),
    };
    let seed = stage_seed(config.seed, 4 + domain_offset(domain));
    let model = train_domain(
        &users,
        &items,
        gmm,
        &train,
        &valid,
        config.train_config(domain),
        seed,
    )?;
    model.save(&layout.domain_dir(domain))?;
    if let Some(t) = model.training_info() {
        info!(
            "{domain}: {} epochs, best valid RMSE {:.4} at epoch {}",
            t.epochs, t.best_valid_rmse, t.best_epoch
        );
    }
    Ok(model)
}

/// Computes the W2 cost between the two mixtures and solves for the plan.
pub fn cmd_transport(config: &PipelineConfig) -> Result<TransportPlan> {
    let layout = layout(config);
    for domain in Domain::BOTH {
        require(&layout.gmm(domain), "fit-gmm")?;
    }
    let gs = GmmModel::load(&layout.gmm(Domain::Source))?;
    let gt = GmmModel::load(&layout.gmm(Domain::Target))?;
    let cost = cost_matrix(&gs, &gt)?;
    let epsilon = config
        .sinkhorn
        .epsilon
        .unwrap_or_else(|| default_epsilon(&cost));
    let plan = sinkhorn(
        &cost,
        epsilon,
        config.sinkhorn.max_iter,
        config.sinkhorn.tol,
    )?;
    parent_dir(&layout.cost())?;
    write_json(&layout.cost(), &cost)?;
    write_json(&layout.plan(), &plan)?;
    info!(
        "transport {}x{}: epsilon {:.4e}, {} iterations, marginal error {:.3e}",
        cost.rows(),
        cost.cols(),
        epsilon,
        plan.iterations,
        plan.marginal_error
    );
    Ok(plan)
}

/// Rating of target item `z_v` for a user with source embedding `z_u`:
/// source weights, carried through `plan`, scored by the target model.
pub fn predict_transfer(
    source: &DomainModel,
    target: &DomainModel,
    plan: &TransportPlan,
    z_u: &[f64],
    z_v: &[f64],
) -> Result<f64> {
    let w_t = transfer_weights(&source.user_weights(z_u)?, plan)?;
    target.predict_rating(&w_t, z_v)
}

/// Scores every test interaction and writes `predictions.csv`.
pub fn cmd_predict(config: &PipelineConfig) -> Result<Vec<Prediction>> {
    let layout = layout(config);
    for domain in Domain::BOTH {
        require(&layout.domain_dir(domain).join(BUNDLE_FILE), "train-domain")?;
    }
    require(&layout.plan(), "transport")?;
    let split = load_split(&layout)?;
    let (source_users, _) = encoded(&layout, Domain::Source)?;
    let (_, target_items) = encoded(&layout, Domain::Target)?;
    let source = DomainModel::load(&layout.domain_dir(Domain::Source))?;
    let target = DomainModel::load(&layout.domain_dir(Domain::Target))?;
    let plan: TransportPlan = read_json(&layout.plan())?;
    if plan.rows() != source.k() || plan.cols() != target.k() {
        return Err(Error::Data(format!(
            "transport plan is {}x{} but the domain models have {} and {} components; rerun transport",
            plan.rows(),
            plan.cols(),
            source.k(),
            target.k()
        )));
    }

    let mut transferred: HashMap<&str, PreferenceWeights> = HashMap::new();
    let mut rows = Vec::with_capacity(split.test.len());
    for r in &split.test {
        let w_t = match transferred.get(r.user_id.as_str()) {
            Some(w) => w.clone(),
            None => {
                let z_u = source_users.get_f64(&r.user_id).ok_or_else(|| {
                    Error::Data(format!("user {:?} has no source embedding", r.user_id))
                })?;
                let w = transfer_weights(&source.user_weights(&z_u)?, &plan)?;
                transferred.insert(&r.user_id, w.clone());
                w
            }
        };
        let z_v = target_items
            .get_f64(&r.item_id)
            .ok_or_else(|| Error::Data(format!("item {:?} has no target embedding", r.item_id)))?;
        rows.push(Prediction {
            user_id: r.user_id.clone(),
            item_id: r.item_id.clone(),
            rating: r.rating,
            prediction: target.predict_rating(&w_t, &z_v)?,
        });
    }
    write_predictions(&rows, &layout.predictions())?;
    info!(
        "wrote {} predictions to {}",
        rows.len(),
        layout.predictions().display()
    );
    Ok(rows)
}

/// RMSE/MAE of `predictions.csv` against the split's test interactions.
pub fn cmd_evaluate(config: &PipelineConfig) -> Result<EvalReport> {
    let layout = layout(config);
    require(&layout.predictions(), "predict")?;
    let split = load_split(&layout)?;
    let report = evaluate(&read_predictions(&layout.predictions())?, &split.test)?;
    write_json(&layout.eval(), &report)?;
    info!(
        "RMSE {:.4}, MAE {:.4} over {} interactions",
        report.rmse, report.mae, report.count
    );
    Ok(report)
}

/// Every stage in order: split, train-ae (with encode), fit-gmm and
/// train-domain for both domains, transport, predict, evaluate.
pub fn run_all(config: &PipelineConfig) -> Result<EvalReport> {
    cmd_split(config)?;
    cmd_train_ae(config)?;
    for domain in Domain::BOTH {
        cmd_fit_gmm(config, domain)?;
    }
    for domain in Domain::BOTH {
        cmd_train_domain(config, domain)?;
    }
    cmd_transport(config)?;
    cmd_predict(config)?;
    cmd_evaluate(config)
}
