//! Synthetic two-domain corpus shared by the pipeline-level tests.
//!
//! Items of both domains are drawn from the same `clusters` Gaussian blobs;
//! target-domain embeddings (items and users) are additionally rotated by a
//! fixed small rotation. Each user has a latent preference vector over the
//! clusters; a user's embedding is the preference-weighted mix of cluster
//! centres plus noise, and a rating is `1 + 4 * pref[cluster(item)]` plus
//! noise, clipped to the scale.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dupot::data::{save_embeddings, write_interactions, EmbeddingTable, InteractionRecord};
use dupot::rng::SeededRng;

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dim: usize,
    pub clusters: usize,
    pub users: usize,
    pub items_per_cluster: usize,
    pub source_per_user: usize,
    pub target_per_user: usize,
    /// Rotation angle applied in each coordinate plane of the target domain.
    pub angle: f64,
    /// Preference mass on a user's favourite cluster; the rest is spread
    /// evenly over the others.
    pub favourite: f64,
    pub center_scale: f64,
    pub item_noise: f64,
    pub user_noise: f64,
    pub rating_noise: f64,
}

impl Default for Synthetic {
    fn default() -> Self {
        Self {
            dim: 16,
            clusters: 4,
            users: 300,
            items_per_cluster: 60,
            source_per_user: 30,
            target_per_user: 10,
            angle: 0.15,
            favourite: 0.85,
            center_scale: 3.0,
            item_noise: 1.0,
            user_noise: 0.5,
            rating_noise: 0.25,
        }
    }
}

/// Rotation by `angle` in the coordinate planes (0,1), (2,3), ...
fn rotate(x: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let mut y = x.to_vec();
    for p in (0..x.len() - 1).step_by(2) {
        y[p] = c * x[p] - s * x[p + 1];
        y[p + 1] = s * x[p] + c * x[p + 1];
    }
    y
}

fn noisy(rng: &mut SeededRng, mean: &[f64], sd: f64) -> Vec<f64> {
    mean.iter().map(|m| m + sd * rng.normal()).collect()
}

pub struct Corpus {
    pub config: PathBuf,
}

impl Synthetic {
    /// Writes `{source,target}/{users,items}.dupe`, `{source,target}/ratings.csv`
    /// and `pipeline.conf` (with `extra` appended) under `dir`.
    pub fn write(&self, dir: &Path, seed: u64, extra: &str) -> Corpus {
        let mut rng = SeededRng::new(seed);
        let centers: Vec<Vec<f64>> = (0..self.clusters)
            .map(|_| {
                (0..self.dim)
                    .map(|_| self.center_scale * rng.normal())
                    .collect()
            })
            .collect();
        let prefs: Vec<Vec<f64>> = (0..self.users)
            .map(|_| {
                let k = self.clusters;
                let mut p = vec![(1.0 - self.favourite) / (k - 1) as f64; k];
                p[rng.below(k)] = self.favourite;
                p
            })
            .collect();

        for (domain, angle, per_user) in [
            ("source", 0.0, self.source_per_user),
            ("target", self.angle, self.target_per_user),
        ] {
            let ddir = dir.join(domain);
            std::fs::create_dir_all(&ddir).unwrap();
            let mut items = EmbeddingTable::new(self.dim).unwrap();
            let mut cluster_of = Vec::new();
            for k in 0..self.clusters {
                for j in 0..self.items_per_cluster {
                    let x = noisy(&mut rng, &centers[k], self.item_noise);
                    items
                        .insert_f64(format!("{domain}_i{k}_{j}"), &rotate(&x, angle))
                        .unwrap();
                    cluster_of.push(k);
                }
            }
            let mut users = EmbeddingTable::new(self.dim).unwrap();
            let mut records = Vec::new();
            let item_ids: Vec<String> = items.ids().map(str::to_owned).collect();
            for (u, p) in prefs.iter().enumerate() {
                let mix: Vec<f64> = (0..self.dim)
                    .map(|i| (0..self.clusters).map(|k| p[k] * centers[k][i]).sum())
                    .collect();
                let z = noisy(&mut rng, &mix, self.user_noise);
                users
                    .insert_f64(format!("u{u}"), &rotate(&z, angle))
                    .unwrap();
                let mut order: Vec<usize> = (0..item_ids.len()).collect();
                rng.shuffle(&mut order);
                for &v in &order[..per_user] {
                    let r = 1.0 + 4.0 * p[cluster_of[v]] + self.rating_noise * rng.normal();
                    let r = (r.clamp(1.0, 5.0) * 1000.0).round() / 1000.0;
                    records.push(InteractionRecord::new(format!("u{u}"), &item_ids[v], r).unwrap());
                }
            }
            save_embeddings(&users, &ddir.join("users.dupe")).unwrap();
            save_embeddings(&items, &ddir.join("items.dupe")).unwrap();
            write_interactions(&records, &ddir.join("ratings.csv")).unwrap();
        }

        let config = dir.join("pipeline.conf");
        let text = format!(
            "seed = {seed}\n\
             artifacts = artifacts\n\
             source.users = source/users.dupe\n\
             source.items = source/items.dupe\n\
             source.interactions = source/ratings.csv\n\
             target.users = target/users.dupe\n\
             target.items = target/items.dupe\n\
             target.interactions = target/ratings.csv\n\
             {extra}"
        );
        std::fs::write(&config, text).unwrap();
        Corpus { config }
    }
}

/// Pipeline settings sized for the synthetic corpus.
pub const SMALL_PIPELINE: &str = "\
autoencoder.latent = 8
autoencoder.batch_size = 32
autoencoder.max_epochs = 150
gmm.k = 4
train.hidden = 32
train.predictor_hidden = 16
train.batch_size = 64
train.max_epochs = 300
train.patience = 30
train.learning_rate = 3e-3
";

/// Every file under `root`, relative path and contents, sorted by path.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_owned(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Test-set RMSE of DUP-OT and of the two reference predictors, computed
/// from the artifacts of a finished run.
#[derive(Debug, Clone, Copy)]
pub struct Comparison {
    pub dupot: f64,
    /// Target model scored with uniform component weights.
    pub uniform: f64,
    /// Mean target training rating for every test interaction.
    pub global_mean: f64,
}

pub fn compare(config: &dupot::pipeline::PipelineConfig) -> Comparison {
    use dupot::data::{load_embeddings, CrossDomainSplit};
    use dupot::pipeline::{read_predictions, ArtifactLayout, Domain};
    use dupot::preference::{DomainModel, PreferenceWeights};

    let layout = ArtifactLayout::new(&config.artifacts);
    let split = CrossDomainSplit::load(&layout.split_dir()).unwrap();
    let target = DomainModel::load(&layout.domain_dir(Domain::Target)).unwrap();
    let items = load_embeddings(&layout.encoded_items(Domain::Target)).unwrap();
    let preds = read_predictions(&layout.predictions()).unwrap();

    let rmse = |errs: &mut dyn Iterator<Item = f64>| {
        let (mut s, mut n) = (0.0, 0usize);
        for e in errs {
            s += e * e;
            n += 1;
        }
        (s / n as f64).sqrt()
    };
    let mean =
        split.train_target.iter().map(|r| r.rating).sum::<f64>() / split.train_target.len() as f64;
    let uniform_w = PreferenceWeights::uniform(target.k());
    Comparison {
        dupot: rmse(&mut preds.iter().map(|p| p.prediction - p.rating)),
        uniform: rmse(&mut split.test.iter().map(|r| {
            let z = items.get_f64(&r.item_id).unwrap();
            target.predict_rating(&uniform_w, &z).unwrap() - r.rating
        })),
        global_mean: rmse(&mut split.test.iter().map(|r| mean - r.rating)),
    }
}
