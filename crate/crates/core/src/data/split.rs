use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{read_interactions, write_interactions, DomainDataset, InteractionRecord};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Fraction of an overlapping user's non-anchor target interactions sent to
/// each of test and valid.
pub const HOLDOUT_FRACTION: f64 = 0.4;

pub const SPLIT_FILES: [&str; 4] = [
    "train_source.csv",
    "train_target.csv",
    "valid.csv",
    "test.csv",
];
pub const SPLIT_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct CrossDomainSplit {
    pub train_source: Vec<InteractionRecord>,
    pub train_target: Vec<InteractionRecord>,
    pub valid: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub overlapping_users: usize,
    pub train_source: usize,
    pub train_target: usize,
    pub valid: usize,
    pub test: usize,
}

/// Number of test (and of valid) interactions for a user with `n` target interactions.
pub fn holdout_count(n: usize) -> usize {
    (HOLDOUT_FRACTION * n.saturating_sub(1) as f64).floor() as usize
}

/// User ids with interactions in both domains, in order of first target appearance.
pub fn overlapping_users(source: &DomainDataset, target: &DomainDataset) -> Vec<String> {
    let in_source: HashSet<&str> = source
        .interactions
        .iter()
        .map(|r| r.user_id.as_str())
        .collect();
    let mut seen = HashSet::new();
    target
        .interactions
        .iter()
        .map(|r| r.user_id.as_str())
        .filter(|u| in_source.contains(u) && seen.insert(*u))
        .map(str::to_owned)
        .collect()
}

/// Splits target interactions of overlapping users into train/valid/test.
///
/// For each overlapping user, in order of first appearance in the target
/// interactions, the user's target interaction indices (input order) are
/// shuffled with a single generator seeded from `seed`. The first shuffled
/// interaction is kept for training, the next `holdout_count(n)` go to test,
/// the next `holdout_count(n)` to valid and the remainder to training. Every
/// output list preserves input order.
pub fn make_cross_domain_split(
    source: &DomainDataset,
    target: &DomainDataset,
    seed: u64,
) -> Result<CrossDomainSplit> {
    source.validate()?;
    target.validate()?;
    let overlap = overlapping_users(source, target);
    if overlap.is_empty() {
        return Err(Error::Data(
            "no users common to both domains; nothing to evaluate".into(),
        ));
    }

    let mut per_user: IndexMap<&str, Vec<usize>> =
        overlap.iter().map(|u| (u.as_str(), Vec::new())).collect();
    for (idx, r) in target.interactions.iter().enumerate() {
        if let Some(list) = per_user.get_mut(r.user_id.as_str()) {
            list.push(idx);
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Bucket {
        Train,
        Valid,
        Test,
    }
    let mut bucket = vec![Bucket::Train; target.interactions.len()];
    let mut rng = SeededRng::new(seed);
    for indices in per_user.values_mut() {
        rng.shuffle(indices);
        let h = holdout_count(indices.len());
        for &i in &indices[1..1 + h] {
            bucket[i] = Bucket::Test;
        }
        for &i in &indices[1 + h..1 + 2 * h] {
            bucket[i] = Bucket::Valid;
        }
    }

    let pick = |b: Bucket| -> Vec<InteractionRecord> {
        target
            .interactions
            .iter()
            .zip(&bucket)
            .filter(|(_, &x)| x == b)
            .map(|(r, _)| r.clone())
            .collect()
    };
    Ok(CrossDomainSplit {
        train_source: source.interactions.clone(),
        train_target: pick(Bucket::Train),
        valid: pick(Bucket::Valid),
        test: pick(Bucket::Test),
        seed,
    })
}

impl CrossDomainSplit {
    pub fn manifest(&self) -> SplitManifest {
        let users: HashSet<&str> = self
            .test
            .iter()
            .chain(&self.valid)
            .map(|r| r.user_id.as_str())
            .collect();
        SplitManifest {
            seed: self.seed,
            overlapping_users: users.len(),
            train_source: self.train_source.len(),
            train_target: self.train_target.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }

    fn lists(&self) -> [&Vec<InteractionRecord>; 4] {
        [
            &self.train_source,
            &self.train_target,
            &self.valid,
            &self.test,
        ]
    }

    /// Writes the four CSVs and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for (name, list) in SPLIT_FILES.iter().zip(self.lists()) {
            write_interactions(list, &dir.join(name))?;
        }
        let path = dir.join(SPLIT_MANIFEST);
        let json = serde_json::to_string_pretty(&self.manifest())
            .map_err(|e| Error::json("serializing split manifest", e))?;
        std::fs::write(&path, json + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SPLIT_MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let manifest: SplitManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let [train_source, train_target, valid, test] =
            SPLIT_FILES.map(|name| read_interactions(&dir.join(name)));
        Ok(Self {
            train_source: train_source?,
            train_target: train_target?,
            valid: valid?,
            test: test?,
            seed: manifest.seed,
        })
    }
}
