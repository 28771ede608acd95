use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::Source, Domain::Target];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            _ => Err(Error::Config(format!(
                "unknown domain {s:?}; expected source or target"
            ))),
        }
    }
}

/// Fixed file layout under the artifacts directory:
///
/// ```text
/// split/{train_source,train_target,valid,test}.csv, split/manifest.json
/// autoencoder/params.json, autoencoder/manifest.json
/// encoded/{source,target}_{users,items}.dupe
/// gmm/{source,target}.json          (+ gmm/{domain}_bic.json in BIC mode)
/// domain/{source,target}/bundle.json, gmm.json, w_learner.json, r_predictor.json
/// transport/cost.json, transport/plan.json
/// predictions.csv
/// eval.json
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactLayout {
    root: PathBuf,
}

impl ArtifactLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn split_dir(&self) -> PathBuf {
        self.root.join("split")
    }

    pub fn autoencoder_params(&self) -> PathBuf {
        self.root.join("autoencoder").join("params.json")
    }

    pub fn autoencoder_manifest(&self) -> PathBuf {
        self.root.join("autoencoder").join("manifest.json")
    }

    pub fn encoded_users(&self, domain: Domain) -> PathBuf {
        self.root
            .join("encoded")
            .join(format!("{domain}_users.dupe"))
    }

    pub fn encoded_items(&self, domain: Domain) -> PathBuf {
        self.root
            .join("encoded")
            .join(format!("{domain}_items.dupe"))
    }

    pub fn gmm(&self, domain: Domain) -> PathBuf {
        self.root.join("gmm").join(format!("{domain}.json"))
    }

    pub fn gmm_bic(&self, domain: Domain) -> PathBuf {
        self.root.join("gmm").join(format!("{domain}_bic.json"))
    }

    pub fn domain_dir(&self, domain: Domain) -> PathBuf {
        self.root.join("domain").join(domain.as_str())
    }

    pub fn cost(&self) -> PathBuf {
        self.root.join("transport").join("cost.json")
    }

    pub fn plan(&self) -> PathBuf {
        self.root.join("transport").join("plan.json")
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval.json")
    }
}
