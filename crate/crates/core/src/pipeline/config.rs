use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autoencoder::AutoencoderConfig;
use crate::error::{Error, Result};
use crate::gmm::GmmConfig;
use crate::preference::DomainTrainConfig;
use crate::transport::SinkhornConfig;

use super::Domain;

/// Parsed `key = value` lines.
///
/// Blank lines and lines whose first non-blank character is `#` are
/// ignored, as is anything after a `#` preceded by whitespace. Keys are
/// dotted names (`sinkhorn.epsilon`); each may appear once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigEntries {
    entries: BTreeMap<String, String>,
}

impl ConfigEntries {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let lineno = n + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected `key = value`")))?;
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
                || key.starts_with('.')
                || key.ends_with('.')
            {
                return Err(Error::Config(format!("line {lineno}: invalid key {key:?}")));
            }
            if entries
                .insert(key.to_owned(), value.trim().to_owned())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {lineno}: duplicate key {key:?}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_owned(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

/// Input files of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPaths {
    pub users: PathBuf,
    pub items: PathBuf,
    pub interactions: PathBuf,
}

/// How the component count of each domain's mixture is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum GmmSelection {
    Fixed(usize),
    /// Lowest BIC among the candidates.
    Bic(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub artifacts: PathBuf,
    pub source: DomainPaths,
    pub target: DomainPaths,
    /// Users with fewer interactions in a domain are dropped before splitting.
    pub min_interactions: usize,
    pub autoencoder: AutoencoderConfig,
    pub gmm: GmmSelection,
    pub gmm_fit: GmmConfig,
    pub train_source: DomainTrainConfig,
    pub train_target: DomainTrainConfig,
    /// Share of source training interactions held out for early stopping.
    pub source_valid_fraction: f64,
    pub sinkhorn: SinkhornConfig,
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "artifacts",
    "source.users",
    "source.items",
    "source.interactions",
    "target.users",
    "target.items",
    "target.interactions",
    "data.min_interactions",
    "autoencoder.hidden",
    "autoencoder.latent",
    "autoencoder.batch_size",
    "autoencoder.max_epochs",
    "autoencoder.holdout_fraction",
    "autoencoder.patience",
    "autoencoder.learning_rate",
    "autoencoder.decay_patience",
    "autoencoder.lr_decay",
    "gmm.k",
    "gmm.candidates",
    "gmm.n_init",
    "gmm.max_iter",
    "gmm.tol",
    "gmm.reg_scale",
    "gmm.kmeans_iter",
    "train.source_valid_fraction",
    "sinkhorn.epsilon",
    "sinkhorn.max_iter",
    "sinkhorn.tol",
];

const TRAIN_KEYS: &[&str] = &[
    "hidden",
    "predictor_hidden",
    "batch_size",
    "max_epochs",
    "patience",
    "learning_rate",
    "monotone_predictor",
    "restarts",
];

struct Reader<'a> {
    entries: &'a ConfigEntries,
    base: &'a Path,
}

impl Reader<'_> {
    fn required(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn parse<T: FromStr>(&self, key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("`{key}`: cannot parse {value:?}")))
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.entries
            .get(key)
            .map(|v| self.parse(key, v))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        let value = self.required(key)?;
        if value.is_empty() {
            return Err(Error::Config(format!("`{key}` is empty")));
        }
        Ok(self.base.join(value))
    }

    fn domain(&self, prefix: &str) -> Result<DomainPaths> {
        Ok(DomainPaths {
            users: self.path(&format!("{prefix}.users"))?,
            items: self.path(&format!("{prefix}.items"))?,
            interactions: self.path(&format!("{prefix}.interactions"))?,
        })
    }

    /// `train.<field>`, overridden per domain by `train.<domain>.<field>`.
    fn train_field<T: FromStr>(&self, domain: Domain, field: &str) -> Result<Option<T>> {
        let specific = format!("train.{}.{field}", domain.as_str());
        match self.opt(&specific)? {
            Some(v) => Ok(Some(v)),
            None => self.opt(&format!("train.{field}")),
        }
    }

    fn train(&self, domain: Domain) -> Result<DomainTrainConfig> {
        let d = DomainTrainConfig::default();
        Ok(DomainTrainConfig {
            hidden: self.train_field(domain, "hidden")?.or(d.hidden),
            predictor_hidden: self
                .train_field(domain, "predictor_hidden")?
                .or(d.predictor_hidden),
            batch_size: self
                .train_field(domain, "batch_size")?
                .unwrap_or(d.batch_size),
            max_epochs: self
                .train_field(domain, "max_epochs")?
                .unwrap_or(d.max_epochs),
            patience: self.train_field(domain, "patience")?.unwrap_or(d.patience),
            learning_rate: self
                .train_field(domain, "learning_rate")?
                .unwrap_or(d.learning_rate),
            monotone_predictor: self
                .train_field(domain, "monotone_predictor")?
                .unwrap_or(d.monotone_predictor),
            restarts: self.train_field(domain, "restarts")?.unwrap_or(d.restarts),
        })
    }
}

fn is_known(key: &str) -> bool {
    if KNOWN_KEYS.contains(&key) {
        return true;
    }
    let Some(rest) = key.strip_prefix("train.") else {
        return false;
    };
    let field = rest
        .strip_prefix("source.")
        .or_else(|| rest.strip_prefix("target."))
        .unwrap_or(rest);
    TRAIN_KEYS.contains(&field)
}

impl PipelineConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_entries(
            &Self::read_entries(path)?,
            path.parent().unwrap_or(Path::new(".")),
        )
    }

    pub fn read_entries(path: &Path) -> Result<ConfigEntries> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        ConfigEntries::parse(&text)
    }

    pub fn from_entries(entries: &ConfigEntries, base: &Path) -> Result<Self> {
        let unknown: BTreeSet<&str> = entries.keys().filter(|k| !is_known(k)).collect();
        if !unknown.is_empty() {
            let list: Vec<_> = unknown.into_iter().collect();
            return Err(Error::Config(format!("unknown keys: {}", list.join(", "))));
        }
        let r = Reader { entries, base };
        let seed = r.parse("seed", r.required("seed")?)?;

        let ae_default = AutoencoderConfig::default();
        let autoencoder = AutoencoderConfig {
            hidden: r.opt("autoencoder.hidden")?,
            latent: r.or("autoencoder.latent", ae_default.latent)?,
            batch_size: r.or("autoencoder.batch_size", ae_default.batch_size)?,
            max_epochs: r.or("autoencoder.max_epochs", ae_default.max_epochs)?,
            holdout_fraction: r.or("autoencoder.holdout_fraction", ae_default.holdout_fraction)?,
            patience: r.or("autoencoder.patience", ae_default.patience)?,
            learning_rate: r.or("autoencoder.learning_rate", ae_default.learning_rate)?,
            decay_patience: r.or("autoencoder.decay_patience", ae_default.decay_patience)?,
            lr_decay: r.or("autoencoder.lr_decay", ae_default.lr_decay)?,
        };

        let gmm = match (entries.get("gmm.k"), entries.get("gmm.candidates")) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set only one of `gmm.k` and `gmm.candidates`".into(),
                ))
            }
            (Some(k), None) => GmmSelection::Fixed(r.parse("gmm.k", k)?),
            (None, Some(list)) => GmmSelection::Bic(
                list.split(',')
                    .map(|k| r.parse("gmm.candidates", k.trim()))
                    .collect::<Result<_>>()?,
            ),
            (None, None) => {
                return Err(Error::Config(
                    "missing required key `gmm.k` or `gmm.candidates`".into(),
                ))
            }
        };
        let fit_default = GmmConfig::default();
        let gmm_fit = GmmConfig {
            n_init: r.or("gmm.n_init", fit_default.n_init)?,
            max_iter: r.or("gmm.max_iter", fit_default.max_iter)?,
            tol: r.or("gmm.tol", fit_default.tol)?,
            reg_scale: r.or("gmm.reg_scale", fit_default.reg_scale)?,
            kmeans_iter: r.or("gmm.kmeans_iter", fit_default.kmeans_iter)?,
        };

        let sk_default = SinkhornConfig::default();
        let sinkhorn = SinkhornConfig {
            epsilon: r.opt("sinkhorn.epsilon")?,
            max_iter: r.or("sinkhorn.max_iter", sk_default.max_iter)?,
            tol: r.or("sinkhorn.tol", sk_default.tol)?,
        };

        let config = Self {
            seed,
            artifacts: r.path("artifacts")?,
            source: r.domain("source")?,
            target: r.domain("target")?,
            min_interactions: r.or("data.min_interactions", 1)?,
            autoencoder,
            gmm,
            gmm_fit,
            train_source: r.train(Domain::Source)?,
            train_target: r.train(Domain::Target)?,
            source_valid_fraction: r.or("train.source_valid_fraction", 0.1)?,
            sinkhorn,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.min_interactions == 0 {
            return fail("`data.min_interactions` must be at least 1".into());
        }
        match &self.gmm {
            GmmSelection::Fixed(0) => return fail("`gmm.k` must be positive".into()),
            GmmSelection::Bic(ks) if ks.is_empty() || ks.contains(&0) => {
                return fail("`gmm.candidates` must list positive integers".into())
            }
            _ => {}
        }
        if self.gmm_fit.n_init == 0 || self.gmm_fit.max_iter == 0 {
            return fail("`gmm.n_init` and `gmm.max_iter` must be positive".into());
        }
        if !(0.0..1.0).contains(&self.source_valid_fraction) {
            return fail("`train.source_valid_fraction` must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.autoencoder.holdout_fraction) {
            return fail("`autoencoder.holdout_fraction` must be in [0, 1)".into());
        }
        if !(self.autoencoder.lr_decay > 0.0 && self.autoencoder.lr_decay <= 1.0) {
            return fail("`autoencoder.lr_decay` must be in (0, 1]".into());
        }
        if let Some(eps) = self.sinkhorn.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return fail("`sinkhorn.epsilon` must be positive".into());
            }
        }
        if !(self.sinkhorn.tol > 0.0) || self.sinkhorn.max_iter == 0 {
            return fail("`sinkhorn.tol` and `sinkhorn.max_iter` must be positive".into());
        }
        for (name, t) in [
            ("source", &self.train_source),
            ("target", &self.train_target),
        ] {
            if t.batch_size == 0 || t.restarts == 0 || !(t.learning_rate > 0.0) {
                return fail(format!(
                    "train.{name}: batch_size, restarts and learning_rate must be positive"
                ));
            }
        }
        if self.autoencoder.batch_size == 0 || self.autoencoder.latent == 0 {
            return fail(
                "`autoencoder.batch_size` and `autoencoder.latent` must be positive".into(),
            );
        }
        Ok(())
    }

    pub fn domain_paths(&self, domain: Domain) -> &DomainPaths {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }

    pub fn train_config(&self, domain: Domain) -> &DomainTrainConfig {
        match domain {
            Domain::Source => &self.train_source,
            Domain::Target => &self.train_target,
        }
    }
}
