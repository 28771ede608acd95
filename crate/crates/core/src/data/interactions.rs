use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EmbeddingTable;
use crate::error::{Error, Result};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
}

impl InteractionRecord {
    pub fn new(
        user_id: impl Into<String>,
        item_id: impl Into<String>,
        rating: f64,
    ) -> Result<Self> {
        let record = Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            rating,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.user_id.is_empty() || self.item_id.is_empty() {
            return Err(Error::Data("interaction with empty user or item id".into()));
        }
        let unsafe_char = |c: char| matches!(c, ',' | '\n' | '\r');
        if self.user_id.contains(unsafe_char) || self.item_id.contains(unsafe_char) {
            return Err(Error::Data(format!(
                "id contains a comma or line break: {:?}/{:?}",
                self.user_id, self.item_id
            )));
        }
        if !(MIN_RATING..=MAX_RATING).contains(&self.rating) {
            return Err(Error::Data(format!(
                "rating {} outside [{MIN_RATING}, {MAX_RATING}] for ({}, {})",
                self.rating, self.user_id, self.item_id
            )));
        }
        Ok(())
    }
}

/// One domain's users, items and observed ratings.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub users: EmbeddingTable,
    pub items: EmbeddingTable,
    pub interactions: Vec<InteractionRecord>,
}

impl DomainDataset {
    pub fn new(
        users: EmbeddingTable,
        items: EmbeddingTable,
        interactions: Vec<InteractionRecord>,
    ) -> Result<Self> {
        let ds = Self {
            users,
            items,
            interactions,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.interactions {
            r.validate()?;
            if !self.users.contains(&r.user_id) {
                return Err(Error::Data(format!("unknown user id {:?}", r.user_id)));
            }
            if !self.items.contains(&r.item_id) {
                return Err(Error::Data(format!("unknown item id {:?}", r.item_id)));
            }
        }
        Ok(())
    }
}

/// Keeps records of users with at least `min_count` records, in input order.
pub fn filter_min_interactions(
    records: &[InteractionRecord],
    min_count: usize,
) -> Vec<InteractionRecord> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *counts.entry(r.user_id.as_str()).or_default() += 1;
    }
    records
        .iter()
        .filter(|r| counts[r.user_id.as_str()] >= min_count)
        .cloned()
        .collect()
}

pub fn read_interactions(path: &Path) -> Result<Vec<InteractionRecord>> {
    let ctx = || format!("reading {}", path.display());
    let mut reader = csv::ReaderBuilder::new()
        .quoting(false)
        .from_path(path)
        .map_err(|e| Error::csv(ctx(), e))?;
    let headers = reader.headers().map_err(|e| Error::csv(ctx(), e))?;
    if headers != vec!["user_id", "item_id", "rating"] {
        return Err(Error::Data(format!(
            "{}: expected header `user_id,item_id,rating`, found `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (line, row) in reader.deserialize::<InteractionRecord>().enumerate() {
        let record = row.map_err(|e| Error::csv(ctx(), e))?;
        record
            .validate()
            .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), line + 2)))?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_interactions(records: &[InteractionRecord], path: &Path) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path)
        .map_err(|e| Error::csv(ctx(), e))?;
    writer
        .write_record(["user_id", "item_id", "rating"])
        .map_err(|e| Error::csv(ctx(), e))?;
    for r in records {
        r.validate()?;
        writer
            .write_record([
                r.user_id.as_str(),
                r.item_id.as_str(),
                &r.rating.to_string(),
            ])
            .map_err(|e| Error::csv(ctx(), e))?;
    }
    writer.flush().map_err(|e| Error::io(ctx(), e))
}
