use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::InteractionRecord;
use crate::error::{Error, Result};

/// One row of the predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub prediction: f64,
}

pub const PREDICTIONS_HEADER: [&str; 4] = ["user_id", "item_id", "rating", "prediction"];

/// `x` rounded to `digits` significant decimal digits, without exponent.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding may carry into a new leading digit (9.999995 -> 10.00000)
    let carried: f64 = s.parse().unwrap_or(x);
    if carried.abs().log10().floor() as i64 > magnitude && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

pub fn write_predictions(rows: &[Prediction], path: &Path) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path)
        .map_err(|e| Error::csv(ctx(), e))?;
    w.write_record(PREDICTIONS_HEADER)
        .map_err(|e| Error::csv(ctx(), e))?;
    for p in rows {
        let rating = p.rating.to_string();
        let pred = format_significant(p.prediction, 6);
        w.write_record([p.user_id.as_str(), p.item_id.as_str(), &rating, &pred])
            .map_err(|e| Error::csv(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let ctx = || path.display().to_string();
    let mut r = csv::ReaderBuilder::new()
        .quoting(false)
        .from_path(path)
        .map_err(|e| Error::csv(ctx(), e))?;
    let header = r.headers().map_err(|e| Error::csv(ctx(), e))?;
    if header.iter().ne(PREDICTIONS_HEADER) {
        return Err(Error::Data(format!(
            "{}: expected header {}",
            ctx(),
            PREDICTIONS_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(ctx(), e))?;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Data(format!("{} row {}: bad number {:?}", ctx(), i + 2, &rec[j]))
                })
        };
        rows.push(Prediction {
            user_id: rec[0].to_owned(),
            item_id: rec[1].to_owned(),
            rating: num(2)?,
            prediction: num(3)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
}

/// RMSE and MAE of `predictions` against `truth`.
///
/// Every truth interaction must be matched by exactly one prediction for the
/// same (user, item) pair and vice versa; the truth rating is used.
pub fn evaluate(predictions: &[Prediction], truth: &[InteractionRecord]) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut pending: HashMap<(&str, &str), Vec<f64>> = HashMap::new();
    for t in truth {
        pending
            .entry((&t.user_id, &t.item_id))
            .or_default()
            .push(t.rating);
    }
    let (mut se, mut ae) = (0.0, 0.0);
    for p in predictions {
        let rating = pending
            .get_mut(&(p.user_id.as_str(), p.item_id.as_str()))
            .and_then(Vec::pop)
            .ok_or_else(|| {
                Error::Data(format!(
                    "prediction for ({}, {}) has no truth",
                    p.user_id, p.item_id
                ))
            })?;
        let err = p.prediction - rating;
        se += err * err;
        ae += err.abs();
    }
    if let Some(((u, i), _)) = pending.iter().find(|(_, v)| !v.is_empty()) {
        return Err(Error::Data(format!("no prediction for ({u}, {i})")));
    }
    let n = truth.len() as f64;
    Ok(EvalReport {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        count: truth.len(),
    })
}
