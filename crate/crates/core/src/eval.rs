//! Accuracy metrics, grouped error reports, and the transfer-versus-scratch
//! experiment.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::SECONDS_PER_DAY;
use crate::neural::History;

pub const METERS_PER_MILE: f64 = 1609.344;
/// Relative distance from the best loss that counts as converged.
pub const CONVERGENCE_TOL: f64 = 0.05;

/// Mean absolute percentage error, in percent.
pub fn mape(truths: &[f64], preds: &[f64]) -> Result<f64> {
    if truths.len() != preds.len() {
        return Err(Error::LengthMismatch(truths.len(), preds.len()));
    }
    if truths.is_empty() {
        return Err(Error::LengthMismatch(0, 0));
    }
    if let Some(i) = truths.iter().position(|&y| y == 0.0) {
        return Err(Error::ZeroTruth(i));
    }
    let sum: f64 = truths
        .iter()
        .zip(preds)
        .map(|(y, p)| ((y - p) / y).abs())
        .sum();
    Ok(100.0 * sum / truths.len() as f64)
}

/// Root mean square error, in the units of the inputs.
pub fn rmse(truths: &[f64], preds: &[f64]) -> Result<f64> {
    if truths.len() != preds.len() {
        return Err(Error::LengthMismatch(truths.len(), preds.len()));
    }
    if truths.is_empty() {
        return Err(Error::LengthMismatch(0, 0));
    }
    let sum: f64 = truths
        .iter()
        .zip(preds)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok((sum / truths.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub group: Option<String>,
    pub mape: f64,
    pub rmse: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(group: Option<String>, truths: &[f64], preds: &[f64]) -> Result<Self> {
        Ok(Self {
            group,
            mape: mape(truths, preds)?,
            rmse: rmse(truths, preds)?,
            n: truths.len(),
        })
    }
}

/// A predicted route with the metadata used for grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub id: String,
    pub start_t: f64,
    pub distance_m: f64,
    /// Events active along the route during the trip.
    pub events: u32,
    pub truth_s: f64,
    pub predicted_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Hour,
    DistanceBand,
    EventCount,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hour" => Ok(Self::Hour),
            "distance_band" | "distance" => Ok(Self::DistanceBand),
            "event_count" | "events" => Ok(Self::EventCount),
            _ => Err(Error::BadConfig(format!("unknown grouping {s:?}"))),
        }
    }
}

pub fn distance_band(distance_m: f64) -> &'static str {
    let miles = distance_m / METERS_PER_MILE;
    if miles < 5.0 {
        "<5mi"
    } else if miles <= 20.0 {
        "5-20mi"
    } else {
        ">20mi"
    }
}

/// Sort key and label of an outcome's group.
fn group_of(o: &RouteOutcome, by: GroupBy, tz_offset_s: i64) -> (u32, String) {
    match by {
        GroupBy::Hour => {
            let local = (o.start_t + tz_offset_s as f64).rem_euclid(SECONDS_PER_DAY as f64);
            let h = (local / 3600.0).floor() as u32;
            (h, format!("{h:02}:00-{:02}:00", (h + 1) % 24))
        }
        GroupBy::DistanceBand => {
            let band = distance_band(o.distance_m);
            let rank = ["<5mi", "5-20mi", ">20mi"]
                .iter()
                .position(|b| *b == band)
                .unwrap() as u32;
            (rank, band.to_string())
        }
        GroupBy::EventCount => (o.events, o.events.to_string()),
    }
}

/// One report per non-empty group, in natural group order.
pub fn grouped_report(
    results: &[RouteOutcome],
    by: GroupBy,
    tz_offset_s: i64,
) -> Result<Vec<MetricReport>> {
    if results.is_empty() {
        return Err(Error::EmptyGroupSet);
    }
    let mut groups: BTreeMap<(u32, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for o in results {
        let e = groups.entry(group_of(o, by, tz_offset_s)).or_default();
        e.0.push(o.truth_s);
        e.1.push(o.predicted_s);
    }
    groups
        .into_iter()
        .map(|((_, label), (y, p))| MetricReport::compute(Some(label), &y, &p))
        .collect()
}

pub fn overall_report(results: &[RouteOutcome]) -> Result<MetricReport> {
    let y: Vec<f64> = results.iter().map(|o| o.truth_s).collect();
    let p: Vec<f64> = results.iter().map(|o| o.predicted_s).collect();
    MetricReport::compute(None, &y, &p)
}

pub fn write_reports_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "mape", "rmse", "n"])?;
    for r in reports {
        w.write_record([
            r.group.clone().unwrap_or_else(|| "all".into()),
            r.mape.to_string(),
            r.rmse.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One side of a transfer-versus-scratch comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub approach: String,
    pub mape: f64,
    pub rmse: f64,
    pub n: usize,
    pub wall_time_s: f64,
    /// Epoch (1-based) of the best validation loss of the travel-time model.
    pub epochs_to_best: usize,
    /// First epoch within [`CONVERGENCE_TOL`] of that best loss.
    pub epochs_to_converge: usize,
    pub epochs_run: usize,
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Serializes `rows` with a header derived from their field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-epoch losses; `val_loss` is empty when no validation set was used.
pub fn write_history_csv(path: &Path, h: &History) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for (i, loss) in h.train_loss.iter().enumerate() {
        let val = h.val_loss.get(i).map(f64::to_string).unwrap_or_default();
        w.write_record([(i + 1).to_string(), loss.to_string(), val])?;
    }
    w.flush()?;
    Ok(())
}
