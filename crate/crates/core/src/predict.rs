//! Route ETA: walk a given route cell by cell, querying knowledge at the
//! rolling timestamp and summing predicted crossing times.

use chrono::{DateTime, SecondsFormat};
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::geo::{cell_of, subdivide_segment, CellIndex, GpsPoint, GridSpec};
use crate::knowledge::KnowledgeGrids;
use crate::models::{eta_features, predict_cell_time, top_k_mask, ModelBundle};

/// A route vertex. Only the first timestamp matters; later ones are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutePoint {
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub points: Vec<RoutePoint>,
    /// Departure, epoch seconds.
    pub start_time: f64,
    pub domain: String,
}

impl RouteRequest {
    pub fn new(points: &[(f64, f64)], start_time: f64, domain: &str) -> Self {
        Self {
            points: points
                .iter()
                .map(|&(lat, lon)| RoutePoint { lat, lon, t: None })
                .collect(),
            start_time,
            domain: domain.to_string(),
        }
    }

    /// The geometry of a recorded trip, departing at its first fix.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let first = traj.points.first().ok_or(Error::EmptyRoute)?;
        Ok(Self {
            points: traj
                .points
                .iter()
                .map(|p| RoutePoint {
                    lat: p.lat,
                    lon: p.lon,
                    t: Some(p.t),
                })
                .collect(),
            start_time: first.t,
            domain: traj.domain.clone(),
        })
    }
}

/// One cell of a route with the length of the route inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteCell {
    pub cell: CellIndex,
    pub chord_len: f64,
}

/// Ordered cells traversed by the route. Consecutive pieces in the same cell
/// are merged; a cell visited twice appears twice.
pub fn convert_gps_to_cells(req: &RouteRequest, g: &GridSpec) -> Result<Vec<RouteCell>> {
    if req.points.len() < 2 {
        return Err(Error::EmptyRoute);
    }
    // Timestamps only order the subdivision; one second per leg suffices.
    let pts: Vec<GpsPoint> = req
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| GpsPoint::new(p.lat, p.lon, i as f64))
        .collect();
    let cells = pts
        .iter()
        .map(|p| cell_of(p, g))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<RouteCell> = Vec::new();
    let mut push = |cell: CellIndex, chord: f64| match out.last_mut() {
        Some(c) if c.cell == cell => c.chord_len += chord,
        _ => out.push(RouteCell {
            cell,
            chord_len: chord,
        }),
    };
    for (i, pair) in pts.windows(2).enumerate() {
        let (p, q) = (&pair[0], &pair[1]);
        if p.lat == q.lat && p.lon == q.lon {
            push(cells[i], 0.0);
            continue;
        }
        for s in subdivide_segment(p, q, g)? {
            push(s.cell, s.chord_len());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub cell: CellIndex,
    /// Time-of-day interval at entry.
    pub interval: u32,
    pub chord_len: f64,
    pub seconds: f64,
    /// Rolling timestamp at entry, epoch seconds.
    pub entry_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaResult {
    pub domain: String,
    pub start_time: f64,
    pub total_seconds: f64,
    pub arrival_epoch: f64,
    /// Arrival in RFC 3339 (UTC).
    pub arrival: String,
    pub breakdown: Vec<CellEstimate>,
    /// Set when some lookup fell outside the weather/event coverage, so
    /// those features were zero.
    pub knowledge_degraded: bool,
}

pub fn iso_utc(epoch: f64) -> String {
    let secs = epoch.floor();
    let nanos = ((epoch - secs) * 1e9).round().min(999_999_999.0) as u32;
    DateTime::from_timestamp(secs as i64, nanos)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Millis, true))
        .unwrap_or_else(|| format!("{epoch}"))
}

/// Estimates the travel time of `req` with the models of one domain.
pub fn estimate_route(
    req: &RouteRequest,
    bundle: &ModelBundle,
    grids: &KnowledgeGrids,
) -> Result<EtaResult> {
    if bundle.grid != grids.grid {
        return Err(Error::ModelGridMismatch);
    }
    if req.domain != bundle.domain {
        log::warn!(
            "route domain {} estimated with {} models",
            req.domain,
            bundle.domain
        );
    }
    let cells = convert_gps_to_cells(req, &grids.grid)?;
    estimate_cells(&cells, req.start_time, bundle, grids)
}

/// Walks an explicit cell sequence departing at `start_time`.
pub fn estimate_cells(
    cells: &[RouteCell],
    start_time: f64,
    bundle: &ModelBundle,
    grids: &KnowledgeGrids,
) -> Result<EtaResult> {
    if bundle.grid != grids.grid {
        return Err(Error::ModelGridMismatch);
    }
    if cells.is_empty() {
        return Err(Error::EmptyRoute);
    }
    let g = &grids.grid;
    let mut t = start_time;
    let mut degraded = false;
    let mut breakdown = Vec::with_capacity(cells.len());
    for rc in cells.iter().copied() {
        let vec = grids.vector_at(rc.cell, t)?;
        degraded |= !grids.side_data_covers(t);
        let sigma = top_k_mask(&bundle.classifier.classify(&vec)?, bundle.top_k)?;
        let omega = bundle.embedding.get(rc.cell);
        let features = eta_features(&vec, &sigma, omega, rc.chord_len, g.phi, &bundle.layout)?;
        let seconds = predict_cell_time(&bundle.eta, &features)?;
        breakdown.push(CellEstimate {
            cell: rc.cell,
            interval: g.interval_of(t)?,
            chord_len: rc.chord_len,
            seconds,
            entry_t: t,
        });
        t += seconds;
    }
    let total_seconds: f64 = breakdown.iter().map(|c| c.seconds).sum();
    let arrival_epoch = start_time + total_seconds;
    Ok(EtaResult {
        domain: bundle.domain.clone(),
        start_time,
        total_seconds,
        arrival_epoch,
        arrival: iso_utc(arrival_epoch),
        breakdown,
        knowledge_degraded: degraded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec {
            lat_min: 0.0,
            lon_min: 0.0,
            phi: 0.01,
            rows: 4,
            cols: 4,
            intervals: 96,
            tz_offset_s: 0,
        }
    }

    #[test]
    fn single_cell_route() {
        let req = RouteRequest::new(&[(0.002, 0.002), (0.002, 0.005), (0.006, 0.005)], 0.0, "RV");
        let cells = convert_gps_to_cells(&req, &grid()).unwrap();
        assert_eq!(cells.len(), 1);
        let a = GpsPoint::new(0.002, 0.002, 0.0);
        let b = GpsPoint::new(0.002, 0.005, 0.0);
        let c = GpsPoint::new(0.006, 0.005, 0.0);
        let direct =
            crate::geo::haversine_distance(&a, &b) + crate::geo::haversine_distance(&b, &c);
        assert!((cells[0].chord_len - direct).abs() < 1e-6 * direct);
    }

    #[test]
    fn straight_route_and_revisits() {
        let req = RouteRequest::new(&[(0.005, 0.005), (0.005, 0.025)], 0.0, "RV");
        let cells: Vec<_> = convert_gps_to_cells(&req, &grid())
            .unwrap()
            .iter()
            .map(|c| c.cell)
            .collect();
        assert_eq!(
            cells,
            [
                CellIndex::new(1, 1),
                CellIndex::new(1, 2),
                CellIndex::new(1, 3)
            ]
        );
        let back = RouteRequest::new(&[(0.005, 0.005), (0.005, 0.015), (0.005, 0.005)], 0.0, "RV");
        let cells: Vec<_> = convert_gps_to_cells(&back, &grid())
            .unwrap()
            .iter()
            .map(|c| c.cell)
            .collect();
        assert_eq!(
            cells,
            [
                CellIndex::new(1, 1),
                CellIndex::new(1, 2),
                CellIndex::new(1, 1)
            ]
        );
    }

    #[test]
    fn route_errors() {
        let one = RouteRequest::new(&[(0.005, 0.005)], 0.0, "RV");
        assert!(matches!(
            convert_gps_to_cells(&one, &grid()),
            Err(Error::EmptyRoute)
        ));
        let out = RouteRequest::new(&[(0.005, 0.005), (0.5, 0.005)], 0.0, "RV");
        assert!(matches!(
            convert_gps_to_cells(&out, &grid()),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn arrival_format() {
        assert_eq!(iso_utc(1_514_764_800.5), "2018-01-01T00:00:00.500Z");
    }
}
