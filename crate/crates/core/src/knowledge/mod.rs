//! Cellular spatial-temporal knowledge: per-cell speed profiles from GPS,
//! POI density, weather, events and calendar flags, assembled into a
//! fixed-width `[0, 1]` feature vector per (cell, time).

mod gps;
mod interp;
mod side;

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use gps::{
    build_averaged_grid, build_gps_knowledge, cell_path, extract_speed_samples, path_length,
    profile_speeds, AveragedGrid, DirStat, GpsKnowledgeGrid, SpeedProfile, SpeedSample, MAX_SPEED,
    MIN_SPEED,
};
pub use interp::{
    build_star_family, fill_missing, interpolator_loss, train_interpolator, InterpolatorModel,
    DEFAULT_WINDOWS,
};
pub use side::{
    build_event_grid, build_static_grid, build_weather_grid, local_date, DateFeatures, EventGrid,
    EventRecord, PoiRecord, StaticGrid, WeatherGrid, WeatherRecord, EVENT_CAP,
};

use crate::data::container::{ByteReader, ByteWriter, Container};
use crate::data::{SideData, Trajectory};
use crate::error::{Error, Result};
use crate::geo::{CellIndex, CompassDirection, GridSpec};
use crate::neural::TrainConfig;

/// `[weekend, holiday, poi, rain, snow, hail, events]`.
const SCALAR_SLOTS: usize = 7;
/// Offset of the eight `(speed, present)` pairs.
pub const SPEED_OFFSET: usize = SCALAR_SLOTS;
const TIME_OFFSET: usize = SPEED_OFFSET + 16;
pub const CELL_VECTOR_WIDTH: usize = TIME_OFFSET + 2;

/// Feature vector of one cell at one moment; every entry lies in `[0, 1]`.
///
/// Layout: weekend, holiday, POI density, rain, snow, hail, normalized event
/// count, then `(speed / 60, present)` for N, NE, E, SE, S, SW, W, NW, then
/// the time of day as `((sin + 1) / 2, (cos + 1) / 2)` of its phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKnowledgeVector(pub Vec<f64>);

impl CellKnowledgeVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Observed/interpolated speeds present in the vector, m/s.
    pub fn speeds(&self) -> Vec<f64> {
        (0..8)
            .filter(|d| self.0[SPEED_OFFSET + 2 * d + 1] > 0.0)
            .map(|d| self.0[SPEED_OFFSET + 2 * d] * MAX_SPEED)
            .collect()
    }
}

/// Every grid needed to describe a cell at a time, for one vehicle domain.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGrids {
    pub grid: GridSpec,
    pub gps: GpsKnowledgeGrid,
    pub statics: StaticGrid,
    pub weather: WeatherGrid,
    pub events: EventGrid,
    pub holidays: BTreeSet<NaiveDate>,
}

impl KnowledgeGrids {
    pub fn empty(grid: GridSpec) -> Self {
        Self {
            grid,
            gps: GpsKnowledgeGrid::empty(grid),
            statics: StaticGrid::zeros(&grid),
            weather: WeatherGrid::default(),
            events: EventGrid::default(),
            holidays: BTreeSet::new(),
        }
    }

    pub fn date_features(&self, t: f64) -> DateFeatures {
        DateFeatures::at(t, self.grid.tz_offset_s, &self.holidays)
    }

    /// Cell vector at `t` with calendar flags derived from the holiday set.
    pub fn vector_at(&self, cell: CellIndex, t: f64) -> Result<CellKnowledgeVector> {
        assemble_cell_vector(cell, t, self, self.date_features(t))
    }

    /// Whether weather/event records cover the absolute interval of `t`.
    pub fn side_data_covers(&self, t: f64) -> bool {
        let abs = self.grid.absolute_interval(t);
        self.weather.covers(abs) || self.events.covers(abs)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut w = ByteWriter::new();
        self.gps.encode(&mut w);
        self.statics.encode(&mut w);
        self.weather.encode(&mut w);
        self.events.encode(&mut w);
        let header = KnowledgeHeader {
            grid: self.grid,
            intervals: self.grid.intervals,
            gps_keys: self.gps.len(),
            gps_slots: self.gps.slot_count(),
            weather_entries: self.weather.len(),
            event_entries: self.events.len(),
            holidays: self.holidays.iter().map(|d| d.to_string()).collect(),
        };
        Container::new(KNOWLEDGE_KIND, &header, w.into_inner())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != KNOWLEDGE_KIND {
            return Err(Error::Container(format!(
                "expected knowledge container, found {}",
                c.kind
            )));
        }
        let header: KnowledgeHeader = c.header_as()?;
        let mut r = ByteReader::new(&c.payload);
        let gps = GpsKnowledgeGrid::decode(header.grid, &mut r)?;
        let statics = StaticGrid::decode(&mut r)?;
        let weather = WeatherGrid::decode(&mut r)?;
        let events = EventGrid::decode(&mut r)?;
        let holidays = header
            .holidays
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Container(format!("bad holiday {s}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            grid: header.grid,
            gps,
            statics,
            weather,
            events,
            holidays,
        })
    }
}

pub const KNOWLEDGE_KIND: &str = "knowledge";

#[derive(Debug, Serialize, Deserialize)]
struct KnowledgeHeader {
    grid: GridSpec,
    intervals: u32,
    gps_keys: usize,
    gps_slots: usize,
    weather_entries: usize,
    event_entries: usize,
    holidays: Vec<String>,
}

/// Cyclic time-of-day encoding scaled into `[0, 1]`.
pub fn interval_encoding(interval: u32, intervals: u32) -> [f64; 2] {
    let phase = TAU * interval as f64 / intervals as f64;
    [(phase.sin() + 1.0) / 2.0, (phase.cos() + 1.0) / 2.0]
}

pub fn assemble_cell_vector(
    cell: CellIndex,
    t: f64,
    grids: &KnowledgeGrids,
    date: DateFeatures,
) -> Result<CellKnowledgeVector> {
    let g = &grids.grid;
    if !g.contains_cell(cell) {
        return Err(Error::CellOutOfBounds(cell));
    }
    let interval = g.interval_of(t)?;
    let abs = g.absolute_interval(t);
    let mut v = Vec::with_capacity(CELL_VECTOR_WIDTH);
    v.push(date.weekend as u8 as f64);
    v.push(date.holiday as u8 as f64);
    v.push(grids.statics.density(cell));
    v.extend_from_slice(&grids.weather.get(cell, abs).unwrap_or([0.0; 3]));
    v.push(grids.events.normalized(cell, abs));
    let profile = grids.gps.profile(cell, interval);
    for d in CompassDirection::ALL {
        match profile.and_then(|p| p[d.index()]) {
            Some(s) => v.extend_from_slice(&[(s.speed / MAX_SPEED).clamp(0.0, 1.0), 1.0]),
            None => v.extend_from_slice(&[0.0, 0.0]),
        }
    }
    v.extend_from_slice(&interval_encoding(interval, g.intervals));
    debug_assert_eq!(v.len(), CELL_VECTOR_WIDTH);
    Ok(CellKnowledgeVector(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnowledgeConfig {
    /// Averaging windows for the interpolation family.
    pub windows: Vec<usize>,
    pub interpolate: bool,
    pub interpolator: TrainConfig,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            windows: DEFAULT_WINDOWS.to_vec(),
            interpolate: true,
            interpolator: TrainConfig {
                epochs: 30,
                batch_size: 64,
                learning_rate: 0.01,
                dropout: 0.0,
                seed: 42,
                patience: 0,
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeReport {
    pub trajectories: usize,
    pub skipped_trajectories: usize,
    pub samples: usize,
    pub observed_slots: usize,
    pub interpolated_slots: usize,
}

/// Builds every grid for one domain: samples, pooled GPS grid, optional
/// interpolation of missing slots, and the side grids.
pub fn build_knowledge(
    trajectories: &[Trajectory],
    side: &SideData,
    grid: &GridSpec,
    cfg: &KnowledgeConfig,
) -> Result<(KnowledgeGrids, KnowledgeReport)> {
    grid.validate()?;
    let mut report = KnowledgeReport {
        trajectories: trajectories.len(),
        ..Default::default()
    };
    let mut samples = Vec::new();
    for t in trajectories {
        match extract_speed_samples(t, grid) {
            Ok(s) => samples.extend(s),
            Err(Error::EmptyTrajectory) => report.skipped_trajectories += 1,
            Err(e) => return Err(e),
        }
    }
    report.samples = samples.len();
    let observed = build_gps_knowledge(&samples, grid);
    report.observed_slots = observed.slot_count();

    let gps = if cfg.interpolate {
        let star = build_star_family(&observed, &cfg.windows)?;
        if star.is_empty() {
            observed
        } else {
            match train_interpolator(&observed, &star, &cfg.interpolator) {
                Ok((mi, _)) => fill_missing(&observed, &star, &mi)?,
                Err(Error::InsufficientData(msg)) => {
                    log::warn!("skipping interpolation: {msg}");
                    observed
                }
                Err(e) => return Err(e),
            }
        }
    } else {
        observed
    };
    report.interpolated_slots = gps.slot_count() - report.observed_slots;

    let grids = KnowledgeGrids {
        grid: *grid,
        gps,
        statics: build_static_grid(&side.pois, grid),
        weather: build_weather_grid(&side.weather, grid)?,
        events: build_event_grid(&side.events, grid)?,
        holidays: side.holidays.clone(),
    };
    Ok((grids, report))
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
    fn empty_grids_give_time_only_vector() {
        let k = KnowledgeGrids::empty(grid());
        let monday = 1_514_764_800.0 + 86_400.0 + 6.0 * 3600.0;
        let v = k.vector_at(CellIndex::new(2, 2), monday).unwrap();
        assert_eq!(v.0.len(), CELL_VECTOR_WIDTH);
        assert!(v.0[..TIME_OFFSET].iter().all(|&x| x == 0.0));
        // 06:00 is a quarter of the day: sin = 1, cos = 0
        assert!((v.0[TIME_OFFSET] - 1.0).abs() < 1e-12);
        assert!((v.0[TIME_OFFSET + 1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn northbound_speed_slot() {
        let g = grid();
        let mut k = KnowledgeGrids::empty(g);
        let t = 1_514_764_800.0 + 86_400.0;
        let interval = g.interval_of(t).unwrap();
        let c = CellIndex::new(1, 3);
        k.gps.set(
            c,
            interval,
            CompassDirection::N,
            Some(DirStat {
                speed: 30.0,
                count: 3,
                interpolated: false,
            }),
        );
        let v = k.vector_at(c, t).unwrap();
        assert_eq!(&v.0[SPEED_OFFSET..SPEED_OFFSET + 2], &[0.5, 1.0]);
        assert!(v.0[SPEED_OFFSET + 2..TIME_OFFSET].iter().all(|&x| x == 0.0));
        assert_eq!(v.speeds(), vec![30.0]);
        assert_eq!(v, k.vector_at(c, t).unwrap());
        assert!(matches!(
            k.vector_at(CellIndex::new(9, 9), t),
            Err(Error::CellOutOfBounds(_))
        ));
    }

    #[test]
    fn container_roundtrip() {
        let g = grid();
        let mut k = KnowledgeGrids::empty(g);
        k.gps.set(
            CellIndex::new(1, 1),
            5,
            CompassDirection::E,
            Some(DirStat {
                speed: 7.5,
                count: 2,
                interpolated: false,
            }),
        );
        k.gps.set(
            CellIndex::new(1, 1),
            5,
            CompassDirection::W,
            Some(DirStat {
                speed: 3.5,
                count: 0,
                interpolated: true,
            }),
        );
        k.statics = build_static_grid(
            &[PoiRecord {
                lat: 0.015,
                lon: 0.015,
                category: "x".into(),
            }],
            &g,
        );
        k.events = build_event_grid(
            &[EventRecord {
                lat: 0.005,
                lon: 0.005,
                start_t: 1000.0,
                end_t: 2000.0,
                kind: "k".into(),
            }],
            &g,
        )
        .unwrap();
        k.weather = build_weather_grid(
            &[WeatherRecord {
                lat: 0.005,
                lon: 0.005,
                start_t: 0.0,
                end_t: 10.0,
                rain: 0.3,
                snow: 0.2,
                hail: 0.0,
            }],
            &g,
        )
        .unwrap();
        k.holidays
            .insert(NaiveDate::from_ymd_opt(2018, 7, 4).unwrap());
        let bytes = k.to_container().unwrap().to_bytes().unwrap();
        let back = KnowledgeGrids::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, k);
    }
}
