//! Synthetic city: a Manhattan road grid with a known per-cell speed field,
//! rush-hour slowdowns, weather and events, and vehicles driving random
//! walks along the roads while emitting GPS fixes.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_side_dir, write_trajectories_jsonl, SideData, Trajectory};
use crate::error::{Error, Result};
use crate::geo::{cell_of, haversine_distance, CellIndex, GpsPoint, GridSpec, SECONDS_PER_DAY};
use crate::knowledge::{EventRecord, PoiRecord, WeatherRecord, MAX_SPEED, MIN_SPEED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub speed_multiplier: f64,
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub grid: GridSpec,
    /// Roads run along every `road_spacing`-th row and column.
    pub road_spacing: u32,
    /// Free-flow speed before any modifier, m/s.
    pub base_speed: f64,
    pub domains: Vec<DomainSpec>,
    /// Relative per-cell speed spread; factors are drawn from `1 ± cell_variation`.
    pub cell_variation: f64,
    /// Peak fractional slowdown at rush hour.
    pub rush_amplitude: f64,
    /// Local hours of the rush peaks.
    pub rush_peaks_h: Vec<f64>,
    pub rush_width_h: f64,
    /// Relative standard deviation of per-hop speed noise.
    pub noise: f64,
    /// Extra noise at the rush peak, as a multiple of `noise`.
    pub rush_noise: f64,
    pub cadence_s: f64,
    pub min_legs: u32,
    pub max_legs: u32,
    /// First simulated day, epoch seconds (UTC midnight).
    pub start_epoch: i64,
    pub days: u32,
    pub pois_per_cell: f64,
    pub weather_records: usize,
    pub event_records: usize,
    pub holidays: Vec<NaiveDate>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                lat_min: 39.10,
                lon_min: -84.55,
                phi: 0.001,
                rows: 24,
                cols: 24,
                intervals: 96,
                tz_offset_s: 0,
            },
            road_spacing: 2,
            base_speed: 12.0,
            domains: vec![
                DomainSpec {
                    name: "RV".into(),
                    speed_multiplier: 1.0,
                    trajectories: 400,
                },
                DomainSpec {
                    name: "SV".into(),
                    speed_multiplier: 0.7,
                    trajectories: 40,
                },
            ],
            cell_variation: 0.3,
            rush_amplitude: 0.4,
            rush_peaks_h: vec![7.5, 18.0],
            rush_width_h: 1.0,
            noise: 0.05,
            rush_noise: 3.0,
            cadence_s: 10.0,
            min_legs: 4,
            max_legs: 12,
            start_epoch: 1_514_764_800,
            days: 14,
            pois_per_cell: 2.0,
            weather_records: 20,
            event_records: 20,
            holidays: vec![],
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if self.road_spacing == 0 || self.road_spacing >= self.grid.rows.min(self.grid.cols) {
            return bad("road_spacing must be in [1, min(rows, cols))");
        }
        if self.domains.is_empty() {
            return bad("at least one domain is required");
        }
        let names: BTreeSet<&str> = self.domains.iter().map(|d| d.name.as_str()).collect();
        if names.len() != self.domains.len() {
            return bad("domain names must be unique");
        }
        if !(0.0..1.0).contains(&self.cell_variation) || !(0.0..1.0).contains(&self.rush_amplitude)
        {
            return bad("cell_variation and rush_amplitude must lie in [0, 1)");
        }
        if !(self.noise >= 0.0 && self.rush_noise >= 0.0 && self.rush_width_h > 0.0) {
            return bad("noise, rush_noise must be >= 0 and rush_width_h > 0");
        }
        if !(self.cadence_s > 0.0)
            || self.min_legs == 0
            || self.max_legs < self.min_legs
            || self.days == 0
        {
            return bad("cadence_s > 0, 1 <= min_legs <= max_legs and days >= 1 are required");
        }
        for d in &self.domains {
            let fastest = self.base_speed * d.speed_multiplier * (1.0 + self.cell_variation);
            let slowest = self.base_speed
                * d.speed_multiplier
                * (1.0 - self.cell_variation)
                * (1.0 - self.rush_amplitude)
                * WORST_SIDE_FACTOR;
            if !(slowest >= MIN_SPEED && fastest * (1.0 + NOISE_CLIP) <= MAX_SPEED) {
                return Err(Error::BadConfig(format!(
                    "domain {} speeds span [{slowest:.3}, {fastest:.3}] m/s, outside the plausible range",
                    d.name
                )));
            }
        }
        Ok(())
    }
}

/// Lowest combined weather and event slowdown factor.
const WORST_SIDE_FACTOR: f64 = 0.5 * 0.75;
const NOISE_CLIP: f64 = 0.5;
const EVENT_FACTOR: f64 = 0.75;

/// Exact speed field of a synthetic city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cfg: SynthConfig,
    /// Row-major per-cell speed factors.
    pub cell_factors: Vec<f64>,
    pub weather: Vec<WeatherRecord>,
    pub events: Vec<EventRecord>,
}

fn circular_hours(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(24.0);
    d.min(24.0 - d)
}

impl GroundTruth {
    pub fn grid(&self) -> &GridSpec {
        &self.cfg.grid
    }

    pub fn domain(&self, name: &str) -> Option<&DomainSpec> {
        self.cfg.domains.iter().find(|d| d.name == name)
    }

    /// Rush intensity in `[0, 1]` at epoch `t`.
    pub fn rush(&self, t: f64) -> f64 {
        let local =
            (t + self.cfg.grid.tz_offset_s as f64).rem_euclid(SECONDS_PER_DAY as f64) / 3600.0;
        let w = self.cfg.rush_width_h;
        self.cfg
            .rush_peaks_h
            .iter()
            .map(|&c| (-circular_hours(local, c).powi(2) / (2.0 * w * w)).exp())
            .sum::<f64>()
            .min(1.0)
    }

    pub fn cell_factor(&self, cell: CellIndex) -> f64 {
        let g = &self.cfg.grid;
        self.cell_factors[((cell.h - 1) * g.cols + (cell.w - 1)) as usize]
    }

    fn side_factor(&self, cell: CellIndex, t: f64) -> f64 {
        let g = &self.cfg.grid;
        let here =
            |lat: f64, lon: f64| cell_of(&GpsPoint::new(lat, lon, 0.0), g).ok() == Some(cell);
        let mut f = 1.0;
        for w in &self.weather {
            if (w.start_t..w.end_t).contains(&t) && here(w.lat, w.lon) {
                f *= (1.0 - 0.3 * w.rain - 0.4 * w.snow - 0.2 * w.hail).max(0.5);
                break;
            }
        }
        if self
            .events
            .iter()
            .any(|e| (e.start_t..e.end_t).contains(&t) && here(e.lat, e.lon))
        {
            f *= EVENT_FACTOR;
        }
        f
    }

    /// Noise-free speed of `domain` in `cell` at `t`, m/s.
    pub fn speed(&self, domain: &DomainSpec, cell: CellIndex, t: f64) -> f64 {
        let v = self.cfg.base_speed
            * domain.speed_multiplier
            * (1.0 - self.cfg.rush_amplitude * self.rush(t))
            * self.cell_factor(cell)
            * self.side_factor(cell, t);
        v.clamp(MIN_SPEED, MAX_SPEED)
    }

    /// Road intersections: cells on both a road row and a road column.
    pub fn intersections(&self) -> Vec<CellIndex> {
        let g = &self.cfg.grid;
        let s = self.cfg.road_spacing;
        let mut out = Vec::new();
        for h in (1..=g.rows).step_by(s as usize) {
            for w in (1..=g.cols).step_by(s as usize) {
                out.push(CellIndex::new(h, w));
            }
        }
        out
    }
}

/// One straight piece of a drive lying inside a single cell.
#[derive(Debug, Clone, Copy)]
struct Piece {
    from: (f64, f64),
    to: (f64, f64),
    cell: CellIndex,
}

/// Cell-centre path of a walk, split into half-hop pieces at cell boundaries.
fn pieces_along(g: &GridSpec, cells: &[CellIndex]) -> Vec<Piece> {
    let mut out = Vec::new();
    for pair in cells.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let ca = g.cell_center(a);
        let cb = g.cell_center(b);
        let mid = (0.5 * (ca.0 + cb.0), 0.5 * (ca.1 + cb.1));
        out.push(Piece {
            from: ca,
            to: mid,
            cell: a,
        });
        out.push(Piece {
            from: mid,
            to: cb,
            cell: b,
        });
    }
    out
}

fn lerp(a: (f64, f64), b: (f64, f64), f: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    haversine_distance(&GpsPoint::new(a.0, a.1, 0.0), &GpsPoint::new(b.0, b.1, 0.0))
}

/// A completed drive: emitted fixes and the cell sequence it followed.
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub trajectory: Trajectory,
    pub cells: Vec<CellIndex>,
}

pub struct SyntheticCity {
    pub truth: GroundTruth,
    pub pois: Vec<PoiRecord>,
}

impl SyntheticCity {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let g = cfg.grid;
        let mut cell_factors = Vec::with_capacity(g.cell_count());
        let mut pois = Vec::new();
        for h in 1..=g.rows {
            for w in 1..=g.cols {
                let u: f64 = rng.random_range(-1.0..=1.0);
                cell_factors.push(1.0 + cfg.cell_variation * u);
                // slower cells attract more points of interest
                let n =
                    (cfg.pois_per_cell * (1.0 - u) * rng.random::<f64>() * 2.0).round() as usize;
                let (lat0, lon0) = (
                    g.lat_min + (h - 1) as f64 * g.phi,
                    g.lon_min + (w - 1) as f64 * g.phi,
                );
                for _ in 0..n {
                    pois.push(PoiRecord {
                        lat: lat0 + g.phi * rng.random_range(0.05..0.95),
                        lon: lon0 + g.phi * rng.random_range(0.05..0.95),
                        category: ["shop", "school", "office", "food"][rng.random_range(0..4)]
                            .to_string(),
                    });
                }
            }
        }
        let span = cfg.days as f64 * SECONDS_PER_DAY as f64;
        let start = cfg.start_epoch as f64;
        let random_cell_point = |rng: &mut ChaCha8Rng| {
            let h = rng.random_range(1..=g.rows);
            let w = rng.random_range(1..=g.cols);
            g.cell_center(CellIndex::new(h, w))
        };
        let mut weather = Vec::new();
        for _ in 0..cfg.weather_records {
            let (lat, lon) = random_cell_point(&mut rng);
            let t0 = start + (rng.random::<f64>() * span / 900.0).floor() * 900.0;
            let hours = rng.random_range(1..=4) as f64;
            let snowy = rng.random_bool(0.2);
            let level = (rng.random_range(1..=10) as f64) / 10.0;
            weather.push(WeatherRecord {
                lat,
                lon,
                start_t: t0,
                end_t: t0 + hours * 3600.0,
                rain: if snowy { 0.0 } else { level },
                snow: if snowy { level } else { 0.0 },
                hail: 0.0,
            });
        }
        let mut events = Vec::new();
        for _ in 0..cfg.event_records {
            let (lat, lon) = random_cell_point(&mut rng);
            let t0 = start + (rng.random::<f64>() * span / 900.0).floor() * 900.0;
            let hours = rng.random_range(1..=3) as f64;
            let kind = ["accident", "roadwork", "concert"][rng.random_range(0..3)].to_string();
            events.push(EventRecord {
                lat,
                lon,
                start_t: t0,
                end_t: t0 + hours * 3600.0,
                kind,
            });
        }
        Ok(Self {
            truth: GroundTruth {
                cfg,
                cell_factors,
                weather,
                events,
            },
            pois,
        })
    }

    pub fn cfg(&self) -> &SynthConfig {
        &self.truth.cfg
    }

    pub fn side_data(&self) -> SideData {
        SideData {
            pois: self.pois.clone(),
            weather: self.truth.weather.clone(),
            events: self.truth.events.clone(),
            holidays: self.cfg().holidays.iter().copied().collect(),
        }
    }

    /// Random road walk of `legs` intersection-to-intersection legs without
    /// immediate U-turns, as the list of cells visited.
    pub fn random_walk(&self, legs: u32, rng: &mut impl Rng) -> Vec<CellIndex> {
        let g = self.truth.grid();
        let s = self.cfg().road_spacing as i64;
        let nodes = self.truth.intersections();
        let mut at = nodes[rng.random_range(0..nodes.len())];
        let mut cells = vec![at];
        let mut last: Option<(i64, i64)> = None;
        let max_h = 1 + (g.rows as i64 - 1) / s * s;
        let max_w = 1 + (g.cols as i64 - 1) / s * s;
        for _ in 0..legs {
            let options: Vec<(i64, i64)> = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .into_iter()
                .filter(|&(dh, dw)| {
                    let (h, w) = (at.h as i64 + dh * s, at.w as i64 + dw * s);
                    h >= 1 && w >= 1 && h <= max_h && w <= max_w && last != Some((-dh, -dw))
                })
                .collect();
            let (dh, dw) = options[rng.random_range(0..options.len())];
            for _ in 0..s {
                at = CellIndex::new((at.h as i64 + dh) as u32, (at.w as i64 + dw) as u32);
                cells.push(at);
            }
            last = Some((dh, dw));
        }
        cells
    }

    /// Drives along `cells` (adjacent cell centres) from `start_t`, emitting a
    /// fix every `cadence_s` seconds and at every turn and the final centre.
    /// Speeds follow the true field, perturbed by noise drawn from `rng`.
    pub fn drive(
        &self,
        id: String,
        domain: &DomainSpec,
        cells: &[CellIndex],
        start_t: f64,
        rng: &mut impl Rng,
    ) -> Result<Drive> {
        if cells.len() < 2 {
            return Err(Error::BadConfig("a drive needs at least two cells".into()));
        }
        let cfg = self.cfg();
        let g = &cfg.grid;
        let pieces = pieces_along(g, cells);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut t = start_t;
        let mut points = vec![GpsPoint::new(pieces[0].from.0, pieces[0].from.1, t)];
        let mut next_emit = start_t + cfg.cadence_s;
        let mut hop_noise = 0.0;
        for (i, p) in pieces.iter().enumerate() {
            if i % 2 == 0 {
                // one noise draw per cell visit
                let sd = cfg.noise * (1.0 + cfg.rush_noise * self.truth.rush(t));
                hop_noise = (sd * unit.sample(rng)).clamp(-NOISE_CLIP, NOISE_CLIP);
            }
            let v = (self.truth.speed(domain, p.cell, t) * (1.0 + hop_noise))
                .clamp(MIN_SPEED, MAX_SPEED);
            let len = dist(p.from, p.to);
            let t_end = t + len / v;
            while next_emit < t_end {
                let (lat, lon) = lerp(p.from, p.to, (next_emit - t) / (t_end - t));
                points.push(GpsPoint::new(lat, lon, next_emit));
                next_emit += cfg.cadence_s;
            }
            t = t_end;
            let turn = i % 2 == 1
                && pieces.get(i + 1).is_some_and(|q| {
                    let d1 = (p.to.0 - p.from.0, p.to.1 - p.from.1);
                    let d2 = (q.to.0 - q.from.0, q.to.1 - q.from.1);
                    (d1.0 * d2.1 - d1.1 * d2.0).abs() > 1e-15
                });
            if turn || i + 1 == pieces.len() {
                if points.last().map(|q| q.t) != Some(t) {
                    points.push(GpsPoint::new(p.to.0, p.to.1, t));
                }
                next_emit = t + cfg.cadence_s;
            }
        }
        Ok(Drive {
            trajectory: Trajectory {
                id,
                domain: domain.name.clone(),
                points,
            },
            cells: cells.to_vec(),
        })
    }

    /// Noise-free travel time along `cells` from `start_t`, integrated piece
    /// by piece over the true speed field.
    pub fn analytic_time(&self, domain: &DomainSpec, cells: &[CellIndex], start_t: f64) -> f64 {
        let mut t = start_t;
        for p in pieces_along(self.truth.grid(), cells) {
            t += dist(p.from, p.to) / self.truth.speed(domain, p.cell, t);
        }
        t - start_t
    }

    /// Trajectories for every domain, each in its own random stream.
    pub fn generate(&self) -> Result<Vec<Drive>> {
        let cfg = self.cfg();
        let span = cfg.days as f64 * SECONDS_PER_DAY as f64;
        let mut out = Vec::new();
        for (k, d) in cfg.domains.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64 + 1);
            for i in 0..d.trajectories {
                let legs = rng.random_range(cfg.min_legs..=cfg.max_legs);
                let cells = self.random_walk(legs, &mut rng);
                let start = cfg.start_epoch as f64 + (rng.random::<f64>() * span).floor();
                out.push(self.drive(format!("{}-{i:05}", d.name), d, &cells, start, &mut rng)?);
            }
        }
        Ok(out)
    }
}

pub const TRAJECTORY_FILE: &str = "trajectories.jsonl";
pub const GRID_FILE: &str = "grid.json";
pub const TRUTH_FILE: &str = "truth.json";

/// Generates a city and writes trajectories, side data, the grid and the
/// ground truth under `dir`.
pub fn synth_generate(cfg: &SynthConfig, dir: &Path) -> Result<(SyntheticCity, Vec<Drive>)> {
    let city = SyntheticCity::new(cfg.clone())?;
    let drives = city.generate()?;
    fs::create_dir_all(dir)?;
    let trajs: Vec<Trajectory> = drives.iter().map(|d| d.trajectory.clone()).collect();
    write_trajectories_jsonl(&dir.join(TRAJECTORY_FILE), &trajs)?;
    write_side_dir(dir, &city.side_data())?;
    fs::write(dir.join(GRID_FILE), serde_json::to_vec_pretty(&cfg.grid)?)?;
    fs::write(
        dir.join(TRUTH_FILE),
        serde_json::to_vec_pretty(&city.truth)?,
    )?;
    Ok((city, drives))
}
