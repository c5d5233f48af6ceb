//! Spherical geometry on a mean-radius Earth plus the lat/lon cell grid.
//!
//! Latitude is the first angle of every formula here: distance, midpoint and
//! bearing all follow the haversine-family expressions with `lat` playing the
//! role of the polar-angle complement.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Maximum bisection depth for [`subdivide_segment`].
pub const MAX_SUBDIVISION_DEPTH: u32 = 32;

/// Relative slack (in cell widths) under which an index is snapped to the
/// next integer boundary.
const BOUNDARY_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsPoint {
    pub lat: f64,
    pub lon: f64,
    /// Seconds since the Unix epoch (UTC).
    pub t: f64,
}

impl GpsPoint {
    pub fn new(lat: f64, lon: f64, t: f64) -> Self {
        Self { lat, lon, t }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
            && self.t >= 0.0
            && self.t.is_finite()
    }

    fn same_position(&self, other: &GpsPoint) -> bool {
        self.lat == other.lat && self.lon == other.lon
    }
}

/// 1-based row/column address of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub h: u32,
    pub w: u32,
}

impl CellIndex {
    pub fn new(h: u32, w: u32) -> Self {
        Self { h, w }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.h, self.w)
    }
}

/// An `rows x cols` partition of a lat/lon box into `phi`-degree cells, with
/// `intervals` time-of-day slots per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lon_min: f64,
    pub phi: f64,
    pub rows: u32,
    pub cols: u32,
    pub intervals: u32,
    /// Offset added to UTC timestamps to obtain local time of day.
    #[serde(default)]
    pub tz_offset_s: i64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::BadConfig(format!(
                "phi must be positive, got {}",
                self.phi
            )));
        }
        if self.rows == 0 || self.cols == 0 || self.intervals == 0 {
            return Err(Error::BadConfig(
                "rows, cols and intervals must be >= 1".into(),
            ));
        }
        if SECONDS_PER_DAY % self.intervals as i64 != 0 {
            return Err(Error::BadConfig(format!(
                "{} intervals do not divide a day",
                self.intervals
            )));
        }
        let lat_max = self.lat_min + self.rows as f64 * self.phi;
        let lon_max = self.lon_min + self.cols as f64 * self.phi;
        if self.lat_min < -90.0 || lat_max > 90.0 || self.lon_min < -180.0 || lon_max > 180.0 {
            return Err(Error::BadConfig(
                "grid box exceeds valid coordinates".into(),
            ));
        }
        Ok(())
    }

    pub fn lat_max(&self) -> f64 {
        self.lat_min + self.rows as f64 * self.phi
    }

    pub fn lon_max(&self) -> f64 {
        self.lon_min + self.cols as f64 * self.phi
    }

    pub fn cell_count(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn contains_cell(&self, cell: CellIndex) -> bool {
        (1..=self.rows).contains(&cell.h) && (1..=self.cols).contains(&cell.w)
    }

    /// Geographic center of a cell.
    pub fn cell_center(&self, cell: CellIndex) -> (f64, f64) {
        (
            self.lat_min + (cell.h as f64 - 0.5) * self.phi,
            self.lon_min + (cell.w as f64 - 0.5) * self.phi,
        )
    }

    /// Whether `p` lies in the closed box of `cell`, widened by `tol` cell widths.
    /// Adjacent sub-segments share their junction point, which belongs to
    /// both closed boxes.
    pub fn closed_cell_contains(&self, cell: CellIndex, p: &GpsPoint, tol: f64) -> bool {
        let lat0 = self.lat_min + (cell.h - 1) as f64 * self.phi;
        let lon0 = self.lon_min + (cell.w - 1) as f64 * self.phi;
        let slack = tol * self.phi;
        p.lat >= lat0 - slack
            && p.lat <= lat0 + self.phi + slack
            && p.lon >= lon0 - slack
            && p.lon <= lon0 + self.phi + slack
    }

    pub fn interval_seconds(&self) -> i64 {
        SECONDS_PER_DAY / self.intervals as i64
    }

    /// Shorthand for [`time_interval_of`] with the grid's own timezone offset.
    pub fn interval_of(&self, t: f64) -> Result<u32> {
        time_interval_of(t, self, self.tz_offset_s)
    }

    /// Interval index counted from the epoch (local time), i.e. not folded
    /// into a single day.
    pub fn absolute_interval(&self, t: f64) -> i64 {
        ((t + self.tz_offset_s as f64) / self.interval_seconds() as f64).floor() as i64
    }
}

fn snapped_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < BOUNDARY_SNAP * x.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

pub fn cell_of(p: &GpsPoint, g: &GridSpec) -> Result<CellIndex> {
    let out = || Error::OutOfBounds {
        lat: p.lat,
        lon: p.lon,
    };
    if !(p.lat.is_finite() && p.lon.is_finite()) {
        return Err(out());
    }
    let row = snapped_floor((p.lat - g.lat_min) / g.phi);
    let col = snapped_floor((p.lon - g.lon_min) / g.phi);
    if row < 0.0 || col < 0.0 || row >= g.rows as f64 || col >= g.cols as f64 {
        return Err(out());
    }
    Ok(CellIndex::new(row as u32 + 1, col as u32 + 1))
}

/// Great-circle distance in meters (two-argument `atan2` haversine form).
pub fn haversine_distance(p1: &GpsPoint, p2: &GpsPoint) -> f64 {
    let (a1, a2) = (p1.lat.to_radians(), p2.lat.to_radians());
    let d_alpha = a2 - a1;
    let d_beta = (p2.lon - p1.lon).to_radians();
    let h = (d_alpha / 2.0).sin().powi(2) + a1.cos() * a2.cos() * (d_beta / 2.0).sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Great-circle midpoint; the timestamp is the mean of the endpoints'.
pub fn midpoint(p1: &GpsPoint, p2: &GpsPoint) -> Result<GpsPoint> {
    if p1.same_position(p2) {
        return Ok(GpsPoint::new(p1.lat, p1.lon, 0.5 * (p1.t + p2.t)));
    }
    let (a1, a2) = (p1.lat.to_radians(), p2.lat.to_radians());
    let b1 = p1.lon.to_radians();
    let d_beta = (p2.lon - p1.lon).to_radians();
    let bx = a2.cos() * d_beta.cos();
    let by = a2.cos() * d_beta.sin();
    let horiz = ((a1.cos() + bx).powi(2) + by.powi(2)).sqrt();
    let vert = a1.sin() + a2.sin();
    if horiz < 1e-12 && vert.abs() < 1e-12 {
        return Err(Error::DegenerateSegment("antipodal endpoints"));
    }
    let lat = vert.atan2(horiz);
    let lon = b1 + by.atan2(a1.cos() + bx);
    let lon = (lon.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    Ok(GpsPoint::new(lat.to_degrees(), lon, 0.5 * (p1.t + p2.t)))
}

/// Initial great-circle bearing from `p1` toward `p2`, degrees in `[0, 360)`.
pub fn bearing(p1: &GpsPoint, p2: &GpsPoint) -> Result<f64> {
    if p1.same_position(p2) {
        return Err(Error::DegenerateSegment("bearing of coincident points"));
    }
    let (a1, a2) = (p1.lat.to_radians(), p2.lat.to_radians());
    let d_beta = (p2.lon - p1.lon).to_radians();
    let y = d_beta.sin() * a2.cos();
    let x = a1.cos() * a2.sin() - a1.sin() * a2.cos() * d_beta.cos();
    let deg = y.atan2(x).to_degrees().rem_euclid(360.0);
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs
    Ok(if deg >= 360.0 { 0.0 } else { deg })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompassDirection {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl CompassDirection {
    /// Fixed order used by every per-direction slot layout.
    pub const ALL: [CompassDirection; 8] = [
        CompassDirection::N,
        CompassDirection::NE,
        CompassDirection::E,
        CompassDirection::SE,
        CompassDirection::S,
        CompassDirection::SW,
        CompassDirection::W,
        CompassDirection::NW,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Buckets a bearing into one of eight 45-degree sectors centered on the
/// compass points; lower sector edges are inclusive.
pub fn direction_of(bearing_deg: f64) -> CompassDirection {
    let shifted = (bearing_deg + 22.5).rem_euclid(360.0);
    let idx = ((shifted / 45.0).floor() as usize) % 8;
    CompassDirection::ALL[idx]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubSegment {
    pub a: GpsPoint,
    pub b: GpsPoint,
    pub cell: CellIndex,
    /// Speed of the parent segment, m/s.
    pub speed: f64,
    /// Direction of the parent segment.
    pub bearing_dir: CompassDirection,
}

impl SubSegment {
    pub fn chord_len(&self) -> f64 {
        haversine_distance(&self.a, &self.b)
    }
}

/// Splits the segment `p1 -> p2` by repeated midpoint bisection until every
/// piece lies in one cell. All pieces inherit the parent speed and direction.
pub fn subdivide_segment(p1: &GpsPoint, p2: &GpsPoint, g: &GridSpec) -> Result<Vec<SubSegment>> {
    let duration = p2.t - p1.t;
    if !(duration > 0.0) {
        return Err(Error::NonPositiveDuration(duration));
    }
    let c1 = cell_of(p1, g)?;
    let c2 = cell_of(p2, g)?;
    let speed = haversine_distance(p1, p2) / duration;
    let dir = direction_of(bearing(p1, p2)?);

    let mut out: Vec<SubSegment> = Vec::new();
    bisect(
        p1,
        c1,
        p2,
        c2,
        g,
        0,
        &mut |a, b, cell| match out.last_mut() {
            // depth-capped slivers at a boundary join the neighbouring piece of the same cell
            Some(prev) if prev.cell == cell => prev.b = b,
            _ => out.push(SubSegment {
                a,
                b,
                cell,
                speed,
                bearing_dir: dir,
            }),
        },
    )?;
    Ok(out)
}

fn bisect(
    a: &GpsPoint,
    ca: CellIndex,
    b: &GpsPoint,
    cb: CellIndex,
    g: &GridSpec,
    depth: u32,
    emit: &mut impl FnMut(GpsPoint, GpsPoint, CellIndex),
) -> Result<()> {
    if ca == cb {
        emit(*a, *b, ca);
        return Ok(());
    }
    let mid = midpoint(a, b)?;
    let cm = cell_of(&mid, g)?;
    if depth >= MAX_SUBDIVISION_DEPTH {
        emit(*a, *b, cm);
        return Ok(());
    }
    bisect(a, ca, &mid, cm, g, depth + 1, emit)?;
    bisect(&mid, cm, b, cb, g, depth + 1, emit)
}

/// Time-of-day slot of an epoch timestamp, in `[0, T)`.
pub fn time_interval_of(t: f64, g: &GridSpec, tz_offset_s: i64) -> Result<u32> {
    if g.intervals == 0 || SECONDS_PER_DAY % g.intervals as i64 != 0 {
        return Err(Error::BadConfig(format!(
            "{} intervals do not divide a day",
            g.intervals
        )));
    }
    let day = SECONDS_PER_DAY as f64;
    let local = (t + tz_offset_s as f64).rem_euclid(day);
    let slot = (local / g.interval_seconds() as f64).floor() as u32;
    Ok(slot.min(g.intervals - 1))
}

/// Circular interval arithmetic: `interval + delta` modulo `T`.
pub fn shift_interval(interval: u32, delta: i64, intervals: u32) -> u32 {
    (interval as i64 + delta).rem_euclid(intervals as i64) as u32
}
