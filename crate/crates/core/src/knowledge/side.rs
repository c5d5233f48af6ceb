use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::data::container::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::geo::{cell_of, CellIndex, GpsPoint, GridSpec};

/// Event counts at or above this value map to a normalized feature of 1.
pub const EVENT_CAP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub lat: f64,
    pub lon: f64,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub lat: f64,
    pub lon: f64,
    pub start_t: f64,
    pub end_t: f64,
    pub rain: f64,
    pub snow: f64,
    pub hail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub lat: f64,
    pub lon: f64,
    pub start_t: f64,
    pub end_t: f64,
    pub kind: String,
}

/// Max-normalized POI density per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticGrid {
    rows: u32,
    cols: u32,
    density: Vec<f64>,
    /// POIs dropped for lying outside the grid.
    pub skipped: usize,
}

impl StaticGrid {
    pub fn zeros(g: &GridSpec) -> Self {
        Self {
            rows: g.rows,
            cols: g.cols,
            density: vec![0.0; g.cell_count()],
            skipped: 0,
        }
    }

    pub fn density(&self, cell: CellIndex) -> f64 {
        if cell.h == 0 || cell.w == 0 || cell.h > self.rows || cell.w > self.cols {
            return 0.0;
        }
        self.density[((cell.h - 1) * self.cols + (cell.w - 1)) as usize]
    }

    pub(crate) fn encode(&self, w: &mut ByteWriter) {
        w.u32(self.rows);
        w.u32(self.cols);
        w.f64s(&self.density);
        w.u64(self.skipped as u64);
    }

    pub(crate) fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        let rows = r.u32()?;
        let cols = r.u32()?;
        let density = r.f64s(rows as usize * cols as usize)?;
        let skipped = r.u64()? as usize;
        Ok(Self {
            rows,
            cols,
            density,
            skipped,
        })
    }
}

pub fn build_static_grid(pois: &[PoiRecord], g: &GridSpec) -> StaticGrid {
    let mut grid = StaticGrid::zeros(g);
    let mut counts = vec![0u32; g.cell_count()];
    for p in pois {
        match cell_of(&GpsPoint::new(p.lat, p.lon, 0.0), g) {
            Ok(c) => counts[((c.h - 1) * g.cols + (c.w - 1)) as usize] += 1,
            Err(_) => grid.skipped += 1,
        }
    }
    if grid.skipped > 0 {
        log::warn!("{} POIs outside the grid were skipped", grid.skipped);
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max > 0 {
        for (d, &c) in grid.density.iter_mut().zip(&counts) {
            *d = c as f64 / max as f64;
        }
    }
    grid
}

/// Calendar-time (not pooled) side information keyed by absolute interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedGrid<V> {
    entries: BTreeMap<(CellIndex, i64), V>,
    /// First and last absolute interval covered by any ingested record.
    coverage: Option<(i64, i64)>,
    pub skipped: usize,
}

impl<V> Default for TimedGrid<V> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            coverage: None,
            skipped: 0,
        }
    }
}

impl<V: Copy> TimedGrid<V> {
    pub fn get(&self, cell: CellIndex, abs_interval: i64) -> Option<V> {
        self.entries.get(&(cell, abs_interval)).copied()
    }

    pub fn covers(&self, abs_interval: i64) -> bool {
        self.coverage
            .is_some_and(|(a, b)| (a..=b).contains(&abs_interval))
    }

    pub fn coverage(&self) -> Option<(i64, i64)> {
        self.coverage
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn extend_coverage(&mut self, first: i64, last: i64) {
        self.coverage = Some(match self.coverage {
            None => (first, last),
            Some((a, b)) => (a.min(first), b.max(last)),
        });
    }
}

/// Rain, snow and hail levels in `[0, 1]`.
pub type WeatherLevels = [f64; 3];
pub type WeatherGrid = TimedGrid<WeatherLevels>;
pub type EventGrid = TimedGrid<u32>;

impl WeatherGrid {
    pub(crate) fn encode(&self, w: &mut ByteWriter) {
        encode_timed(self, w, |w, v| w.f64s(v));
    }

    pub(crate) fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        decode_timed(r, |r| Ok([r.f64()?, r.f64()?, r.f64()?]))
    }
}

impl EventGrid {
    pub fn normalized(&self, cell: CellIndex, abs_interval: i64) -> f64 {
        self.get(cell, abs_interval)
            .map_or(0.0, |n| (n as f64 / EVENT_CAP).min(1.0))
    }

    pub(crate) fn encode(&self, w: &mut ByteWriter) {
        encode_timed(self, w, |w, v| w.u32(*v));
    }

    pub(crate) fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        decode_timed(r, |r| r.u32())
    }
}

fn encode_timed<V>(g: &TimedGrid<V>, w: &mut ByteWriter, put: impl Fn(&mut ByteWriter, &V)) {
    match g.coverage {
        None => w.u8(0),
        Some((a, b)) => {
            w.u8(1);
            w.i64(a);
            w.i64(b);
        }
    }
    w.u64(g.skipped as u64);
    w.u64(g.entries.len() as u64);
    for ((cell, t), v) in &g.entries {
        w.u32(cell.h);
        w.u32(cell.w);
        w.i64(*t);
        put(w, v);
    }
}

fn decode_timed<V>(
    r: &mut ByteReader<'_>,
    get: impl Fn(&mut ByteReader<'_>) -> Result<V>,
) -> Result<TimedGrid<V>> {
    let coverage = match r.u8()? {
        0 => None,
        _ => Some((r.i64()?, r.i64()?)),
    };
    let skipped = r.u64()? as usize;
    let n = r.u64()? as usize;
    let mut entries = BTreeMap::new();
    for _ in 0..n {
        let cell = CellIndex::new(r.u32()?, r.u32()?);
        let t = r.i64()?;
        entries.insert((cell, t), get(r)?);
    }
    Ok(TimedGrid {
        entries,
        coverage,
        skipped,
    })
}

/// Absolute intervals touched by the half-open span `[start, end)`; an
/// instantaneous record touches the interval containing it.
fn covered_intervals(start: f64, end: f64, g: &GridSpec) -> Result<(i64, i64)> {
    if !(start.is_finite() && end.is_finite()) || end < start {
        return Err(Error::BadRecord(format!(
            "record ends ({end}) before it starts ({start})"
        )));
    }
    let first = g.absolute_interval(start);
    let len = g.interval_seconds() as f64;
    let last = (((end + g.tz_offset_s as f64) / len).ceil() as i64 - 1).max(first);
    Ok((first, last))
}

pub fn build_weather_grid(records: &[WeatherRecord], g: &GridSpec) -> Result<WeatherGrid> {
    let mut grid = WeatherGrid::default();
    for rec in records {
        let levels = [rec.rain, rec.snow, rec.hail];
        if levels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::BadRecord(format!(
                "weather levels {levels:?} outside [0, 1]"
            )));
        }
        let (first, last) = covered_intervals(rec.start_t, rec.end_t, g)?;
        grid.extend_coverage(first, last);
        let Ok(cell) = cell_of(&GpsPoint::new(rec.lat, rec.lon, 0.0), g) else {
            grid.skipped += 1;
            continue;
        };
        for t in first..=last {
            let e = grid.entries.entry((cell, t)).or_insert([0.0; 3]);
            for (cur, new) in e.iter_mut().zip(levels) {
                *cur = cur.max(new);
            }
        }
    }
    Ok(grid)
}

pub fn build_event_grid(records: &[EventRecord], g: &GridSpec) -> Result<EventGrid> {
    let mut grid = EventGrid::default();
    for rec in records {
        let (first, last) = covered_intervals(rec.start_t, rec.end_t, g)?;
        grid.extend_coverage(first, last);
        let Ok(cell) = cell_of(&GpsPoint::new(rec.lat, rec.lon, 0.0), g) else {
            grid.skipped += 1;
            continue;
        };
        for t in first..=last {
            *grid.entries.entry((cell, t)).or_insert(0) += 1;
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateFeatures {
    pub weekend: bool,
    pub holiday: bool,
}

impl DateFeatures {
    pub fn at(t: f64, tz_offset_s: i64, holidays: &BTreeSet<NaiveDate>) -> Self {
        let date = local_date(t, tz_offset_s);
        Self {
            weekend: matches!(date.weekday(), Weekday::Sat | Weekday::Sun),
            holiday: holidays.contains(&date),
        }
    }
}

pub fn local_date(t: f64, tz_offset_s: i64) -> NaiveDate {
    let secs = (t + tz_offset_s as f64).floor() as i64;
    DateTime::from_timestamp(secs, 0)
        .map(|d| d.date_naive())
        .unwrap_or_default()
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

    fn poi(lat: f64, lon: f64) -> PoiRecord {
        PoiRecord {
            lat,
            lon,
            category: "cafe".into(),
        }
    }

    #[test]
    fn poi_density_max_normalized() {
        let g = grid();
        let empty = build_static_grid(&[], &g);
        assert!((1..=4).all(|h| (1..=4).all(|w| empty.density(CellIndex::new(h, w)) == 0.0)));

        let one = build_static_grid(&[poi(0.005, 0.005)], &g);
        assert_eq!(one.density(CellIndex::new(1, 1)), 1.0);
        assert_eq!(one.density(CellIndex::new(1, 2)), 0.0);

        let mut pois = vec![poi(0.005, 0.005), poi(0.006, 0.006)];
        pois.extend((0..4).map(|_| poi(0.015, 0.025)));
        pois.push(poi(5.0, 5.0));
        let g2 = build_static_grid(&pois, &g);
        assert_eq!(g2.density(CellIndex::new(1, 1)), 0.5);
        assert_eq!(g2.density(CellIndex::new(2, 3)), 1.0);
        assert_eq!(g2.skipped, 1);
    }

    #[test]
    fn events_span_intervals_and_clamp() {
        let g = grid();
        assert!(build_event_grid(&[], &g).unwrap().is_empty());
        let day = 1_514_764_800.0;
        let ev = |start: f64, end: f64| EventRecord {
            lat: 0.005,
            lon: 0.005,
            start_t: start,
            end_t: end,
            kind: "crash".into(),
        };
        // 10:00 to 10:20 covers intervals 40 and 41
        let e = build_event_grid(&[ev(day + 36_000.0, day + 37_200.0)], &g).unwrap();
        let base = g.absolute_interval(day);
        let c = CellIndex::new(1, 1);
        assert_eq!(e.get(c, base + 40), Some(1));
        assert_eq!(e.get(c, base + 41), Some(1));
        assert_eq!(e.get(c, base + 42), None);
        assert!(e.covers(base + 41) && !e.covers(base + 42));

        let many: Vec<_> = (0..12).map(|_| ev(day, day + 60.0)).collect();
        let e = build_event_grid(&many, &g).unwrap();
        assert_eq!(e.get(c, base), Some(12));
        assert_eq!(e.normalized(c, base), 1.0);

        assert!(matches!(
            build_event_grid(&[ev(day + 10.0, day)], &g),
            Err(Error::BadRecord(_))
        ));
    }

    #[test]
    fn weather_on_calendar_time() {
        let g = grid();
        let day = 1_514_764_800.0;
        let w = WeatherRecord {
            lat: 0.015,
            lon: 0.005,
            start_t: day,
            end_t: day + 900.0,
            rain: 0.7,
            snow: 0.0,
            hail: 0.1,
        };
        let grid_w = build_weather_grid(&[w.clone()], &g).unwrap();
        let base = g.absolute_interval(day);
        assert_eq!(
            grid_w.get(CellIndex::new(2, 1), base),
            Some([0.7, 0.0, 0.1])
        );
        assert_eq!(grid_w.get(CellIndex::new(2, 1), base + 1), None);
        assert_eq!(
            grid_w.get(CellIndex::new(2, 1), base + 96),
            None,
            "no pooling across days"
        );
        let bad = WeatherRecord { rain: 1.5, ..w };
        assert!(matches!(
            build_weather_grid(&[bad], &g),
            Err(Error::BadRecord(_))
        ));
    }

    #[test]
    fn date_features() {
        let holidays: BTreeSet<NaiveDate> = [NaiveDate::from_ymd_opt(2018, 1, 1).unwrap()].into();
        // 2018-01-01 was a Monday
        let d = DateFeatures::at(1_514_764_800.0 + 3600.0, 0, &holidays);
        assert_eq!(
            d,
            DateFeatures {
                weekend: false,
                holiday: true
            }
        );
        let sat = DateFeatures::at(1_514_764_800.0 + 5.0 * 86_400.0, 0, &holidays);
        assert_eq!(
            sat,
            DateFeatures {
                weekend: true,
                holiday: false
            }
        );
        // 02:00 UTC on Jan 1 is still Dec 31 at UTC-5
        let prev = DateFeatures::at(1_514_764_800.0 + 7200.0, -5 * 3600, &holidays);
        assert!(!prev.holiday && prev.weekend);
    }
}
