//! Loading and cleaning of trajectories and side data, dataset splitting,
//! and the synthetic city generator.

pub mod container;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GpsPoint;
use crate::knowledge::{EventRecord, PoiRecord, WeatherRecord};

/// Trajectories are split wherever consecutive fixes are further apart.
pub const MAX_GAP_S: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub domain: String,
    pub points: Vec<GpsPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Jsonl,
    Csv,
}

impl TrajectoryFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("jsonl") | Some("json") => Ok(Self::Jsonl),
            Some("csv") => Ok(Self::Csv),
            _ => Err(Error::BadConfig(format!(
                "cannot infer trajectory format of {}",
                path.display()
            ))),
        }
    }
}

/// Counts of records removed while cleaning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub raw_trajectories: usize,
    pub duplicate_timestamps: usize,
    pub invalid_points: usize,
    pub gap_splits: usize,
    pub short_pieces: usize,
}

/// Sorts by time, drops repeated timestamps and invalid fixes, splits at
/// gaps longer than [`MAX_GAP_S`] and drops pieces with fewer than 2 points.
/// Split pieces after the first get `#k` appended to their id.
pub fn clean_trajectory(raw: Trajectory, report: &mut CleaningReport) -> Vec<Trajectory> {
    report.raw_trajectories += 1;
    let mut points: Vec<GpsPoint> = Vec::with_capacity(raw.points.len());
    for p in raw.points {
        if p.is_valid() {
            points.push(p);
        } else {
            report.invalid_points += 1;
        }
    }
    points.sort_by(|a, b| a.t.total_cmp(&b.t));
    let before = points.len();
    points.dedup_by(|b, a| a.t == b.t);
    report.duplicate_timestamps += before - points.len();

    let mut pieces: Vec<Vec<GpsPoint>> = Vec::new();
    let mut current: Vec<GpsPoint> = Vec::new();
    for p in points {
        if let Some(last) = current.last() {
            if p.t - last.t > MAX_GAP_S {
                report.gap_splits += 1;
                pieces.push(std::mem::take(&mut current));
            }
        }
        current.push(p);
    }
    pieces.push(current);

    let mut out = Vec::new();
    for (k, pts) in pieces.into_iter().enumerate() {
        if pts.len() < 2 {
            report.short_pieces += 1;
            continue;
        }
        let id = if k == 0 {
            raw.id.clone()
        } else {
            format!("{}#{k}", raw.id)
        };
        out.push(Trajectory {
            id,
            domain: raw.domain.clone(),
            points: pts,
        });
    }
    out
}

#[derive(Deserialize)]
struct JsonPoint {
    lat: f64,
    lon: f64,
    t: f64,
}

#[derive(Deserialize)]
struct JsonTrajectory {
    id: serde_json::Value,
    domain: String,
    points: Vec<JsonPoint>,
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    domain: String,
    lat: f64,
    lon: f64,
    t: f64,
}

fn id_string(v: serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

fn csv_line(e: &csv::Error) -> usize {
    e.position().map_or(0, |p| p.line() as usize)
}

/// Reads raw (uncleaned) trajectories.
pub fn read_trajectories(path: &Path, format: TrajectoryFormat) -> Result<Vec<Trajectory>> {
    let raw = match format {
        TrajectoryFormat::Jsonl => {
            let reader = BufReader::new(fs::File::open(path)?);
            let mut out = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let t: JsonTrajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                out.push(Trajectory {
                    id: id_string(t.id),
                    domain: t.domain,
                    points: t
                        .points
                        .into_iter()
                        .map(|p| GpsPoint::new(p.lat, p.lon, p.t))
                        .collect(),
                });
            }
            out
        }
        TrajectoryFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(path)?;
            let mut groups: Vec<Trajectory> = Vec::new();
            let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
            for row in rdr.deserialize::<CsvRow>() {
                let row = row.map_err(|e| Error::Parse {
                    line: csv_line(&e),
                    message: e.to_string(),
                })?;
                let key = (row.id.clone(), row.domain.clone());
                let i = *index.entry(key).or_insert_with(|| {
                    groups.push(Trajectory {
                        id: row.id.clone(),
                        domain: row.domain.clone(),
                        points: vec![],
                    });
                    groups.len() - 1
                });
                groups[i]
                    .points
                    .push(GpsPoint::new(row.lat, row.lon, row.t));
            }
            groups
        }
    };
    if raw.is_empty() {
        return Err(Error::EmptyFile(path.display().to_string()));
    }
    Ok(raw)
}

/// Reads and cleans a trajectory file; the format follows the extension.
pub fn load_trajectories(path: &Path) -> Result<(Vec<Trajectory>, CleaningReport)> {
    let format = TrajectoryFormat::from_path(path)?;
    let mut report = CleaningReport::default();
    let out = read_trajectories(path, format)?
        .into_iter()
        .flat_map(|t| clean_trajectory(t, &mut report))
        .collect();
    log::info!("loaded {}: {report:?}", path.display());
    Ok((out, report))
}

pub fn write_trajectories_jsonl(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in trajectories {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// POI, weather, event and holiday inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SideData {
    pub pois: Vec<PoiRecord>,
    pub weather: Vec<WeatherRecord>,
    pub events: Vec<EventRecord>,
    pub holidays: BTreeSet<NaiveDate>,
}

pub const POI_FILE: &str = "pois.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const HOLIDAYS_FILE: &str = "holidays.txt";

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row.map_err(|e| Error::Parse {
            line: csv_line(&e),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn read_optional_csv<T: serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<Vec<T>> {
    match path {
        Some(p) if fs::metadata(p).map(|m| m.len() > 0)? => read_csv(p),
        _ => Ok(Vec::new()),
    }
}

pub fn read_holidays(path: &Path) -> Result<BTreeSet<NaiveDate>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("{s:?}: {e}"),
        })?;
        out.insert(d);
    }
    Ok(out)
}

/// Paths to the optional side-data files; absent or empty files load as
/// empty collections.
#[derive(Debug, Clone, Default)]
pub struct SidePaths<'a> {
    pub pois: Option<&'a Path>,
    pub weather: Option<&'a Path>,
    pub events: Option<&'a Path>,
    pub holidays: Option<&'a Path>,
}

impl<'a> SidePaths<'a> {
    /// Keeps only paths that exist.
    pub fn existing(self) -> Self {
        let keep = |p: Option<&'a Path>| p.filter(|p| p.exists());
        Self {
            pois: keep(self.pois),
            weather: keep(self.weather),
            events: keep(self.events),
            holidays: keep(self.holidays),
        }
    }
}

pub fn load_side_data(paths: &SidePaths<'_>) -> Result<SideData> {
    let pois = read_optional_csv(paths.pois)?;
    let weather: Vec<WeatherRecord> = read_optional_csv(paths.weather)?;
    for (i, w) in weather.iter().enumerate() {
        let levels = [w.rain, w.snow, w.hail];
        if levels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Schema(format!(
                "weather row {}: levels {levels:?} must lie in [0, 1]",
                i + 1
            )));
        }
        if w.end_t < w.start_t {
            return Err(Error::Schema(format!(
                "weather row {}: end_t before start_t",
                i + 1
            )));
        }
    }
    let events: Vec<EventRecord> = read_optional_csv(paths.events)?;
    if let Some(i) = events.iter().position(|e| e.end_t < e.start_t) {
        return Err(Error::Schema(format!(
            "event row {}: end_t before start_t",
            i + 1
        )));
    }
    let holidays = match paths.holidays {
        Some(p) => read_holidays(p)?,
        None => BTreeSet::new(),
    };
    Ok(SideData {
        pois,
        weather,
        events,
        holidays,
    })
}

/// Loads the conventionally named side files from a directory.
pub fn load_side_dir(dir: &Path) -> Result<SideData> {
    let (p, w, e, h) = (
        dir.join(POI_FILE),
        dir.join(WEATHER_FILE),
        dir.join(EVENTS_FILE),
        dir.join(HOLIDAYS_FILE),
    );
    let paths = SidePaths {
        pois: Some(&p),
        weather: Some(&w),
        events: Some(&e),
        holidays: Some(&h),
    };
    load_side_data(&paths.existing())
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes side data under the conventional file names.
pub fn write_side_dir(dir: &Path, side: &SideData) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join(POI_FILE), &["lat", "lon", "category"], &side.pois)?;
    write_csv(
        &dir.join(WEATHER_FILE),
        &["lat", "lon", "start_t", "end_t", "rain", "snow", "hail"],
        &side.weather,
    )?;
    write_csv(
        &dir.join(EVENTS_FILE),
        &["lat", "lon", "start_t", "end_t", "kind"],
        &side.events,
    )?;
    let days: String = side.holidays.iter().map(|d| format!("{d}\n")).collect();
    fs::write(dir.join(HOLIDAYS_FILE), days)?;
    Ok(())
}

/// Trajectory-id partition into train, validation and test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

pub const MIN_SPLIT_TRAJECTORIES: usize = 10;

/// Seeded shuffle, then a 70/10/20 cut by trajectory count.
pub fn split_dataset(trajectories: &[Trajectory], seed: u64) -> Result<DatasetSplit> {
    let n = trajectories.len();
    if n < MIN_SPLIT_TRAJECTORIES {
        return Err(Error::TooFew {
            need: MIN_SPLIT_TRAJECTORIES,
            got: n,
        });
    }
    let mut ids: Vec<String> = trajectories.iter().map(|t| t.id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = ((n as f64 * 0.1).round() as usize).max(1);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        val,
        test,
        seed,
    })
}

impl DatasetSplit {
    /// Trajectories of each partition, in input order.
    pub fn partition<'a>(&self, all: &'a [Trajectory]) -> [Vec<&'a Trajectory>; 3] {
        let sets: [BTreeSet<&str>; 3] = [&self.train, &self.val, &self.test]
            .map(|ids| ids.iter().map(String::as_str).collect());
        sets.map(|s| all.iter().filter(|t| s.contains(t.id.as_str())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(t: f64) -> GpsPoint {
        GpsPoint::new(39.1, -84.5 + t * 1e-5, t)
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        fs::File::create(&path)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        path
    }

    #[test]
    fn three_point_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "t.jsonl",
            r#"{"id":"a","domain":"RV","points":[{"lat":39.1,"lon":-84.5,"t":0},{"lat":39.1,"lon":-84.499,"t":10},{"lat":39.1,"lon":-84.498,"t":20}]}"#,
        );
        let (trajs, report) = load_trajectories(&path).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].points.len(), 3);
        assert_eq!(
            report.duplicate_timestamps + report.short_pieces + report.gap_splits,
            0
        );
    }

    #[test]
    fn ten_minute_gap_splits() {
        let t = Trajectory {
            id: "x".into(),
            domain: "RV".into(),
            points: vec![p(0.0), p(10.0), p(610.0), p(620.0)],
        };
        let mut r = CleaningReport::default();
        let out = clean_trajectory(t, &mut r);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].id, "x#1");
        assert_eq!(r.gap_splits, 1);
    }

    #[test]
    fn cleaning_sorts_dedups_and_drops_short() {
        let t = Trajectory {
            id: "x".into(),
            domain: "RV".into(),
            points: vec![p(20.0), p(0.0), p(10.0), p(10.0), p(1000.0)],
        };
        let mut r = CleaningReport::default();
        let out = clean_trajectory(t, &mut r);
        assert_eq!(out.len(), 1);
        let ts: Vec<f64> = out[0].points.iter().map(|q| q.t).collect();
        assert_eq!(ts, vec![0.0, 10.0, 20.0]);
        assert_eq!((r.duplicate_timestamps, r.short_pieces), (1, 1));
    }

    #[test]
    fn malformed_line_seven() {
        let dir = tempfile::tempdir().unwrap();
        let good = r#"{"id":"a","domain":"RV","points":[{"lat":39.1,"lon":-84.5,"t":0},{"lat":39.1,"lon":-84.499,"t":10}]}"#;
        let mut body = String::new();
        for _ in 0..6 {
            body.push_str(good);
            body.push('\n');
        }
        body.push_str("{not json\n");
        let path = write(&dir, "t.jsonl", &body);
        match load_trajectories(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }

        let csv = "id,domain,lat,lon,t\na,RV,39.1,-84.5,0\na,RV,39.1,-84.4,10\na,RV,39.1,-84.3,20\nb,SV,39.2,-84.5,0\nb,SV,39.2,-84.5,5\nb,SV,oops,-84.5,9\n";
        let path = write(&dir, "t.csv", csv);
        match load_trajectories(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_groups_by_id_and_ignores_extra_columns() {
        let dir = tempfile::tempdir().unwrap();
        let csv = "id,domain,lat,lon,t,extra\na,RV,39.1,-84.5,0,x\nb,SV,39.2,-84.5,0,y\na,RV,39.1,-84.4,10,x\nb,SV,39.2,-84.4,5,y\n";
        let (trajs, _) = load_trajectories(&write(&dir, "t.csv", csv)).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(
            (trajs[0].id.as_str(), trajs[1].domain.as_str()),
            ("a", "SV")
        );
    }

    #[test]
    fn empty_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_trajectories(&write(&dir, "e.jsonl", "\n")),
            Err(Error::EmptyFile(_))
        ));
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let trajs = vec![
            Trajectory {
                id: "a".into(),
                domain: "RV".into(),
                points: vec![p(0.0), p(10.0)],
            },
            Trajectory {
                id: "b".into(),
                domain: "SV".into(),
                points: vec![p(5.0), p(7.0), p(9.0)],
            },
        ];
        let path = dir.path().join("t.jsonl");
        write_trajectories_jsonl(&path, &trajs).unwrap();
        assert_eq!(load_trajectories(&path).unwrap().0, trajs);
    }

    #[test]
    fn side_data() {
        let dir = tempfile::tempdir().unwrap();
        let empty = load_side_dir(dir.path()).unwrap();
        assert_eq!(empty, SideData::default());

        write(
            &dir,
            WEATHER_FILE,
            "lat,lon,start_t,end_t,rain,snow,hail\n39.1,-84.5,0,10,1.5,0,0\n",
        );
        assert!(matches!(load_side_dir(dir.path()), Err(Error::Schema(_))));

        write(
            &dir,
            WEATHER_FILE,
            "lat,lon,start_t,end_t,rain,snow,hail\n39.1,-84.5,0,10,0.5,0,0\n",
        );
        write(&dir, HOLIDAYS_FILE, "2018-01-01\n");
        let side = load_side_dir(dir.path()).unwrap();
        assert_eq!(side.weather.len(), 1);
        let day = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        assert!(crate::knowledge::DateFeatures::at(1_514_800_000.0, 0, &side.holidays).holiday);
        assert!(side.holidays.contains(&day));

        let out = tempfile::tempdir().unwrap();
        write_side_dir(out.path(), &side).unwrap();
        assert_eq!(load_side_dir(out.path()).unwrap(), side);
    }

    fn many(n: usize) -> Vec<Trajectory> {
        (0..n)
            .map(|i| Trajectory {
                id: format!("t{i}"),
                domain: "RV".into(),
                points: vec![p(0.0), p(1.0)],
            })
            .collect()
    }

    #[test]
    fn split_proportions_and_determinism() {
        let s = split_dataset(&many(10), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        assert_eq!(s, split_dataset(&many(10), 1).unwrap());
        let base = split_dataset(&many(40), 0).unwrap();
        for seed in 1..=5 {
            assert_ne!(split_dataset(&many(40), seed).unwrap().train, base.train);
        }
        assert!(matches!(
            split_dataset(&many(9), 0),
            Err(Error::TooFew { need: 10, got: 9 })
        ));
        let all = many(40);
        let [tr, va, te] = base.partition(&all);
        assert_eq!(tr.len() + va.len() + te.len(), 40);
    }
}
