use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::container::{ByteReader, ByteWriter};
use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::geo::{
    cell_of, haversine_distance, shift_interval, subdivide_segment, CellIndex, CompassDirection,
    GridSpec,
};

/// Plausible speed range in m/s; observations outside it are dropped.
pub const MIN_SPEED: f64 = 0.1;
pub const MAX_SPEED: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSample {
    pub cell: CellIndex,
    pub interval: u32,
    pub dir: CompassDirection,
    pub speed: f64,
    pub traversal_time: f64,
    pub chord_len: f64,
}

/// One sample per same-cell pair or per sub-segment of a crossing pair.
/// The pair's duration is shared among its pieces in proportion to chord
/// length. Pairs that cannot be subdivided (zero duration, no movement,
/// out of bounds) are skipped.
pub fn extract_speed_samples(traj: &Trajectory, g: &GridSpec) -> Result<Vec<SpeedSample>> {
    if traj.points.len() < 2 {
        return Err(Error::EmptyTrajectory);
    }
    let mut out = Vec::new();
    let mut usable = 0usize;
    for pair in traj.points.windows(2) {
        let (p1, p2) = (&pair[0], &pair[1]);
        let Ok(pieces) = subdivide_segment(p1, p2, g) else {
            continue;
        };
        usable += 1;
        let duration = p2.t - p1.t;
        let chords: Vec<f64> = pieces.iter().map(|s| s.chord_len()).collect();
        let total: f64 = chords.iter().sum();
        if !(total > 0.0) {
            continue;
        }
        for (piece, chord) in pieces.iter().zip(chords) {
            if !(MIN_SPEED..=MAX_SPEED).contains(&piece.speed) || chord <= 0.0 {
                continue;
            }
            let mid_t = 0.5 * (piece.a.t + piece.b.t);
            out.push(SpeedSample {
                cell: piece.cell,
                interval: g.interval_of(mid_t)?,
                dir: piece.bearing_dir,
                speed: piece.speed,
                traversal_time: duration * chord / total,
                chord_len: chord,
            });
        }
    }
    if usable == 0 {
        return Err(Error::EmptyTrajectory);
    }
    Ok(out)
}

/// Mean speed for one direction of a (cell, interval) key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirStat {
    pub speed: f64,
    /// Number of pooled samples; 0 for interpolated entries.
    pub count: u32,
    pub interpolated: bool,
}

pub type SpeedProfile = [Option<DirStat>; 8];

pub fn profile_speeds(p: &SpeedProfile) -> impl Iterator<Item = f64> + '_ {
    p.iter().flatten().map(|s| s.speed)
}

/// Direction-resolved mean speeds per (cell, time-of-day interval), all days pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsKnowledgeGrid {
    grid: GridSpec,
    entries: BTreeMap<(CellIndex, u32), SpeedProfile>,
}

impl GpsKnowledgeGrid {
    pub fn empty(grid: GridSpec) -> Self {
        Self {
            grid,
            entries: BTreeMap::new(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn profile(&self, cell: CellIndex, interval: u32) -> Option<&SpeedProfile> {
        self.entries.get(&(cell, interval % self.grid.intervals))
    }

    pub fn get(&self, cell: CellIndex, interval: u32, dir: CompassDirection) -> Option<DirStat> {
        self.profile(cell, interval).and_then(|p| p[dir.index()])
    }

    pub fn set(
        &mut self,
        cell: CellIndex,
        interval: u32,
        dir: CompassDirection,
        stat: Option<DirStat>,
    ) {
        let key = (cell, interval % self.grid.intervals);
        let p = self.entries.entry(key).or_insert([None; 8]);
        p[dir.index()] = stat;
        if p.iter().all(Option::is_none) {
            self.entries.remove(&key);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(CellIndex, u32), &SpeedProfile)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of populated (cell, interval, direction) slots.
    pub fn slot_count(&self) -> usize {
        self.entries
            .values()
            .map(|p| p.iter().flatten().count())
            .sum()
    }

    /// Largest stored mean speed.
    pub fn max_speed(&self) -> Option<f64> {
        self.entries
            .values()
            .flat_map(profile_speeds)
            .fold(None, |m, s| Some(m.map_or(s, |m: f64| m.max(s))))
    }

    pub(crate) fn encode(&self, w: &mut ByteWriter) {
        w.u64(self.entries.len() as u64);
        for ((cell, t), p) in &self.entries {
            w.u32(cell.h);
            w.u32(cell.w);
            w.u32(*t);
            for slot in p {
                match slot {
                    None => w.u8(0),
                    Some(s) => {
                        w.u8(if s.interpolated { 2 } else { 1 });
                        w.f64(s.speed);
                        w.u32(s.count);
                    }
                }
            }
        }
    }

    pub(crate) fn decode(grid: GridSpec, r: &mut ByteReader<'_>) -> Result<Self> {
        let n = r.u64()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let cell = CellIndex::new(r.u32()?, r.u32()?);
            let t = r.u32()?;
            let mut p: SpeedProfile = [None; 8];
            for slot in &mut p {
                let tag = r.u8()?;
                if tag != 0 {
                    *slot = Some(DirStat {
                        speed: r.f64()?,
                        count: r.u32()?,
                        interpolated: tag == 2,
                    });
                }
            }
            entries.insert((cell, t), p);
        }
        Ok(Self { grid, entries })
    }
}

/// Pools samples into per-key arithmetic means.
pub fn build_gps_knowledge(samples: &[SpeedSample], g: &GridSpec) -> GpsKnowledgeGrid {
    let mut acc: BTreeMap<(CellIndex, u32), [(f64, u32); 8]> = BTreeMap::new();
    for s in samples {
        if !g.contains_cell(s.cell) {
            continue;
        }
        let slot = &mut acc
            .entry((s.cell, s.interval % g.intervals))
            .or_insert([(0.0, 0); 8])[s.dir.index()];
        slot.0 += s.speed;
        slot.1 += 1;
    }
    let entries = acc
        .into_iter()
        .map(|(k, sums)| {
            let p = sums.map(|(sum, n)| {
                (n > 0).then(|| DirStat {
                    speed: sum / n as f64,
                    count: n,
                    interpolated: false,
                })
            });
            (k, p)
        })
        .collect();
    GpsKnowledgeGrid { grid: *g, entries }
}

/// Circular-window average of a GPS grid: each (cell, t, dir) is the
/// count-weighted mean over intervals `t-window ..= t+window` excluding `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedGrid {
    window: usize,
    intervals: u32,
    entries: BTreeMap<(CellIndex, u32), [Option<(f64, u32)>; 8]>,
}

impl AveragedGrid {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn get(&self, cell: CellIndex, interval: u32, dir: CompassDirection) -> Option<f64> {
        self.entries
            .get(&(cell, interval % self.intervals))
            .and_then(|p| p[dir.index()])
            .map(|(s, _)| s)
    }

    pub fn has_any(&self, cell: CellIndex, interval: u32) -> bool {
        self.entries
            .contains_key(&(cell, interval % self.intervals))
    }

    pub fn keys(&self) -> impl Iterator<Item = &(CellIndex, u32)> {
        self.entries.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn build_averaged_grid(gps: &GpsKnowledgeGrid, window: usize) -> Result<AveragedGrid> {
    let intervals = gps.grid.intervals;
    let max = intervals as usize / 2;
    if window < 2 || window > max {
        return Err(Error::BadWindow { window, max });
    }
    let mut by_cell: BTreeMap<CellIndex, Vec<(u32, &SpeedProfile)>> = BTreeMap::new();
    for ((cell, t), p) in &gps.entries {
        by_cell.entry(*cell).or_default().push((*t, p));
    }
    let mut entries = BTreeMap::new();
    for (cell, rows) in by_cell {
        let mut dense: Vec<Option<&SpeedProfile>> = vec![None; intervals as usize];
        for (t, p) in rows {
            dense[t as usize] = Some(p);
        }
        for t in 0..intervals {
            let mut offsets: Vec<u32> = (1..=window as i64)
                .flat_map(|d| {
                    [
                        shift_interval(t, -d, intervals),
                        shift_interval(t, d, intervals),
                    ]
                })
                .filter(|&s| s != t)
                .collect();
            offsets.sort_unstable();
            offsets.dedup();
            let mut sums = [(0.0f64, 0u32); 8];
            for s in offsets {
                if let Some(p) = dense[s as usize] {
                    for (acc, stat) in sums.iter_mut().zip(p) {
                        if let Some(st) = stat {
                            let w = st.count.max(1);
                            acc.0 += st.speed * w as f64;
                            acc.1 += w;
                        }
                    }
                }
            }
            if sums.iter().any(|(_, n)| *n > 0) {
                entries.insert(
                    (cell, t),
                    sums.map(|(sum, n)| (n > 0).then(|| (sum / n as f64, n))),
                );
            }
        }
    }
    Ok(AveragedGrid {
        window,
        intervals,
        entries,
    })
}

/// Cell visit sequence of a trajectory with consecutive duplicates collapsed.
pub fn cell_path(traj: &Trajectory, g: &GridSpec) -> Vec<CellIndex> {
    let mut path: Vec<CellIndex> = Vec::new();
    let mut push = |c: CellIndex| {
        if path.last() != Some(&c) {
            path.push(c);
        }
    };
    for pair in traj.points.windows(2) {
        match subdivide_segment(&pair[0], &pair[1], g) {
            Ok(pieces) => pieces.iter().for_each(|s| push(s.cell)),
            Err(_) => {
                if let Ok(c) = cell_of(&pair[0], g) {
                    push(c);
                }
            }
        }
    }
    if let Some(last) = traj.points.last() {
        if let Ok(c) = cell_of(last, g) {
            push(c);
        }
    }
    path
}

/// Length of a trajectory along its points, meters.
pub fn path_length(traj: &Trajectory) -> f64 {
    traj.points
        .windows(2)
        .map(|w| haversine_distance(&w[0], &w[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GpsPoint, EARTH_RADIUS_M};
    use CompassDirection::*;

    fn grid() -> GridSpec {
        GridSpec {
            lat_min: 0.0,
            lon_min: 0.0,
            phi: 0.01,
            rows: 10,
            cols: 10,
            intervals: 96,
            tz_offset_s: 0,
        }
    }

    fn traj(points: Vec<GpsPoint>) -> Trajectory {
        Trajectory {
            id: "t".into(),
            domain: "RV".into(),
            points,
        }
    }

    fn sample(cell: CellIndex, interval: u32, dir: CompassDirection, speed: f64) -> SpeedSample {
        SpeedSample {
            cell,
            interval,
            dir,
            speed,
            traversal_time: 1.0,
            chord_len: speed,
        }
    }

    #[test]
    fn same_cell_pair_one_sample() {
        let dlat = (100.0 / EARTH_RADIUS_M).to_degrees();
        let t = traj(vec![
            GpsPoint::new(0.002, 0.005, 0.0),
            GpsPoint::new(0.002 + dlat, 0.005, 10.0),
        ]);
        let s = extract_speed_samples(&t, &grid()).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].speed - 10.0).abs() < 1e-9);
        assert!((s[0].traversal_time - 10.0).abs() < 1e-9);
        assert_eq!(s[0].dir, N);
    }

    #[test]
    fn zero_duration_pair_skipped() {
        let t = traj(vec![
            GpsPoint::new(0.002, 0.005, 0.0),
            GpsPoint::new(0.003, 0.005, 0.0),
            GpsPoint::new(0.004, 0.005, 20.0),
        ]);
        let s = extract_speed_samples(&t, &grid()).unwrap();
        assert_eq!(s.len(), 1);
        let only_bad = traj(vec![
            GpsPoint::new(0.002, 0.005, 0.0),
            GpsPoint::new(0.003, 0.005, 0.0),
        ]);
        assert!(matches!(
            extract_speed_samples(&only_bad, &grid()),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn straddling_pair_splits_with_equal_speed() {
        let g = grid();
        let (a, b) = (
            GpsPoint::new(0.005, 0.008, 0.0),
            GpsPoint::new(0.005, 0.013, 60.0),
        );
        let s = extract_speed_samples(&traj(vec![a, b]), &g).unwrap();
        let pieces = subdivide_segment(&a, &b, &g).unwrap();
        assert_eq!(s.len(), pieces.len());
        assert!(s.len() >= 2);
        assert_ne!(s[0].cell, s[1].cell);
        for (x, p) in s.iter().zip(&pieces) {
            assert_eq!(x.cell, p.cell);
            assert_eq!(x.speed, s[0].speed);
        }
        let total: f64 = s.iter().map(|x| x.traversal_time).sum();
        assert!((total - 60.0).abs() < 1e-9);
    }

    #[test]
    fn implausible_speed_discarded() {
        let t = traj(vec![
            GpsPoint::new(0.001, 0.005, 0.0),
            GpsPoint::new(0.009, 0.005, 1.0),
        ]);
        assert!(extract_speed_samples(&t, &grid()).unwrap().is_empty());
    }

    #[test]
    fn pooled_means() {
        let g = grid();
        let c = CellIndex::new(1, 1);
        assert!(build_gps_knowledge(&[], &g).is_empty());
        let grid_k = build_gps_knowledge(
            &[
                sample(c, 3, E, 8.0),
                sample(c, 3, E, 12.0),
                sample(c, 95, N, 5.0),
                sample(c, 0, N, 7.0),
            ],
            &g,
        );
        let e = grid_k.get(c, 3, E).unwrap();
        assert_eq!((e.speed, e.count), (10.0, 2));
        assert!(grid_k.get(c, 3, W).is_none());
        assert_eq!(grid_k.get(c, 95, N).unwrap().speed, 5.0);
        assert_eq!(grid_k.get(c, 0, N).unwrap().speed, 7.0);
        assert_eq!(grid_k.len(), 3);
        assert_eq!(grid_k.max_speed(), Some(10.0));
    }

    #[test]
    fn averaged_grid_windows() {
        let g = grid();
        let c = CellIndex::new(2, 2);
        let k = build_gps_knowledge(&[sample(c, 10, S, 9.0)], &g);
        let avg = build_averaged_grid(&k, 2).unwrap();
        assert_eq!(avg.get(c, 11, S), Some(9.0));
        assert_eq!(avg.get(c, 12, S), Some(9.0));
        assert_eq!(avg.get(c, 13, S), None);
        assert_eq!(avg.get(c, 10, S), None, "the centre interval is excluded");

        let wrap = build_gps_knowledge(&[sample(c, 95, S, 4.0)], &g);
        let avg = build_averaged_grid(&wrap, 2).unwrap();
        assert_eq!(avg.get(c, 0, S), Some(4.0));
        assert_eq!(avg.get(c, 1, S), Some(4.0));

        assert!(matches!(
            build_averaged_grid(&k, 1),
            Err(Error::BadWindow { .. })
        ));
        assert!(matches!(
            build_averaged_grid(&k, 49),
            Err(Error::BadWindow { .. })
        ));
        assert!(build_averaged_grid(&k, 48).is_ok());
    }

    #[test]
    fn averaged_constant_field_is_fixed_point() {
        let g = GridSpec {
            intervals: 24,
            ..grid()
        };
        let mut samples = Vec::new();
        for h in 1..=3 {
            for t in 0..24 {
                for d in [N, E] {
                    samples.push(sample(CellIndex::new(h, 1), t, d, 10.0));
                }
            }
        }
        let k = build_gps_knowledge(&samples, &g);
        for w in [2, 4, 8, 12] {
            let avg = build_averaged_grid(&k, w).unwrap();
            for key in avg.keys() {
                for d in [N, E] {
                    assert!((avg.get(key.0, key.1, d).unwrap() - 10.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cell_path_collapses_repeats() {
        let g = grid();
        let t = traj(vec![
            GpsPoint::new(0.005, 0.002, 0.0),
            GpsPoint::new(0.005, 0.006, 30.0),
            GpsPoint::new(0.005, 0.014, 90.0),
            GpsPoint::new(0.005, 0.024, 150.0),
        ]);
        let p = cell_path(&t, &g);
        assert_eq!(
            p,
            vec![
                CellIndex::new(1, 1),
                CellIndex::new(1, 2),
                CellIndex::new(1, 3)
            ]
        );
    }
}
