use celleta::geo::{
    bearing, cell_of, direction_of, haversine_distance, midpoint, subdivide_segment, GpsPoint,
    GridSpec,
};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = GpsPoint> {
    (-85.0..85.0f64, -180.0..180.0f64).prop_map(|(lat, lon)| GpsPoint::new(lat, lon, 0.0))
}

fn grid() -> GridSpec {
    GridSpec {
        lat_min: 39.0,
        lon_min: -84.6,
        phi: 0.001,
        rows: 50,
        cols: 50,
        intervals: 96,
        tz_offset_s: 0,
    }
}

fn grid_point() -> impl Strategy<Value = GpsPoint> {
    (39.0..39.05f64, -84.6..-84.55f64).prop_map(|(lat, lon)| GpsPoint::new(lat, lon, 0.0))
}

proptest! {
    #[test]
    fn haversine_symmetric_and_triangular(a in point(), b in point(), c in point()) {
        let ab = haversine_distance(&a, &b);
        prop_assert!((ab - haversine_distance(&b, &a)).abs() <= 1e-9 * ab.max(1.0));
        let ac = haversine_distance(&a, &c);
        let cb = haversine_distance(&c, &b);
        prop_assert!(ab <= (ac + cb) * (1.0 + 1e-9) + 1e-9);
    }

    #[test]
    fn midpoint_is_equidistant(a in point(), b in point()) {
        let d = haversine_distance(&a, &b);
        prop_assume!(d > 1.0 && d < 0.9 * std::f64::consts::PI * 6_371_000.0);
        let m = midpoint(&a, &b).unwrap();
        let gap = (haversine_distance(&a, &m) - haversine_distance(&m, &b)).abs();
        prop_assert!(gap / d < 1e-6);
    }

    #[test]
    fn points_inside_map_inside(p in grid_point()) {
        let g = grid();
        let c = cell_of(&p, &g).unwrap();
        prop_assert!(g.contains_cell(c));
        prop_assert!(g.closed_cell_contains(c, &p, 1e-9));
    }

    #[test]
    fn subdivision_chains_and_inherits(p in grid_point(), q in grid_point(), dt in 1.0..600.0f64) {
        let g = grid();
        let q = GpsPoint::new(q.lat, q.lon, dt);
        let subs = subdivide_segment(&p, &q, &g).unwrap();
        prop_assert!(!subs.is_empty());
        prop_assert_eq!(subs[0].a, p);
        prop_assert_eq!(subs[subs.len() - 1].b, q);
        for pair in subs.windows(2) {
            prop_assert_eq!(pair[0].b, pair[1].a);
        }
        let speed = haversine_distance(&p, &q) / dt;
        for s in &subs {
            prop_assert!(g.closed_cell_contains(s.cell, &s.a, 1e-6));
            prop_assert!(g.closed_cell_contains(s.cell, &s.b, 1e-6));
            prop_assert_eq!(s.speed, subs[0].speed);
            prop_assert_eq!(s.bearing_dir, subs[0].bearing_dir);
        }
        prop_assert!((subs[0].speed - speed).abs() <= 1e-9 * speed.max(1.0));
        if haversine_distance(&p, &q) > 0.0 {
            prop_assert_eq!(subs[0].bearing_dir, direction_of(bearing(&p, &q).unwrap()));
        }
    }

    #[test]
    fn direction_sectors_are_contiguous(b in 0.0..360.0f64) {
        let d = direction_of(b);
        let centre = 45.0 * d.index() as f64;
        let offset = (b - centre + 180.0).rem_euclid(360.0) - 180.0;
        prop_assert!((-22.5..22.5).contains(&offset));
    }
}
