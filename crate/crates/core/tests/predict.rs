mod common;

use std::sync::OnceLock;

use celleta::geo::GridSpec;
use celleta::knowledge::KnowledgeGrids;
use celleta::models::ModelBundle;
use celleta::pipeline::{prepare_domain, split_by_domain, train_domain, train_roadnet};
use celleta::predict::{convert_gps_to_cells, estimate_cells, estimate_route, RouteRequest};
use celleta::Error;
use proptest::prelude::*;

use common::{small_pipeline, world};

struct Trained {
    bundle: ModelBundle,
    grids: KnowledgeGrids,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut cfg = small_pipeline(21);
        cfg.synth.domains[0].trajectories = 200;
        cfg.synth.domains.truncate(1);
        let g = cfg.synth.grid;
        let (_, trajs, side) = world(&cfg.synth);
        let split = split_by_domain(&trajs, cfg.seed)
            .unwrap()
            .remove("RV")
            .unwrap();
        let (_, sdne) = train_roadnet(&split.train, &g, &cfg.sdne).unwrap();
        let data = prepare_domain(split, &side, &g, &cfg).unwrap();
        let models = train_domain("RV", &data, &sdne.embedding, &cfg.models).unwrap();
        Trained {
            bundle: models.bundle,
            grids: data.grids,
        }
    })
}

fn route() -> impl Strategy<Value = Vec<(f64, f64)>> {
    let g = small_pipeline(21).synth.grid;
    let lat = g.lat_min + 1e-6..g.lat_min + g.rows as f64 * g.phi - 1e-6;
    let lon = g.lon_min + 1e-6..g.lon_min + g.cols as f64 * g.phi - 1e-6;
    prop::collection::vec((lat, lon), 2..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn total_is_breakdown_sum_and_time_rolls_forward(points in route(), start in 1.5e9..1.6e9f64) {
        let m = trained();
        let res = estimate_route(&RouteRequest::new(&points, start, "RV"), &m.bundle, &m.grids).unwrap();
        prop_assert_eq!(res.total_seconds, res.breakdown.iter().map(|c| c.seconds).sum::<f64>());
        prop_assert_eq!(res.breakdown[0].entry_t, start);
        for pair in res.breakdown.windows(2) {
            prop_assert!(pair[1].entry_t > pair[0].entry_t);
            prop_assert_eq!(pair[1].entry_t, pair[0].entry_t + pair[0].seconds);
        }
        prop_assert!(res.breakdown.iter().all(|c| c.seconds.is_finite() && c.seconds > 0.0));
        prop_assert_eq!(res.arrival_epoch, start + res.total_seconds);
    }

    #[test]
    fn dropping_the_last_cell_keeps_the_prefix(points in route(), start in 1.5e9..1.6e9f64) {
        let m = trained();
        let cells = convert_gps_to_cells(&RouteRequest::new(&points, start, "RV"), &m.grids.grid).unwrap();
        prop_assume!(cells.len() >= 2);
        let full = estimate_cells(&cells, start, &m.bundle, &m.grids).unwrap();
        let prefix = estimate_cells(&cells[..cells.len() - 1], start, &m.bundle, &m.grids).unwrap();
        prop_assert_eq!(&full.breakdown[..prefix.breakdown.len()], &prefix.breakdown[..]);
    }
}

#[test]
fn mismatched_grid_is_rejected() {
    let m = trained();
    let other = GridSpec {
        rows: m.grids.grid.rows + 1,
        ..m.grids.grid
    };
    let grids = KnowledgeGrids::empty(other);
    let req = RouteRequest::new(&[(39.101, -84.549), (39.105, -84.545)], 1.5e9, "RV");
    assert!(matches!(
        estimate_route(&req, &m.bundle, &grids),
        Err(Error::ModelGridMismatch)
    ));
}

#[test]
fn outside_the_grid_is_a_data_error() {
    let m = trained();
    let req = RouteRequest::new(&[(39.101, -84.549), (45.0, -84.545)], 1.5e9, "RV");
    let err = estimate_route(&req, &m.bundle, &m.grids).unwrap_err();
    assert!(matches!(err, Error::OutOfBounds { .. }));
    assert!(err.is_data_error());
}

#[test]
fn coverage_flag_tracks_side_data() {
    let m = trained();
    let req = |t| RouteRequest::new(&[(39.1015, -84.5485), (39.1015, -84.5405)], t, "RV");
    let far_future = estimate_route(&req(4.0e9), &m.bundle, &m.grids).unwrap();
    assert!(far_future.knowledge_degraded);
    let (first, _) = m.grids.weather.coverage().expect("weather records present");
    let covered = first as f64 * m.grids.grid.interval_seconds() as f64 + 1.0;
    let inside = estimate_route(&req(covered), &m.bundle, &m.grids).unwrap();
    assert!(!inside.knowledge_degraded);
}
