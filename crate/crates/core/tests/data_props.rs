use celleta::data::{
    clean_trajectory, load_trajectories, write_trajectories_jsonl, CleaningReport, Trajectory,
};
use celleta::geo::GpsPoint;
use proptest::prelude::*;

fn raw() -> impl Strategy<Value = Trajectory> {
    prop::collection::vec((39.0..39.1f64, -84.6..-84.5f64, 0u32..3000), 0..60).prop_map(|pts| {
        Trajectory {
            id: "trip".into(),
            domain: "RV".into(),
            points: pts
                .into_iter()
                .map(|(lat, lon, t)| GpsPoint::new(lat, lon, t as f64 * 10.0))
                .collect(),
        }
    })
}

proptest! {
    #[test]
    fn cleaning_keeps_order_and_invents_nothing(traj in raw()) {
        let original = traj.points.clone();
        let pieces = clean_trajectory(traj, &mut CleaningReport::default());
        let mut last_t = f64::NEG_INFINITY;
        for piece in &pieces {
            prop_assert!(piece.points.len() >= 2);
            for p in &piece.points {
                prop_assert!(p.t > last_t);
                last_t = p.t;
                prop_assert!(original.contains(p));
            }
        }
    }

    #[test]
    fn save_then_load_round_trips(trajs in prop::collection::vec(raw(), 1..6)) {
        let mut report = CleaningReport::default();
        let clean: Vec<Trajectory> = trajs
            .into_iter()
            .enumerate()
            .flat_map(|(i, mut t)| {
                t.id = format!("trip{i}");
                clean_trajectory(t, &mut report)
            })
            .collect();
        prop_assume!(!clean.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trips.jsonl");
        write_trajectories_jsonl(&path, &clean).unwrap();
        let (loaded, again) = load_trajectories(&path).unwrap();
        prop_assert_eq!(loaded, clean);
        prop_assert_eq!(again.duplicate_timestamps + again.invalid_points + again.gap_splits + again.short_pieces, 0);
    }
}
