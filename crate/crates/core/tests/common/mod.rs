#![allow(dead_code)]

use celleta::data::synth::{DomainSpec, SynthConfig, SyntheticCity};
use celleta::data::{SideData, Trajectory};
use celleta::pipeline::PipelineConfig;

/// Pipeline settings small enough for tests: narrow networks, short
/// schedules, and 1000/100 source/target trajectories.
pub fn small_pipeline(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_seed(seed);
    cfg.models.classifier_hidden = vec![32];
    cfg.models.eta_hidden = vec![32, 32, 32];
    for t in [&mut cfg.models.classifier_train, &mut cfg.models.eta_train] {
        t.learning_rate = 0.003;
        t.dropout = 0.0;
    }
    cfg.models.classifier_train.epochs = 30;
    cfg.models.eta_train.epochs = 60;
    cfg.transfer.epochs = 40;
    cfg.sdne.embed_dim = 8;
    cfg.sdne.hidden = vec![32];
    cfg.sdne.epochs = 50;
    cfg.synth.domains[0].trajectories = 1000;
    cfg.synth.domains[1].trajectories = 100;
    cfg
}

pub fn world(cfg: &SynthConfig) -> (SyntheticCity, Vec<Trajectory>, SideData) {
    let city = SyntheticCity::new(cfg.clone()).expect("valid synthetic config");
    let trajs = city
        .generate()
        .expect("generation succeeds")
        .into_iter()
        .map(|d| d.trajectory)
        .collect();
    let side = city.side_data();
    (city, trajs, side)
}

/// Constant speed everywhere and always: no noise, rush, cell variation or
/// side-data slowdowns.
pub fn quiet_synth(trajectories: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        cell_variation: 0.0,
        rush_amplitude: 0.0,
        noise: 0.0,
        weather_records: 0,
        event_records: 0,
        domains: vec![DomainSpec {
            name: "RV".into(),
            speed_multiplier: 1.0,
            trajectories,
        }],
        seed,
        ..Default::default()
    }
}
