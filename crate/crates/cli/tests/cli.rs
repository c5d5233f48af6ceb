use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "seed": 3,
  "sdne": { "embed_dim": 4, "hidden": [16], "epochs": 10 },
  "models": {
    "classifier_hidden": [16],
    "eta_hidden": [16, 16],
    "classifier_train": { "epochs": 5, "learning_rate": 0.003, "dropout": 0.0 },
    "eta_train": { "epochs": 8, "learning_rate": 0.003, "dropout": 0.0 }
  },
  "transfer": { "epochs": 5 },
  "knowledge": { "interpolate": false },
  "eval": { "transfer_experiment": true },
  "synth": {
    "grid": { "lat_min": 39.1, "lon_min": -84.55, "phi": 0.001, "rows": 12, "cols": 12, "intervals": 96, "tz_offset_s": 0 },
    "domains": [
      { "name": "RV", "speed_multiplier": 1.0, "trajectories": 120 },
      { "name": "SV", "speed_multiplier": 0.7, "trajectories": 40 }
    ]
  }
}"#;

fn celleta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_celleta"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stage(name: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        name,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    celleta(&args)
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn header(path: PathBuf) -> String {
    fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .next()
        .unwrap()
        .to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn every_stage_runs_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "config.json", TINY);
    let out = dir.path().join("work");
    for s in [
        "synth",
        "extract",
        "train-roadnet",
        "train-classifier",
        "train-eta",
        "transfer",
    ] {
        ok(&stage(s, &cfg, &out, &[]));
    }
    let route = write(
        dir.path(),
        "route.json",
        r#"{"points":[{"lat":39.1015,"lon":-84.5485},{"lat":39.1015,"lon":-84.5405}],"start_time":1515484800,"domain":"SV"}"#,
    );
    ok(&stage(
        "predict",
        &cfg,
        &out,
        &["--route", route.to_str().unwrap()],
    ));
    ok(&stage("eval", &cfg, &out, &[]));

    assert_eq!(header(out.join("synth.csv")), "domain,trajectories,points");
    assert_eq!(
        header(out.join("extract.csv")),
        "domain,train,val,test,skipped_trajectories,samples,observed_slots,interpolated_slots"
    );
    assert_eq!(header(out.join("roadnet.csv")), "epoch,loss");
    for f in ["classifier-RV.csv", "eta-RV.csv", "transfer-eta-SV.csv"] {
        assert_eq!(header(out.join(f)), "epoch,train_loss,val_loss");
    }
    assert_eq!(
        header(out.join("eta.csv")),
        "h,w,interval,entry_t,chord_len,seconds"
    );
    assert_eq!(header(out.join("eval-SV-hour.csv")), "group,mape,rmse,n");
    let comparison = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(comparison.lines().count(), 3);
    assert!(comparison.lines().nth(1).unwrap().starts_with("transfer,"));

    let eta: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("eta.json")).unwrap()).unwrap();
    assert_eq!(eta["domain"], "SV");
    assert!(eta["total_seconds"].as_f64().unwrap() > 0.0);
    assert_eq!(eta["breakdown"].as_array().unwrap().len(), 9);
}

#[test]
fn seed_flag_controls_generation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "config.json", TINY);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&stage("synth", &cfg, &out, &["--seed", seed]));
        fs::read(out.join("trajectories.jsonl")).unwrap()
    };
    assert_eq!(run("a", "5"), run("b", "5"));
    assert_ne!(run("a", "5"), run("c", "6"));
}

#[test]
fn exit_codes_separate_bad_input_from_bad_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("work");
    let code = |o: Output| o.status.code().unwrap();

    let broken = write(dir.path(), "broken.json", "{ \"seed\": ");
    assert_eq!(code(stage("extract", &broken, &out, &[])), 2);
    let same = write(dir.path(), "same.json", r#"{"source_domain": "SV"}"#);
    assert_eq!(code(stage("synth", &same, &out, &[])), 2);
    let unknown = write(
        dir.path(),
        "unknown.json",
        r#"{"synth": {"road_spacing": 0}}"#,
    );
    assert_eq!(code(stage("synth", &unknown, &out, &[])), 2);

    let cfg = write(dir.path(), "config.json", TINY);
    assert_eq!(
        code(stage("extract", &cfg, &out, &[])),
        3,
        "no trajectories yet"
    );
    ok(&stage("synth", &cfg, &out, &[]));
    assert_eq!(
        code(stage("train-eta", &cfg, &out, &[])),
        3,
        "no classifier yet"
    );
    assert_eq!(code(stage("predict", &cfg, &out, &[])), 2, "no route given");

    fs::write(out.join("trajectories.jsonl"), "{\"id\": 1}\n").unwrap();
    assert_eq!(
        code(stage("extract", &cfg, &out, &[])),
        3,
        "malformed trajectories"
    );
}

#[test]
fn route_outside_grid_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "config.json", TINY);
    let out = dir.path().join("work");
    for s in [
        "synth",
        "extract",
        "train-roadnet",
        "train-classifier",
        "train-eta",
    ] {
        ok(&stage(s, &cfg, &out, &[]));
    }
    let far = write(
        dir.path(),
        "far.json",
        r#"{"points":[{"lat":10.0,"lon":10.0},{"lat":10.1,"lon":10.0}],"start_time":0,"domain":"RV"}"#,
    );
    let o = stage("predict", &cfg, &out, &["--route", far.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}
