//! End-to-end orchestration: split, extract knowledge, embed the road
//! network, train per-domain models, transfer, and score routes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::synth::{SynthConfig, GRID_FILE};
use crate::data::{load_side_dir, load_trajectories, split_dataset, SideData, Trajectory};
use crate::error::{Error, Result};
use crate::eval::{overall_report, ComparisonRow, GroupBy, RouteOutcome, CONVERGENCE_TOL};
use crate::geo::GridSpec;
use crate::knowledge::{
    build_knowledge, cell_path, path_length, KnowledgeConfig, KnowledgeGrids, KnowledgeReport,
};
use crate::models::{
    cell_crossings, classifier_row, train_classifier, train_eta, transfer_classifier, transfer_eta,
    untrained_classifier, ClassifierModel, ModelBundle, ModelConfig, TrainReport, TrainingRow,
};
use crate::neural::{History, TrainConfig};
use crate::predict::{estimate_route, RouteRequest};
use crate::roadnet::{
    build_road_graph, train_sdne, CellEmbedding, RoadGraph, SdneConfig, SdneTraining,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    /// JSONL or CSV trajectory file.
    pub trajectories: Option<PathBuf>,
    /// Directory holding the optional POI, weather, event and holiday files.
    pub side_dir: Option<PathBuf>,
    /// Route request for `predict`.
    pub route: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub group_by: Vec<GroupBy>,
    /// Also train a scratch baseline for the target domain and compare.
    pub transfer_experiment: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            group_by: vec![GroupBy::Hour, GroupBy::DistanceBand, GroupBy::EventCount],
            transfer_experiment: true,
        }
    }
}

/// The single configuration document shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Seeds every stochastic stage.
    pub seed: u64,
    /// Map grid; when absent, `grid.json` beside the trajectory file is used.
    pub grid: Option<GridSpec>,
    pub source_domain: String,
    pub target_domain: String,
    pub knowledge: KnowledgeConfig,
    pub sdne: SdneConfig,
    pub models: ModelConfig,
    /// Fine-tuning schedule for the target-domain heads.
    pub transfer: TrainConfig,
    /// Folds used to build out-of-fold features for training rows; below 2
    /// the rows read the full training knowledge.
    pub feature_folds: usize,
    pub synth: SynthConfig,
    pub data: DataPaths,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            grid: None,
            source_domain: "RV".into(),
            target_domain: "SV".into(),
            knowledge: KnowledgeConfig::default(),
            sdne: SdneConfig::default(),
            models: ModelConfig::default(),
            transfer: TrainConfig {
                learning_rate: 0.03,
                dropout: 0.0,
                ..TrainConfig::default()
            },
            feature_folds: 5,
            synth: SynthConfig::default(),
            data: DataPaths::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Copies `seed` into every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.knowledge.interpolator.seed = seed;
        self.sdne.seed = seed;
        self.models.classifier_train.seed = seed;
        self.models.eta_train.seed = seed;
        self.transfer.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        if self.source_domain == self.target_domain {
            return Err(Error::BadConfig(
                "source and target domains must differ".into(),
            ));
        }
        self.sdne.validate()?;
        self.models.validate()?;
        self.transfer.validate()?;
        self.synth.validate()
    }

    /// Budget of the scratch baseline: the model schedules cut to the
    /// fine-tuning epochs and patience.
    pub fn scratch_models(&self) -> ModelConfig {
        let mut m = self.models.clone();
        for t in [&mut m.classifier_train, &mut m.eta_train] {
            t.epochs = self.transfer.epochs;
            t.patience = self.transfer.patience;
        }
        m
    }
}

/// Trajectories, side data and grid named by a configuration.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub trajectories: Vec<Trajectory>,
    pub side: SideData,
    pub grid: GridSpec,
}

/// Loads the inputs. Side data defaults to the trajectory file's directory
/// and the grid to `grid.json` there.
pub fn load_inputs(paths: &DataPaths, grid: Option<GridSpec>) -> Result<Inputs> {
    let traj_path = paths
        .trajectories
        .as_deref()
        .ok_or_else(|| Error::BadConfig("data.trajectories is not set".into()))?;
    let (trajectories, _) = load_trajectories(traj_path)?;
    let dir = traj_path.parent().unwrap_or(Path::new("."));
    let grid = match grid {
        Some(g) => g,
        None => {
            let path = dir.join(GRID_FILE);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Error::BadConfig(format!("no grid configured and {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)?
        }
    };
    grid.validate()?;
    let side = load_side_dir(paths.side_dir.as_deref().unwrap_or(dir))?;
    Ok(Inputs {
        trajectories,
        side,
        grid,
    })
}

/// Train, validation and test trajectories of one domain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainSplit {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

/// Splits each domain on its own so both keep the 70/10/20 proportions.
pub fn split_by_domain(
    trajectories: &[Trajectory],
    seed: u64,
) -> Result<BTreeMap<String, DomainSplit>> {
    let mut by_domain: BTreeMap<String, Vec<Trajectory>> = BTreeMap::new();
    for t in trajectories {
        by_domain
            .entry(t.domain.clone())
            .or_default()
            .push(t.clone());
    }
    by_domain
        .into_iter()
        .map(|(d, trajs)| {
            let split = split_dataset(&trajs, seed)?;
            let [train, val, test] = split
                .partition(&trajs)
                .map(|v| v.into_iter().cloned().collect());
            Ok((d, DomainSplit { train, val, test }))
        })
        .collect()
}

pub fn domain_split<'a>(
    splits: &'a BTreeMap<String, DomainSplit>,
    domain: &str,
) -> Result<&'a DomainSplit> {
    splits
        .get(domain)
        .ok_or_else(|| Error::InsufficientData(format!("no trajectories for domain {domain}")))
}

pub fn extract(
    train: &[Trajectory],
    side: &SideData,
    grid: &GridSpec,
    cfg: &PipelineConfig,
) -> Result<(KnowledgeGrids, KnowledgeReport)> {
    build_knowledge(train, side, grid, &cfg.knowledge)
}

/// Road graph from observed cell transitions and its trained embedding.
pub fn train_roadnet(
    trajectories: &[Trajectory],
    grid: &GridSpec,
    cfg: &SdneConfig,
) -> Result<(RoadGraph, SdneTraining)> {
    let paths: Vec<_> = trajectories.iter().map(|t| cell_path(t, grid)).collect();
    let graph = build_road_graph(&paths);
    let training = train_sdne(&graph, cfg)?;
    Ok((graph, training))
}

/// Largest pooled speed in the grids, or 1 when nothing was observed.
pub fn global_max_speed(grids: &KnowledgeGrids) -> f64 {
    grids.gps.max_speed().filter(|&m| m > 0.0).unwrap_or(1.0)
}

fn crossings_of(traj: &Trajectory, grid: &GridSpec) -> Result<Vec<crate::models::Crossing>> {
    match cell_crossings(&traj.points, grid) {
        Err(Error::OutOfBounds { .. }) => {
            log::warn!("trajectory {} leaves the grid; skipped", traj.id);
            Ok(Vec::new())
        }
        other => other,
    }
}

pub fn classifier_rows(
    trajectories: &[Trajectory],
    grids: &KnowledgeGrids,
    global_max: f64,
    n_classes: usize,
) -> Result<Vec<TrainingRow>> {
    let mut rows = Vec::new();
    for t in trajectories {
        for c in crossings_of(t, &grids.grid)? {
            if let Some(r) =
                classifier_row(grids, c.cell, c.entry_t, global_max, n_classes, &t.domain)?
            {
                rows.push(r);
            }
        }
    }
    Ok(rows)
}

pub fn eta_rows(
    trajectories: &[Trajectory],
    grids: &KnowledgeGrids,
    classifier: &ClassifierModel,
    embedding: &CellEmbedding,
    top_k: usize,
) -> Result<Vec<TrainingRow>> {
    let mut rows = Vec::new();
    for t in trajectories {
        for c in crossings_of(t, &grids.grid)? {
            if c.seconds <= 0.0 {
                continue;
            }
            rows.push(crate::models::eta_row(
                grids, classifier, embedding, &c, top_k, &t.domain,
            )?);
        }
    }
    Ok(rows)
}

/// One domain's trajectories with its knowledge. Training rows take their
/// features from grids built without their own fold, so a crossing never
/// sees its own speed observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub split: DomainSplit,
    /// Built from every training trajectory; used for validation, test and
    /// prediction.
    pub grids: KnowledgeGrids,
    pub report: KnowledgeReport,
    /// Each fold of training trajectories with grids built from the others.
    pub folds: Vec<(Vec<Trajectory>, KnowledgeGrids)>,
}

pub fn prepare_domain(
    split: DomainSplit,
    side: &SideData,
    grid: &GridSpec,
    cfg: &PipelineConfig,
) -> Result<DomainData> {
    let (grids, report) = extract(&split.train, side, grid, cfg)?;
    let k = cfg.feature_folds;
    let folds = if k < 2 || split.train.len() < k {
        vec![(split.train.clone(), grids.clone())]
    } else {
        (0..k)
            .map(|f| {
                let (inside, outside): (Vec<_>, Vec<_>) = split
                    .train
                    .iter()
                    .enumerate()
                    .partition(|(i, _)| i % k == f);
                let rest: Vec<Trajectory> = outside.into_iter().map(|(_, t)| t.clone()).collect();
                let (g, _) = extract(&rest, side, grid, cfg)?;
                Ok((inside.into_iter().map(|(_, t)| t.clone()).collect(), g))
            })
            .collect::<Result<_>>()?
    };
    Ok(DomainData {
        split,
        grids,
        report,
        folds,
    })
}

impl DomainData {
    /// Training and validation classifier rows.
    pub fn classifier_rows(
        &self,
        n_classes: usize,
    ) -> Result<(Vec<TrainingRow>, Vec<TrainingRow>)> {
        let gmax = global_max_speed(&self.grids);
        let mut train = Vec::new();
        for (trajs, g) in &self.folds {
            train.extend(classifier_rows(trajs, g, gmax, n_classes)?);
        }
        let val = classifier_rows(&self.split.val, &self.grids, gmax, n_classes)?;
        Ok((train, val))
    }

    /// Training and validation travel-time rows.
    pub fn eta_rows(
        &self,
        classifier: &ClassifierModel,
        embedding: &CellEmbedding,
        top_k: usize,
    ) -> Result<(Vec<TrainingRow>, Vec<TrainingRow>)> {
        let mut train = Vec::new();
        for (trajs, g) in &self.folds {
            train.extend(eta_rows(trajs, g, classifier, embedding, top_k)?);
        }
        let val = eta_rows(&self.split.val, &self.grids, classifier, embedding, top_k)?;
        Ok((train, val))
    }
}

/// A trained bundle with the training reports of its two models.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainModels {
    pub bundle: ModelBundle,
    pub classifier_report: TrainReport,
    pub eta_report: TrainReport,
    pub wall_time_s: f64,
}

pub fn train_domain(
    domain: &str,
    data: &DomainData,
    embedding: &CellEmbedding,
    models: &ModelConfig,
) -> Result<DomainModels> {
    let started = Instant::now();
    let (c_train, c_val) = data.classifier_rows(models.n_classes)?;
    let (classifier, classifier_report) = match train_classifier(&c_train, &c_val, models) {
        Err(Error::InsufficientData(why)) if !c_train.is_empty() => {
            log::warn!("{domain}: classifier left untrained ({why})");
            let report = TrainReport {
                history: History::default(),
                validation_metric: None,
            };
            (untrained_classifier(models)?, report)
        }
        other => other?,
    };
    let (e_train, e_val) = data.eta_rows(&classifier, embedding, models.top_k)?;
    let (eta, eta_report) = train_eta(&e_train, &e_val, models)?;
    let bundle = ModelBundle::new(
        domain,
        data.grids.grid,
        models.top_k,
        classifier,
        eta,
        embedding.clone(),
    )?;
    Ok(DomainModels {
        bundle,
        classifier_report,
        eta_report,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Fine-tunes the heads of `source` on the target domain.
pub fn transfer_domain(
    source: &ModelBundle,
    domain: &str,
    data: &DomainData,
    cfg: &TrainConfig,
) -> Result<DomainModels> {
    if source.grid != data.grids.grid {
        return Err(Error::ModelGridMismatch);
    }
    let started = Instant::now();
    let (c_train, c_val) = data.classifier_rows(source.classifier.n_classes)?;
    let (classifier, classifier_report) =
        transfer_classifier(&source.classifier, &c_train, &c_val, cfg)?;
    let (e_train, e_val) = data.eta_rows(&classifier, &source.embedding, source.top_k)?;
    let (eta, eta_report) = transfer_eta(&source.eta, &e_train, &e_val, cfg)?;
    let bundle = ModelBundle::new(
        domain,
        data.grids.grid,
        source.top_k,
        classifier,
        eta,
        source.embedding.clone(),
    )?;
    Ok(DomainModels {
        bundle,
        classifier_report,
        eta_report,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Estimates every test trajectory as a route and pairs it with the
/// recorded duration.
pub fn route_outcomes(
    test: &[Trajectory],
    bundle: &ModelBundle,
    grids: &KnowledgeGrids,
) -> Result<Vec<RouteOutcome>> {
    let mut out = Vec::with_capacity(test.len());
    for traj in test {
        let (Some(first), Some(last)) = (traj.points.first(), traj.points.last()) else {
            continue;
        };
        let truth = last.t - first.t;
        if truth <= 0.0 {
            continue;
        }
        let res = match estimate_route(&RouteRequest::from_trajectory(traj)?, bundle, grids) {
            Err(Error::OutOfBounds { .. }) | Err(Error::EmptyRoute) => {
                log::warn!("route {} could not be estimated; skipped", traj.id);
                continue;
            }
            other => other?,
        };
        let g = &grids.grid;
        let events = res
            .breakdown
            .iter()
            .map(|c| {
                grids
                    .events
                    .get(c.cell, g.absolute_interval(c.entry_t))
                    .unwrap_or(0)
            })
            .sum();
        out.push(RouteOutcome {
            id: traj.id.clone(),
            start_t: first.t,
            distance_m: path_length(traj),
            events,
            truth_s: truth,
            predicted_s: res.total_seconds,
        });
    }
    Ok(out)
}

fn comparison_row(
    approach: &str,
    m: &DomainModels,
    outcomes: &[RouteOutcome],
) -> Result<ComparisonRow> {
    let r = overall_report(outcomes)?;
    let h = &m.eta_report.history;
    Ok(ComparisonRow {
        approach: approach.into(),
        mape: r.mape,
        rmse: r.rmse,
        n: r.n,
        wall_time_s: m.wall_time_s,
        epochs_to_best: h.best_epoch,
        epochs_to_converge: h.converged_epoch(CONVERGENCE_TOL),
        epochs_run: h.epochs_run(),
    })
}

/// Everything produced by one full run over both domains.
#[derive(Debug, Clone)]
pub struct TransferExperiment {
    pub source_data: DomainData,
    pub target_data: DomainData,
    pub graph: RoadGraph,
    pub source: DomainModels,
    pub transfer: DomainModels,
    pub scratch: DomainModels,
    pub transfer_outcomes: Vec<RouteOutcome>,
    pub scratch_outcomes: Vec<RouteOutcome>,
    /// Exactly two rows: transfer, then scratch.
    pub rows: Vec<ComparisonRow>,
}

/// Trains the source domain, transfers it to the target, trains a target
/// model from scratch on the same budget and scores both on the target test
/// routes.
pub fn run_transfer_experiment(
    trajectories: &[Trajectory],
    side: &SideData,
    grid: &GridSpec,
    cfg: &PipelineConfig,
) -> Result<TransferExperiment> {
    cfg.validate()?;
    let mut splits = split_by_domain(trajectories, cfg.seed)?;
    let mut take = |d: &str| {
        splits
            .remove(d)
            .ok_or_else(|| Error::InsufficientData(format!("no trajectories for domain {d}")))
    };
    let (src, tgt) = (take(&cfg.source_domain)?, take(&cfg.target_domain)?);
    let all_train: Vec<Trajectory> = src.train.iter().chain(&tgt.train).cloned().collect();
    let (graph, sdne) = train_roadnet(&all_train, grid, &cfg.sdne)?;
    let source_data = prepare_domain(src, side, grid, cfg)?;
    let target_data = prepare_domain(tgt, side, grid, cfg)?;

    let source = train_domain(
        &cfg.source_domain,
        &source_data,
        &sdne.embedding,
        &cfg.models,
    )?;
    let transfer = transfer_domain(
        &source.bundle,
        &cfg.target_domain,
        &target_data,
        &cfg.transfer,
    )?;
    let scratch = train_domain(
        &cfg.target_domain,
        &target_data,
        &sdne.embedding,
        &cfg.scratch_models(),
    )?;

    let test = &target_data.split.test;
    let transfer_outcomes = route_outcomes(test, &transfer.bundle, &target_data.grids)?;
    let scratch_outcomes = route_outcomes(test, &scratch.bundle, &target_data.grids)?;
    let rows = vec![
        comparison_row("transfer", &transfer, &transfer_outcomes)?,
        comparison_row("scratch", &scratch, &scratch_outcomes)?,
    ];
    Ok(TransferExperiment {
        source_data,
        target_data,
        graph,
        source,
        transfer,
        scratch,
        transfer_outcomes,
        scratch_outcomes,
        rows,
    })
}
