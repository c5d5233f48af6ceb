use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use celleta::data::container::Container;
use celleta::data::synth::{synth_generate, TRAJECTORY_FILE};
use celleta::eval::{
    grouped_report, overall_report, write_comparison_csv, write_csv, write_history_csv,
    write_reports_csv, GroupBy,
};
use celleta::knowledge::KnowledgeGrids;
use celleta::models::{train_eta, ClassifierModel, ModelBundle, TrainReport};
use celleta::pipeline::{
    extract, load_inputs, prepare_domain, route_outcomes, run_transfer_experiment, split_by_domain,
    train_roadnet, transfer_domain, DomainSplit, Inputs, PipelineConfig,
};
use celleta::predict::{estimate_route, RouteRequest};
use celleta::roadnet::CellEmbedding;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "celleta", version, about = "Cell-based travel-time estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of every stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Working directory for artifacts and reports.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city with trajectories and side data.
    Synth(Common),
    /// Build knowledge grids for the source and target domains.
    Extract(Common),
    /// Build the road graph and train the cell embedding.
    TrainRoadnet(Common),
    /// Train the source-domain traffic classifier.
    TrainClassifier(Common),
    /// Train the source-domain travel-time model and write its bundle.
    TrainEta(Common),
    /// Fine-tune the source bundle on the target domain.
    Transfer(Common),
    /// Estimate the travel time of a route.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Route request JSON; overrides `data.route`.
        #[arg(long)]
        route: Option<PathBuf>,
        /// Domain whose models to use; defaults to the route's domain.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Score the trained bundles on held-out routes.
    Eval(Common),
}

/// Wraps failures that are the caller's fault rather than the data's.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<celleta::Error>() {
        Some(inner) if inner.is_data_error() => 3,
        _ => 2,
    }
}

struct Ctx {
    cfg: PipelineConfig,
    out: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self> {
        let mut cfg = match &c.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Invalid(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str::<PipelineConfig>(&text)
                    .map_err(|e| Invalid(format!("invalid config {}: {e}", path.display())))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = c.seed {
            cfg = cfg.with_seed(seed);
        }
        cfg.validate()?;
        fs::create_dir_all(&c.out)
            .with_context(|| format!("creating {}", c.out.display()))
            .map_err(|e| Invalid(format!("{e:#}")))?;
        Ok(Self {
            cfg,
            out: c.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Inputs named by the config, falling back to a synthetic city in `out`.
    fn inputs(&self) -> Result<Inputs> {
        let mut paths = self.cfg.data.clone();
        if paths.trajectories.is_none() {
            paths.trajectories = Some(self.path(TRAJECTORY_FILE));
        }
        Ok(load_inputs(&paths, self.cfg.grid)?)
    }

    fn split(&self, inputs: &Inputs, domain: &str) -> Result<DomainSplit> {
        split_by_domain(&inputs.trajectories, self.cfg.seed)?
            .remove(domain)
            .ok_or_else(|| {
                celleta::Error::InsufficientData(format!("no trajectories for domain {domain}"))
                    .into()
            })
    }

    fn domains(&self) -> [&str; 2] {
        [&self.cfg.source_domain, &self.cfg.target_domain]
    }

    fn read(&self, name: &str) -> Result<Container> {
        let path = self.path(name);
        Container::read(&path).with_context(|| format!("reading {}", path.display()))
    }

    fn write(&self, name: &str, c: &Container) -> Result<()> {
        c.write(self.path(name))?;
        log::info!("wrote {}", self.path(name).display());
        Ok(())
    }
}

fn knowledge_file(domain: &str) -> String {
    format!("knowledge-{domain}.ceta")
}

fn classifier_file(domain: &str) -> String {
    format!("classifier-{domain}.ceta")
}

fn bundle_file(domain: &str) -> String {
    format!("bundle-{domain}.ceta")
}

const EMBEDDING_FILE: &str = "embedding.ceta";

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(c) => synth(&Ctx::new(&c)?),
        Command::Extract(c) => extract_stage(&Ctx::new(&c)?),
        Command::TrainRoadnet(c) => roadnet_stage(&Ctx::new(&c)?),
        Command::TrainClassifier(c) => classifier_stage(&Ctx::new(&c)?),
        Command::TrainEta(c) => eta_stage(&Ctx::new(&c)?),
        Command::Transfer(c) => transfer_stage(&Ctx::new(&c)?),
        Command::Predict {
            common,
            route,
            domain,
        } => predict_stage(&Ctx::new(&common)?, route, domain),
        Command::Eval(c) => eval_stage(&Ctx::new(&c)?),
    }
}

#[derive(Serialize)]
struct SynthRow<'a> {
    domain: &'a str,
    trajectories: usize,
    points: usize,
}

fn synth(ctx: &Ctx) -> Result<()> {
    let (_, drives) = synth_generate(&ctx.cfg.synth, &ctx.out)?;
    let rows: Vec<SynthRow> = ctx
        .cfg
        .synth
        .domains
        .iter()
        .map(|d| {
            let mine = drives.iter().filter(|x| x.trajectory.domain == d.name);
            SynthRow {
                domain: &d.name,
                trajectories: mine.clone().count(),
                points: mine.map(|x| x.trajectory.points.len()).sum(),
            }
        })
        .collect();
    write_csv(&ctx.path("synth.csv"), &rows)?;
    log::info!(
        "generated {} trajectories in {}",
        drives.len(),
        ctx.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ExtractRow<'a> {
    domain: &'a str,
    train: usize,
    val: usize,
    test: usize,
    skipped_trajectories: usize,
    samples: usize,
    observed_slots: usize,
    interpolated_slots: usize,
}

fn extract_stage(ctx: &Ctx) -> Result<()> {
    let inputs = ctx.inputs()?;
    let mut rows = Vec::new();
    for domain in ctx.domains() {
        let split = ctx.split(&inputs, domain)?;
        let (grids, report) = extract(&split.train, &inputs.side, &inputs.grid, &ctx.cfg)?;
        ctx.write(&knowledge_file(domain), &grids.to_container()?)?;
        rows.push(ExtractRow {
            domain,
            train: split.train.len(),
            val: split.val.len(),
            test: split.test.len(),
            skipped_trajectories: report.skipped_trajectories,
            samples: report.samples,
            observed_slots: report.observed_slots,
            interpolated_slots: report.interpolated_slots,
        });
    }
    write_csv(&ctx.path("extract.csv"), &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

fn roadnet_stage(ctx: &Ctx) -> Result<()> {
    let inputs = ctx.inputs()?;
    let mut train = Vec::new();
    for domain in ctx.domains() {
        train.extend(ctx.split(&inputs, domain)?.train);
    }
    let (graph, sdne) = train_roadnet(&train, &inputs.grid, &ctx.cfg.sdne)?;
    fs::write(ctx.path("roadnet-edges.txt"), graph.edge_list())?;
    ctx.write(
        EMBEDDING_FILE,
        &sdne.embedding.to_container(graph.edge_count())?,
    )?;
    let rows: Vec<LossRow> = (1..)
        .zip(&sdne.losses)
        .map(|(epoch, &loss)| LossRow { epoch, loss })
        .collect();
    write_csv(&ctx.path("roadnet.csv"), &rows)?;
    log::info!(
        "road graph: {} cells, {} edges",
        graph.len(),
        graph.edge_count()
    );
    Ok(())
}

fn log_report(what: &str, domain: &str, r: &TrainReport) {
    log::info!(
        "{what} {domain}: {} epochs, best {}, validation metric {:?}",
        r.history.epochs_run(),
        r.history.best_epoch,
        r.validation_metric
    );
}

fn classifier_stage(ctx: &Ctx) -> Result<()> {
    let inputs = ctx.inputs()?;
    let domain = &ctx.cfg.source_domain;
    let data = prepare_domain(
        ctx.split(&inputs, domain)?,
        &inputs.side,
        &inputs.grid,
        &ctx.cfg,
    )?;
    let (train, val) = data.classifier_rows(ctx.cfg.models.n_classes)?;
    let (model, report) = celleta::models::train_classifier(&train, &val, &ctx.cfg.models)?;
    ctx.write(&classifier_file(domain), &model.to_container()?)?;
    write_history_csv(
        &ctx.path(&format!("classifier-{domain}.csv")),
        &report.history,
    )?;
    log_report("classifier", domain, &report);
    Ok(())
}

fn eta_stage(ctx: &Ctx) -> Result<()> {
    let inputs = ctx.inputs()?;
    let domain = &ctx.cfg.source_domain;
    let classifier = ClassifierModel::from_container(&ctx.read(&classifier_file(domain))?)?;
    let embedding = CellEmbedding::from_container(&ctx.read(EMBEDDING_FILE)?)?;
    let data = prepare_domain(
        ctx.split(&inputs, domain)?,
        &inputs.side,
        &inputs.grid,
        &ctx.cfg,
    )?;
    let top_k = ctx.cfg.models.top_k;
    let (train, val) = data.eta_rows(&classifier, &embedding, top_k)?;
    let (eta, report) = train_eta(&train, &val, &ctx.cfg.models)?;
    let bundle = ModelBundle::new(domain, inputs.grid, top_k, classifier, eta, embedding)?;
    ctx.write(&bundle_file(domain), &bundle.to_container()?)?;
    write_history_csv(&ctx.path(&format!("eta-{domain}.csv")), &report.history)?;
    log_report("travel-time model", domain, &report);
    Ok(())
}

fn transfer_stage(ctx: &Ctx) -> Result<()> {
    let inputs = ctx.inputs()?;
    let (src, tgt) = (&ctx.cfg.source_domain, &ctx.cfg.target_domain);
    let source = ModelBundle::from_container(&ctx.read(&bundle_file(src))?)?;
    let data = prepare_domain(
        ctx.split(&inputs, tgt)?,
        &inputs.side,
        &inputs.grid,
        &ctx.cfg,
    )?;
    let models = transfer_domain(&source, tgt, &data, &ctx.cfg.transfer)?;
    ctx.write(&bundle_file(tgt), &models.bundle.to_container()?)?;
    write_history_csv(
        &ctx.path(&format!("transfer-classifier-{tgt}.csv")),
        &models.classifier_report.history,
    )?;
    write_history_csv(
        &ctx.path(&format!("transfer-eta-{tgt}.csv")),
        &models.eta_report.history,
    )?;
    log_report("transferred travel-time model", tgt, &models.eta_report);
    Ok(())
}

#[derive(Serialize)]
struct BreakdownRow {
    h: u32,
    w: u32,
    interval: u32,
    entry_t: f64,
    chord_len: f64,
    seconds: f64,
}

fn predict_stage(ctx: &Ctx, route: Option<PathBuf>, domain: Option<String>) -> Result<()> {
    let path = route
        .or_else(|| ctx.cfg.data.route.clone())
        .ok_or_else(|| Invalid("no route given: pass --route or set data.route".into()))?;
    let text = fs::read_to_string(&path)
        .map_err(celleta::Error::Io)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut req: RouteRequest = serde_json::from_str(&text)
        .map_err(celleta::Error::Json)
        .with_context(|| format!("parsing {}", path.display()))?;
    if let Some(d) = domain {
        req.domain = d;
    }
    let bundle = ModelBundle::from_container(&ctx.read(&bundle_file(&req.domain))?)?;
    let grids = KnowledgeGrids::from_container(&ctx.read(&knowledge_file(&req.domain))?)?;
    let res = estimate_route(&req, &bundle, &grids)?;
    fs::write(ctx.path("eta.json"), serde_json::to_vec_pretty(&res)?)?;
    let rows: Vec<BreakdownRow> = res
        .breakdown
        .iter()
        .map(|c| BreakdownRow {
            h: c.cell.h,
            w: c.cell.w,
            interval: c.interval,
            entry_t: c.entry_t,
            chord_len: c.chord_len,
            seconds: c.seconds,
        })
        .collect();
    write_csv(&ctx.path("eta.csv"), &rows)?;
    println!("{:.1} s, arriving {}", res.total_seconds, res.arrival);
    if res.knowledge_degraded {
        log::warn!("weather and event data do not cover this trip");
    }
    Ok(())
}

fn group_name(g: GroupBy) -> &'static str {
    match g {
        GroupBy::Hour => "hour",
        GroupBy::DistanceBand => "distance",
        GroupBy::EventCount => "events",
    }
}

fn eval_stage(ctx: &Ctx) -> Result<()> {
    let inputs = ctx.inputs()?;
    let mut scored = 0;
    for domain in ctx.domains() {
        if !ctx.path(&bundle_file(domain)).exists() {
            log::warn!("no bundle for {domain}; skipped");
            continue;
        }
        let bundle = ModelBundle::from_container(&ctx.read(&bundle_file(domain))?)?;
        let grids = KnowledgeGrids::from_container(&ctx.read(&knowledge_file(domain))?)?;
        let test = ctx.split(&inputs, domain)?.test;
        let outcomes = route_outcomes(&test, &bundle, &grids)?;
        write_csv(&ctx.path(&format!("outcomes-{domain}.csv")), &outcomes)?;
        let overall = overall_report(&outcomes)?;
        log::info!(
            "{domain}: mape {:.2}%, rmse {:.1} s over {} routes",
            overall.mape,
            overall.rmse,
            overall.n
        );
        write_reports_csv(&ctx.path(&format!("eval-{domain}.csv")), &[overall])?;
        for &g in &ctx.cfg.eval.group_by {
            let reports = grouped_report(&outcomes, g, grids.grid.tz_offset_s)?;
            let name = format!("eval-{domain}-{}.csv", group_name(g));
            write_reports_csv(&ctx.path(&name), &reports)?;
        }
        scored += 1;
    }
    if ctx.cfg.eval.transfer_experiment {
        let exp =
            run_transfer_experiment(&inputs.trajectories, &inputs.side, &inputs.grid, &ctx.cfg)?;
        write_comparison_csv(&ctx.path("comparison.csv"), &exp.rows)?;
        for r in &exp.rows {
            log::info!(
                "{}: mape {:.2}%, converged at epoch {}",
                r.approach,
                r.mape,
                r.epochs_to_converge
            );
        }
    } else if scored == 0 {
        return Err(celleta::Error::InsufficientData(
            "nothing to evaluate: no bundles and the transfer experiment is off".into(),
        )
        .into());
    }
    Ok(())
}
