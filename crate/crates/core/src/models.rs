//! Traffic-level classifier, per-crossing travel-time regressor, and the
//! freeze-the-body transfer of both to another vehicle domain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::container::{ByteReader, ByteWriter, Container};
use crate::error::{Error, Result};
use crate::geo::{cell_of, subdivide_segment, CellIndex, GpsPoint, GridSpec};
use crate::knowledge::{CellKnowledgeVector, KnowledgeGrids, CELL_VECTOR_WIDTH};
use crate::neural::{
    argmax, fit, Activation, DenseNet, History, Layer, LayerSpec, Matrix, NetLayout, Targets,
    TrainConfig,
};
use crate::roadnet::CellEmbedding;

pub const DEFAULT_CLASSES: usize = 10;
pub const DEFAULT_TOP_K: usize = 5;
/// Meters per degree of arc on the mean-radius sphere.
pub const METERS_PER_DEGREE: f64 = 111_195.0;
/// Floor applied to predicted crossing times, seconds.
pub const MIN_PREDICTED_SECONDS: f64 = 1e-3;

/// `N * mean / max` over the observed direction speeds.
pub fn speed_level(speeds: &[f64], n_classes: usize) -> Result<f64> {
    if speeds.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let max = speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
    Ok(n_classes as f64 * mean / max)
}

/// Traffic class of a profile: the level scaled to `[0, 1]`, times the
/// profile mean relative to `global_max`, bucketed into `n_classes` bins.
pub fn make_class_label(speeds: &[f64], global_max: f64, n_classes: usize) -> Result<usize> {
    let level = speed_level(speeds, n_classes)?;
    let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
    let frac = if global_max > 0.0 {
        mean / global_max
    } else {
        0.0
    };
    let bucket = (level / n_classes as f64 * frac * n_classes as f64).floor();
    Ok((bucket.max(0.0) as usize).min(n_classes - 1))
}

/// Keeps the `k` largest probabilities in place and zeroes the rest; ties
/// go to the lower index. The result is not renormalized.
pub fn top_k_mask(probs: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > probs.len() {
        return Err(Error::BadK { k, n: probs.len() });
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; probs.len()];
    for &i in &order[..k] {
        out[i] = probs[i];
    }
    Ok(out)
}

/// Widths of the pieces concatenated into an ETA feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub cell_vector: usize,
    pub n_classes: usize,
    pub embed_dim: usize,
    pub extras: usize,
}

impl FeatureLayout {
    pub fn new(n_classes: usize, embed_dim: usize) -> Self {
        Self {
            cell_vector: CELL_VECTOR_WIDTH,
            n_classes,
            embed_dim,
            extras: 1,
        }
    }

    pub fn width(&self) -> usize {
        self.cell_vector + self.n_classes + self.embed_dim + self.extras
    }
}

/// Chord length as a fraction of the cell diagonal, clipped to `[0, 1]`.
pub fn normalized_chord(chord_len: f64, phi: f64) -> f64 {
    (chord_len / (phi * METERS_PER_DEGREE * std::f64::consts::SQRT_2)).clamp(0.0, 1.0)
}

/// `[cell vector, σnorm, ω, normalized chord]`.
pub fn eta_features(
    vec: &CellKnowledgeVector,
    sigma_norm: &[f64],
    omega: &[f64],
    chord_len: f64,
    phi: f64,
    layout: &FeatureLayout,
) -> Result<Vec<f64>> {
    if vec.0.len() != layout.cell_vector
        || sigma_norm.len() != layout.n_classes
        || omega.len() != layout.embed_dim
    {
        return Err(Error::ShapeMismatch(format!(
            "features ({}, {}, {}) do not match layout {layout:?}",
            vec.0.len(),
            sigma_norm.len(),
            omega.len()
        )));
    }
    let mut out = Vec::with_capacity(layout.width());
    out.extend_from_slice(&vec.0);
    out.extend_from_slice(sigma_norm);
    out.extend_from_slice(omega);
    out.push(normalized_chord(chord_len, phi));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub top_k: usize,
    /// Hidden widths of the classifier body.
    pub classifier_hidden: Vec<usize>,
    /// Hidden widths of the travel-time body.
    pub eta_hidden: Vec<usize>,
    pub classifier_train: TrainConfig,
    pub eta_train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_classes: DEFAULT_CLASSES,
            top_k: DEFAULT_TOP_K,
            classifier_hidden: vec![256],
            eta_hidden: vec![256, 256, 256],
            classifier_train: TrainConfig::default(),
            eta_train: TrainConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::BadConfig("n_classes must be >= 2".into()));
        }
        if self.top_k == 0 || self.top_k > self.n_classes {
            return Err(Error::BadK {
                k: self.top_k,
                n: self.n_classes,
            });
        }
        if self.classifier_hidden.is_empty() || self.eta_hidden.is_empty() {
            return Err(Error::BadConfig(
                "both models need at least one hidden layer".into(),
            ));
        }
        self.classifier_train.validate()?;
        self.eta_train.validate()
    }
}

/// One traversal of one cell: entry time, chord inside the cell and the
/// time spent there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub cell: CellIndex,
    pub entry_t: f64,
    pub chord_len: f64,
    pub seconds: f64,
}

/// Consecutive same-cell sub-segments of a trajectory merged into
/// crossings. Pairs that do not move only add their dwell time.
pub fn cell_crossings(points: &[GpsPoint], g: &GridSpec) -> Result<Vec<Crossing>> {
    let mut out: Vec<Crossing> = Vec::new();
    let mut push = |cell: CellIndex, a: f64, b: f64, chord: f64| match out.last_mut() {
        Some(c) if c.cell == cell => {
            c.chord_len += chord;
            c.seconds += b - a;
        }
        _ => out.push(Crossing {
            cell,
            entry_t: a,
            chord_len: chord,
            seconds: b - a,
        }),
    };
    for pair in points.windows(2) {
        let (p, q) = (&pair[0], &pair[1]);
        if !(q.t > p.t) {
            continue;
        }
        if p.lat == q.lat && p.lon == q.lon {
            push(cell_of(p, g)?, p.t, q.t, 0.0);
            continue;
        }
        for s in subdivide_segment(p, q, g)? {
            push(s.cell, s.a.t, s.b.t, s.chord_len());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RowLabel {
    Class(usize),
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub features: Vec<f64>,
    pub label: RowLabel,
    pub domain: String,
    pub cell: CellIndex,
    pub interval: u32,
}

fn matrix_of(rows: &[TrainingRow], width: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.features.len() != width {
            return Err(Error::WidthMismatch {
                expected: width,
                got: r.features.len(),
            });
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadRecord(format!(
                "non-finite feature in row for cell {}",
                r.cell
            )));
        }
        data.extend_from_slice(&r.features);
    }
    Ok(Matrix::from_vec(rows.len(), width, data))
}

fn classes_of(rows: &[TrainingRow]) -> Result<Vec<usize>> {
    rows.iter()
        .map(|r| match r.label {
            RowLabel::Class(c) => Ok(c),
            RowLabel::Seconds(_) => Err(Error::BadRecord("expected a class label".into())),
        })
        .collect()
}

fn log_seconds_of(rows: &[TrainingRow]) -> Result<Matrix> {
    let v = rows
        .iter()
        .map(|r| match r.label {
            RowLabel::Seconds(s) if s > 0.0 => Ok(s.ln_1p()),
            _ => Err(Error::BadRecord("expected a positive travel time".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_vec(v.len(), 1, v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    /// Hidden layers followed by the softmax head.
    pub net: DenseNet,
    pub n_classes: usize,
}

pub const CLASSIFIER_INPUT_WIDTH: usize = CELL_VECTOR_WIDTH + 1;

impl ClassifierModel {
    /// Classifier input: the cell vector and its speed level scaled by `1/N`
    /// (zero when no speed is known).
    pub fn input(vec: &CellKnowledgeVector, n_classes: usize) -> Vec<f64> {
        let level = speed_level(&vec.speeds(), n_classes).map_or(0.0, |l| l / n_classes as f64);
        let mut x = vec.0.clone();
        x.push(level);
        x
    }

    pub fn probabilities(&self, inputs: &Matrix) -> Result<Matrix> {
        self.net.predict(inputs)
    }

    pub fn classify(&self, vec: &CellKnowledgeVector) -> Result<Vec<f64>> {
        let x = Matrix::row_vector(&Self::input(vec, self.n_classes));
        Ok(self.net.predict(&x)?.row(0).to_vec())
    }

    pub fn accuracy(&self, rows: &[TrainingRow]) -> Result<f64> {
        if rows.is_empty() {
            return Ok(f64::NAN);
        }
        let p = self.probabilities(&matrix_of(rows, self.net.input_width())?)?;
        let labels = classes_of(rows)?;
        let hits = labels
            .iter()
            .enumerate()
            .filter(|(i, &c)| argmax(p.row(*i)) == c)
            .count();
        Ok(hits as f64 / rows.len() as f64)
    }

    pub fn to_container(&self) -> Result<Container> {
        model_container(
            CLASSIFIER_KIND,
            &self.net,
            serde_json::json!({ "n_classes": self.n_classes }),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let (net, meta) = model_from_container(c, CLASSIFIER_KIND)?;
        let n_classes = meta["n_classes"]
            .as_u64()
            .ok_or_else(|| Error::Container("classifier without n_classes".into()))?
            as usize;
        if net.output_width() != n_classes || net.input_width() != CLASSIFIER_INPUT_WIDTH {
            return Err(Error::Container(format!(
                "classifier shape {}->{} does not match {n_classes} classes",
                net.input_width(),
                net.output_width()
            )));
        }
        Ok(Self { net, n_classes })
    }
}

pub const CLASSIFIER_KIND: &str = "classifier";

/// Labeled classifier row for a cell at time `t`, or `None` when the cell
/// has no speed knowledge at that time.
pub fn classifier_row(
    grids: &KnowledgeGrids,
    cell: CellIndex,
    t: f64,
    global_max: f64,
    n_classes: usize,
    domain: &str,
) -> Result<Option<TrainingRow>> {
    let vec = grids.vector_at(cell, t)?;
    let speeds = vec.speeds();
    if speeds.is_empty() {
        return Ok(None);
    }
    Ok(Some(TrainingRow {
        features: ClassifierModel::input(&vec, n_classes),
        label: RowLabel::Class(make_class_label(&speeds, global_max, n_classes)?),
        domain: domain.to_string(),
        cell,
        interval: grids.grid.interval_of(t)?,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: History,
    /// Classification accuracy or MAPE (percent) on the validation rows.
    pub validation_metric: Option<f64>,
}

fn build_net(
    input: usize,
    hidden: &[usize],
    head: LayerSpec,
    cfg: &TrainConfig,
) -> Result<DenseNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut specs: Vec<LayerSpec> = hidden
        .iter()
        .map(|&w| LayerSpec {
            outputs: w,
            activation: Activation::Relu,
        })
        .collect();
    specs.push(head);
    DenseNet::build(input, &specs, cfg.dropout, &mut rng)
}

/// A classifier at its initial weights.
pub fn untrained_classifier(cfg: &ModelConfig) -> Result<ClassifierModel> {
    cfg.validate()?;
    let head = LayerSpec {
        outputs: cfg.n_classes,
        activation: Activation::Softmax,
    };
    let net = build_net(
        CLASSIFIER_INPUT_WIDTH,
        &cfg.classifier_hidden,
        head,
        &cfg.classifier_train,
    )?;
    Ok(ClassifierModel {
        net,
        n_classes: cfg.n_classes,
    })
}

pub fn train_classifier(
    rows: &[TrainingRow],
    validation: &[TrainingRow],
    cfg: &ModelConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    cfg.validate()?;
    let labels = classes_of(rows)?;
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} distinct class labels, need at least 2",
            distinct.len()
        )));
    }
    if let Some(c) = distinct.iter().find(|&&c| c >= cfg.n_classes) {
        return Err(Error::BadRecord(format!(
            "class {c} outside 0..{}",
            cfg.n_classes
        )));
    }
    let x = matrix_of(rows, CLASSIFIER_INPUT_WIDTH)?;
    let head = LayerSpec {
        outputs: cfg.n_classes,
        activation: Activation::Softmax,
    };
    let mut net = build_net(
        CLASSIFIER_INPUT_WIDTH,
        &cfg.classifier_hidden,
        head,
        &cfg.classifier_train,
    )?;
    let vx = matrix_of(validation, CLASSIFIER_INPUT_WIDTH)?;
    let vt = Targets::Classes(classes_of(validation)?);
    let val = (!validation.is_empty()).then_some((&vx, &vt));
    let history = fit(
        &mut net,
        &x,
        &Targets::Classes(labels),
        val,
        &cfg.classifier_train,
    )?;
    let model = ClassifierModel {
        net,
        n_classes: cfg.n_classes,
    };
    let validation_metric = (!validation.is_empty())
        .then(|| model.accuracy(validation))
        .transpose()?;
    Ok((
        model,
        TrainReport {
            history,
            validation_metric,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaModel {
    /// Hidden layers followed by the single-output identity head.
    pub net: DenseNet,
}

impl EtaModel {
    pub fn predict_many(&self, features: &Matrix) -> Result<Vec<f64>> {
        if features.cols() != self.net.input_width() {
            return Err(Error::ShapeMismatch(format!(
                "{} features, model expects {}",
                features.cols(),
                self.net.input_width()
            )));
        }
        let y = self.net.predict(features)?;
        Ok(y.as_slice()
            .iter()
            .map(|v| (v.exp() - 1.0).max(MIN_PREDICTED_SECONDS))
            .collect())
    }

    /// Mean absolute percentage error on labeled rows.
    pub fn mape(&self, rows: &[TrainingRow]) -> Result<f64> {
        let x = matrix_of(rows, self.net.input_width())?;
        let pred = self.predict_many(&x)?;
        let truth: Vec<f64> = log_seconds_of(rows)?
            .as_slice()
            .iter()
            .map(|v| v.exp_m1())
            .collect();
        crate::eval::mape(&truth, &pred)
    }
}

/// Seconds to cross a cell, from one feature vector.
pub fn predict_cell_time(model: &EtaModel, features: &[f64]) -> Result<f64> {
    Ok(model.predict_many(&Matrix::row_vector(features))?[0])
}

/// Labeled travel-time row for one crossing.
pub fn eta_row(
    grids: &KnowledgeGrids,
    classifier: &ClassifierModel,
    embedding: &CellEmbedding,
    crossing: &Crossing,
    top_k: usize,
    domain: &str,
) -> Result<TrainingRow> {
    let layout = FeatureLayout::new(classifier.n_classes, embedding.dim());
    let vec = grids.vector_at(crossing.cell, crossing.entry_t)?;
    let sigma = top_k_mask(&classifier.classify(&vec)?, top_k)?;
    let features = eta_features(
        &vec,
        &sigma,
        embedding.get(crossing.cell),
        crossing.chord_len,
        grids.grid.phi,
        &layout,
    )?;
    Ok(TrainingRow {
        features,
        label: RowLabel::Seconds(crossing.seconds),
        domain: domain.to_string(),
        cell: crossing.cell,
        interval: grids.grid.interval_of(crossing.entry_t)?,
    })
}

pub fn train_eta(
    rows: &[TrainingRow],
    validation: &[TrainingRow],
    cfg: &ModelConfig,
) -> Result<(EtaModel, TrainReport)> {
    cfg.validate()?;
    let Some(first) = rows.first() else {
        return Err(Error::InsufficientData("no travel-time rows".into()));
    };
    let width = first.features.len();
    let x = matrix_of(rows, width)?;
    let y = log_seconds_of(rows)?;
    let head = LayerSpec {
        outputs: 1,
        activation: Activation::Identity,
    };
    let mut net = build_net(width, &cfg.eta_hidden, head, &cfg.eta_train)?;
    center_head(&mut net, &y);
    let vx = matrix_of(validation, width)?;
    let vt = Targets::Regression(log_seconds_of(validation)?);
    let val = (!validation.is_empty()).then_some((&vx, &vt));
    let history = fit(&mut net, &x, &Targets::Regression(y), val, &cfg.eta_train)?;
    let model = EtaModel { net };
    let validation_metric = (!validation.is_empty())
        .then(|| model.mape(validation))
        .transpose()?;
    Ok((
        model,
        TrainReport {
            history,
            validation_metric,
        },
    ))
}

/// Little-endian bytes of every layer except the head.
pub fn body_bytes(net: &DenseNet) -> Vec<u8> {
    let layers = net.layers();
    layers[..layers.len() - 1]
        .iter()
        .flat_map(Layer::param_bytes)
        .collect()
}

pub fn head_bytes(net: &DenseNet) -> Vec<u8> {
    net.layers()
        .last()
        .map(Layer::param_bytes)
        .unwrap_or_default()
}

/// Starts a regression head at the mean target.
fn center_head(net: &mut DenseNet, y: &Matrix) {
    if y.rows() == 0 {
        return;
    }
    let mean = y.as_slice().iter().sum::<f64>() / y.rows() as f64;
    let last = net.layers().len() - 1;
    net.layer_mut(last).bias = vec![mean];
}

/// Copies `source`, freezes every layer but the head, re-initializes the
/// head from `cfg.seed` and trains it on the target data.
fn transfer_net(
    source: &DenseNet,
    x: &Matrix,
    targets: &Targets,
    validation: Option<(&Matrix, &Targets)>,
    cfg: &TrainConfig,
) -> Result<(DenseNet, History)> {
    if x.cols() != source.input_width() && x.rows() > 0 {
        return Err(Error::WidthMismatch {
            expected: source.input_width(),
            got: x.cols(),
        });
    }
    let mut net = source.clone();
    let last = net.layers().len() - 1;
    for i in 0..last {
        net.set_frozen(i, true);
    }
    let old = &net.layers()[last];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let head = Layer::init(old.inputs(), old.outputs(), old.activation, 0.0, &mut rng);
    net.replace_layer(last, head)?;
    if x.rows() == 0 {
        log::warn!("no target rows; returning the transferred body with an untrained head");
        return Ok((net, History::default()));
    }
    if let Targets::Regression(y) = targets {
        center_head(&mut net, y);
    }
    let history = fit(&mut net, x, targets, validation, cfg)?;
    Ok((net, history))
}

pub fn transfer_classifier(
    source: &ClassifierModel,
    rows: &[TrainingRow],
    validation: &[TrainingRow],
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    let w = source.net.input_width();
    let x = matrix_of(rows, w)?;
    let (vx, vt) = (
        matrix_of(validation, w)?,
        Targets::Classes(classes_of(validation)?),
    );
    let val = (!validation.is_empty()).then_some((&vx, &vt));
    let (net, history) = transfer_net(
        &source.net,
        &x,
        &Targets::Classes(classes_of(rows)?),
        val,
        cfg,
    )?;
    let model = ClassifierModel {
        net,
        n_classes: source.n_classes,
    };
    let validation_metric = (!validation.is_empty())
        .then(|| model.accuracy(validation))
        .transpose()?;
    Ok((
        model,
        TrainReport {
            history,
            validation_metric,
        },
    ))
}

pub fn transfer_eta(
    source: &EtaModel,
    rows: &[TrainingRow],
    validation: &[TrainingRow],
    cfg: &TrainConfig,
) -> Result<(EtaModel, TrainReport)> {
    let w = source.net.input_width();
    let x = matrix_of(rows, w)?;
    let (vx, vt) = (
        matrix_of(validation, w)?,
        Targets::Regression(log_seconds_of(validation)?),
    );
    let val = (!validation.is_empty()).then_some((&vx, &vt));
    let (net, history) = transfer_net(
        &source.net,
        &x,
        &Targets::Regression(log_seconds_of(rows)?),
        val,
        cfg,
    )?;
    let model = EtaModel { net };
    let validation_metric = (!validation.is_empty())
        .then(|| model.mape(validation))
        .transpose()?;
    Ok((
        model,
        TrainReport {
            history,
            validation_metric,
        },
    ))
}

/// Everything needed to estimate routes for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub domain: String,
    pub grid: GridSpec,
    pub layout: FeatureLayout,
    pub top_k: usize,
    pub classifier: ClassifierModel,
    pub eta: EtaModel,
    pub embedding: CellEmbedding,
}

pub const BUNDLE_KIND: &str = "model-bundle";

#[derive(Debug, Serialize, Deserialize)]
struct BundleHeader {
    domain: String,
    grid: GridSpec,
    layout: FeatureLayout,
    top_k: usize,
    classifier: NetLayout,
    eta: NetLayout,
}

impl ModelBundle {
    pub fn new(
        domain: &str,
        grid: GridSpec,
        top_k: usize,
        classifier: ClassifierModel,
        eta: EtaModel,
        embedding: CellEmbedding,
    ) -> Result<Self> {
        let layout = FeatureLayout::new(classifier.n_classes, embedding.dim());
        if eta.net.input_width() != layout.width() {
            return Err(Error::WidthMismatch {
                expected: layout.width(),
                got: eta.net.input_width(),
            });
        }
        if top_k == 0 || top_k > classifier.n_classes {
            return Err(Error::BadK {
                k: top_k,
                n: classifier.n_classes,
            });
        }
        Ok(Self {
            domain: domain.to_string(),
            grid,
            layout,
            top_k,
            classifier,
            eta,
            embedding,
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut w = ByteWriter::new();
        self.classifier.net.write_params(&mut w);
        self.eta.net.write_params(&mut w);
        self.embedding.encode(&mut w);
        let header = BundleHeader {
            domain: self.domain.clone(),
            grid: self.grid,
            layout: self.layout,
            top_k: self.top_k,
            classifier: self.classifier.net.layout(),
            eta: self.eta.net.layout(),
        };
        Container::new(BUNDLE_KIND, &header, w.into_inner())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != BUNDLE_KIND {
            return Err(Error::Container(format!(
                "expected {BUNDLE_KIND}, found {}",
                c.kind
            )));
        }
        let h: BundleHeader = c.header_as()?;
        let mut r = ByteReader::new(&c.payload);
        let classifier = DenseNet::read_params(&h.classifier, &mut r)?;
        let eta = DenseNet::read_params(&h.eta, &mut r)?;
        let embedding = CellEmbedding::decode(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Container("trailing bundle bytes".into()));
        }
        let n_classes = classifier.output_width();
        let bundle = Self::new(
            &h.domain,
            h.grid,
            h.top_k,
            ClassifierModel {
                net: classifier,
                n_classes,
            },
            EtaModel { net: eta },
            embedding,
        )?;
        if bundle.layout != h.layout {
            return Err(Error::Container(
                "feature layout disagrees with stored models".into(),
            ));
        }
        Ok(bundle)
    }
}

/// Stores a classifier or ETA model on its own.
pub fn model_container(kind: &str, net: &DenseNet, extra: serde_json::Value) -> Result<Container> {
    let mut w = ByteWriter::new();
    net.write_params(&mut w);
    Container::new(
        kind,
        &serde_json::json!({ "layout": net.layout(), "meta": extra }),
        w.into_inner(),
    )
}

pub fn model_from_container(c: &Container, kind: &str) -> Result<(DenseNet, serde_json::Value)> {
    if c.kind != kind {
        return Err(Error::Container(format!(
            "expected {kind}, found {}",
            c.kind
        )));
    }
    let layout: NetLayout = serde_json::from_value(c.header["layout"].clone())?;
    let net = DenseNet::read_params(&layout, &mut ByteReader::new(&c.payload))?;
    Ok((net, c.header["meta"].clone()))
}
