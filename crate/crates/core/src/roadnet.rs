//! Directed upstream-cell graph built from observed cell paths, and an
//! autoencoder embedding of its vertices that preserves first-order
//! (edge) and second-order (shared-neighbourhood) proximity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::container::{ByteReader, ByteWriter, Container};
use crate::error::{Error, Result};
use crate::geo::CellIndex;
use crate::neural::{Activation, DenseNet, FlatAdam, LayerSpec, Matrix, Mode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoadGraph {
    vertices: Vec<CellIndex>,
    index: BTreeMap<CellIndex, usize>,
    /// `(i, j)` present iff `vertices[i]` is upstream of `vertices[j]`.
    edges: BTreeSet<(usize, usize)>,
}

/// One edge per consecutive distinct pair of any path; vertices are every
/// cell seen, in sorted order.
pub fn build_road_graph(paths: &[Vec<CellIndex>]) -> RoadGraph {
    let cells: BTreeSet<CellIndex> = paths.iter().flatten().copied().collect();
    let vertices: Vec<CellIndex> = cells.into_iter().collect();
    let index: BTreeMap<CellIndex, usize> =
        vertices.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut edges = BTreeSet::new();
    for path in paths {
        for pair in path.windows(2) {
            if pair[0] != pair[1] {
                edges.insert((index[&pair[0]], index[&pair[1]]));
            }
        }
    }
    RoadGraph {
        vertices,
        index,
        edges,
    }
}

impl RoadGraph {
    pub fn vertices(&self) -> &[CellIndex] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, cell: CellIndex) -> Option<usize> {
        self.index.get(&cell).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    /// Cells that reach `cell` in one observed step.
    pub fn upstream(&self, cell: CellIndex) -> Vec<CellIndex> {
        let Some(j) = self.index_of(cell) else {
            return vec![];
        };
        self.edges
            .iter()
            .filter(|e| e.1 == j)
            .map(|e| self.vertices[e.0])
            .collect()
    }

    /// Neighbourhood vector of vertex `i`: row `i` of the adjacency matrix.
    pub fn neighborhood(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        for &(_, j) in self.edges.range((i, 0)..(i + 1, 0)) {
            row[j] = 1.0;
        }
        row
    }

    pub fn adjacency(&self) -> Matrix {
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for &(i, j) in &self.edges {
            m[(i, j)] = 1.0;
        }
        m
    }

    /// Text edge list, one `from_h from_w to_h to_w` line per edge.
    pub fn edge_list(&self) -> String {
        let mut out = String::from("# from_h from_w to_h to_w\n");
        for &(i, j) in &self.edges {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            let _ = writeln!(out, "{} {} {} {}", a.h, a.w, b.h, b.w);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdneConfig {
    pub embed_dim: usize,
    /// Encoder widths before the embedding layer; the encoder has
    /// `hidden.len() + 1` layers and the decoder mirrors it.
    pub hidden: Vec<usize>,
    /// Weight of the first-order (edge) loss.
    pub gamma: f64,
    /// Reconstruction weight on nonzero adjacency entries.
    pub xi: f64,
    /// L2 weight regularization.
    pub nu: f64,
    pub epochs: usize,
    /// Vertices per minibatch; 0 means all vertices.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SdneConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: vec![128],
            gamma: 1.0,
            xi: 5.0,
            nu: 1e-4,
            epochs: 100,
            batch_size: 0,
            learning_rate: 0.01,
            seed: 42,
        }
    }
}

impl SdneConfig {
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.embed_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if !(self.gamma >= 0.0) || !(self.nu >= 0.0) {
            return bad(format!(
                "gamma ({}) and nu ({}) must be >= 0",
                self.gamma, self.nu
            ));
        }
        if !(self.xi > 1.0) {
            return bad(format!("xi must exceed 1, got {}", self.xi));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        Ok(())
    }
}

/// Sigmoid encoder (`|V| -> ... -> embed_dim`) and its mirror decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SdneModel {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
}

impl SdneModel {
    pub fn new(vertices: usize, cfg: &SdneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut widths = cfg.hidden.clone();
        widths.push(cfg.embed_dim);
        let spec = |w: &usize| LayerSpec {
            outputs: *w,
            activation: Activation::Sigmoid,
        };
        let enc: Vec<LayerSpec> = widths.iter().map(spec).collect();
        let dec: Vec<LayerSpec> = widths
            .iter()
            .rev()
            .skip(1)
            .chain([&vertices])
            .map(spec)
            .collect();
        Ok(Self {
            encoder: DenseNet::build(vertices, &enc, 0.0, rng)?,
            decoder: DenseNet::build(cfg.embed_dim, &dec, 0.0, rng)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.trainable_param_count() + self.decoder.trainable_param_count()
    }

    /// Encoder parameters followed by decoder parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.encoder.trainable_params();
        p.extend(self.decoder.trainable_params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let (e, d) = params.split_at(self.encoder.trainable_param_count());
        self.encoder.set_trainable_params(e)?;
        self.decoder.set_trainable_params(d)
    }
}

/// Embeddings `ω` and reconstructions of a batch of neighbourhood rows.
pub fn sdne_forward(ns: &Matrix, model: &SdneModel) -> Result<(Matrix, Matrix)> {
    if ns.cols() != model.encoder.input_width() {
        return Err(Error::ShapeMismatch(format!(
            "neighbourhood rows have {} entries, model expects {}",
            ns.cols(),
            model.encoder.input_width()
        )));
    }
    let omega = model.encoder.predict(ns)?;
    let recon = model.decoder.predict(&omega)?;
    Ok((omega, recon))
}

/// Loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdneLoss {
    pub first_order: f64,
    pub reconstruction: f64,
    pub regularization: f64,
    pub total: f64,
}

/// `γ·L1 + L2 + ν/2·Σ‖W‖²` over the vertices in `rows` (edges count when
/// both ends are in the batch), with gradients ordered as [`SdneModel::params`].
pub fn sdne_loss(
    rows: &[usize],
    model: &SdneModel,
    graph: &RoadGraph,
    cfg: &SdneConfig,
) -> Result<(SdneLoss, Vec<f64>)> {
    if graph.len() != model.encoder.input_width() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} vertices, model expects {}",
            graph.len(),
            model.encoder.input_width()
        )));
    }
    let n = graph.len();
    let mut x = Matrix::zeros(rows.len(), n);
    for (r, &i) in rows.iter().enumerate() {
        x.row_mut(r).copy_from_slice(&graph.neighborhood(i));
    }
    let (omega, enc_cache) = model.encoder.forward(&x, Mode::Eval)?;
    let (recon, dec_cache) = model.decoder.forward(&omega, Mode::Eval)?;

    let mut reconstruction = 0.0;
    let mut g_recon = Matrix::zeros(rows.len(), n);
    for r in 0..rows.len() {
        for j in 0..n {
            let s = x[(r, j)];
            let b = if s > 0.0 { cfg.xi } else { 1.0 };
            let d = (recon[(r, j)] - s) * b;
            reconstruction += d * d;
            g_recon[(r, j)] = 2.0 * d * b;
        }
    }
    let mut dec_grads = model.decoder.backward(&dec_cache, &g_recon)?;
    let mut g_omega = dec_grads.input.clone();

    let pos: BTreeMap<usize, usize> = rows.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let mut first_order = 0.0;
    for (i, j) in graph.edges() {
        let (Some(&a), Some(&b)) = (pos.get(&i), pos.get(&j)) else {
            continue;
        };
        for k in 0..omega.cols() {
            let d = omega[(a, k)] - omega[(b, k)];
            first_order += d * d;
            g_omega[(a, k)] += cfg.gamma * 2.0 * d;
            g_omega[(b, k)] -= cfg.gamma * 2.0 * d;
        }
    }
    let mut enc_grads = model.encoder.backward(&enc_cache, &g_omega)?;
    enc_grads.add_weight_decay(&model.encoder, cfg.nu);
    dec_grads.add_weight_decay(&model.decoder, cfg.nu);

    let regularization = 0.5
        * cfg.nu
        * model
            .encoder
            .layers()
            .iter()
            .chain(model.decoder.layers())
            .map(|l| l.weights.frobenius_sq())
            .sum::<f64>();
    let total = cfg.gamma * first_order + reconstruction + regularization;
    let mut grad = enc_grads.flatten();
    grad.extend(dec_grads.flatten());
    Ok((
        SdneLoss {
            first_order,
            reconstruction,
            regularization,
            total,
        },
        grad,
    ))
}

/// Per-cell embedding vectors; cells outside the graph map to zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEmbedding {
    dim: usize,
    vectors: BTreeMap<CellIndex, Vec<f64>>,
    zeros: Vec<f64>,
}

pub const EMBEDDING_KIND: &str = "cell-embedding";

impl CellEmbedding {
    pub fn new(dim: usize, vectors: BTreeMap<CellIndex, Vec<f64>>) -> Result<Self> {
        if let Some((c, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::ShapeMismatch(format!(
                "embedding of {c} has width {}, expected {dim}",
                v.len()
            )));
        }
        Ok(Self {
            dim,
            vectors,
            zeros: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        self.vectors.contains_key(&cell)
    }

    pub fn get(&self, cell: CellIndex) -> &[f64] {
        self.vectors.get(&cell).map_or(&self.zeros, Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellIndex, &Vec<f64>)> {
        self.vectors.iter()
    }

    pub(crate) fn encode(&self, w: &mut ByteWriter) {
        w.u64(self.dim as u64);
        w.u64(self.vectors.len() as u64);
        for (c, v) in &self.vectors {
            w.u32(c.h);
            w.u32(c.w);
            w.f64s(v);
        }
    }

    pub(crate) fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        let dim = r.u64()? as usize;
        let n = r.u64()? as usize;
        let mut vectors = BTreeMap::new();
        for _ in 0..n {
            let c = CellIndex::new(r.u32()?, r.u32()?);
            vectors.insert(c, r.f64s(dim)?);
        }
        Self::new(dim, vectors)
    }

    pub fn to_container(&self, graph_edges: usize) -> Result<Container> {
        let mut w = ByteWriter::new();
        self.encode(&mut w);
        let header =
            serde_json::json!({ "dim": self.dim, "cells": self.len(), "edges": graph_edges });
        Container::new(EMBEDDING_KIND, &header, w.into_inner())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != EMBEDDING_KIND {
            return Err(Error::Container(format!(
                "expected {EMBEDDING_KIND}, found {}",
                c.kind
            )));
        }
        Self::decode(&mut ByteReader::new(&c.payload))
    }
}

#[derive(Debug, Clone)]
pub struct SdneTraining {
    pub embedding: CellEmbedding,
    pub model: SdneModel,
    /// Summed minibatch loss per epoch.
    pub losses: Vec<f64>,
}

pub fn train_sdne(graph: &RoadGraph, cfg: &SdneConfig) -> Result<SdneTraining> {
    cfg.validate()?;
    if graph.len() < 2 {
        return Err(Error::InsufficientGraph(graph.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SdneModel::new(graph.len(), cfg, &mut rng)?;
    let mut params = model.params();
    let mut adam = FlatAdam::new(params.len(), cfg.learning_rate);
    let batch = if cfg.batch_size == 0 {
        graph.len()
    } else {
        cfg.batch_size
    };
    let mut order: Vec<usize> = (0..graph.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(batch) {
            let (loss, grad) = sdne_loss(rows, &model, graph, cfg)?;
            total += loss.total;
            adam.step(&mut params, &grad);
            model.set_params(&params)?;
        }
        losses.push(total);
    }
    let all = Matrix::from_rows(
        &(0..graph.len())
            .map(|i| graph.neighborhood(i))
            .collect::<Vec<_>>(),
    );
    let (omega, _) = sdne_forward(&all, &model)?;
    let vectors = graph
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, omega.row(i).to_vec()))
        .collect();
    Ok(SdneTraining {
        embedding: CellEmbedding::new(cfg.embed_dim, vectors)?,
        model,
        losses,
    })
}

/// Euclidean distance between two embedding vectors.
pub fn embedding_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}
