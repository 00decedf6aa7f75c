//! Hypergraph-Former: positional encoding, sliding-window hypergraph over
//! the `2T` audio+visual nodes of one event, normalized hypergraph
//! convolution, per-modality multi-head self-attention, and fusion.
//!
//! Node layout: rows `0..T` are audio frames, rows `T..2T` visual frames.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{uniform, Bound, Group, ParamId, ParamStore};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// Sinusoidal table: `PE[t, 2i] = sin(t / 10000^(2i/D))`,
/// `PE[t, 2i+1] = cos(t / 10000^(2i/D))`.
pub fn positional_table(frames: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even dimension, got {dim}"
        )));
    }
    let mut table = Tensor::zeros(&[frames, dim]);
    for t in 0..frames {
        for i in 0..dim / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            table.set(t, 2 * i, angle.sin());
            table.set(t, 2 * i + 1, angle.cos());
        }
    }
    Ok(table)
}

/// `feat + PE`.
pub fn positional_encode(g: &mut Graph, feat: Var) -> Result<Var> {
    let shape = g.shape(feat).to_vec();
    let table = positional_table(shape[0], shape[1])?;
    let pe = g.constant(table)?;
    g.add(feat, pe)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    AudioIntra,
    VisualIntra,
    /// One audio node plus every visual node of the window.
    AudioStar,
    /// One visual node plus every audio node of the window.
    VisualStar,
}

impl EdgeKind {
    pub fn label(self) -> &'static str {
        match self {
            EdgeKind::AudioIntra => "audio-intra",
            EdgeKind::VisualIntra => "visual-intra",
            EdgeKind::AudioStar => "audio-star",
            EdgeKind::VisualStar => "visual-star",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperedge {
    pub kind: EdgeKind,
    /// Window start position.
    pub window: usize,
    /// Node indices in ascending order.
    pub nodes: Vec<usize>,
}

/// Binary incidence matrix of one event's hypergraph and its degree
/// diagonals. Hyperedge weights are fixed to one.
#[derive(Clone, Debug)]
pub struct IncidenceStructure {
    pub frames: usize,
    pub window: usize,
    pub edges: Vec<Hyperedge>,
    /// `2T × E`.
    pub incidence: Tensor,
    pub node_degree: Vec<f64>,
    pub edge_degree: Vec<f64>,
    pub edge_weight: Vec<f64>,
}

/// Expected number of hyperedges for `frames ≥ window`.
pub fn edge_count(frames: usize, window: usize) -> usize {
    (frames - window + 1) * (2 + 2 * window)
}

pub fn build_incidence(frames: usize, window: usize) -> Result<IncidenceStructure> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if window > frames {
        return Err(Error::InvalidArgument(format!(
            "window {window} exceeds {frames} frames; pad the events first"
        )));
    }
    let audio = |t: usize| t;
    let visual = |t: usize| frames + t;
    let mut edges = Vec::with_capacity(edge_count(frames, window));
    for p in 0..=frames - window {
        let span = p..p + window;
        edges.push(Hyperedge {
            kind: EdgeKind::AudioIntra,
            window: p,
            nodes: span.clone().map(audio).collect(),
        });
        edges.push(Hyperedge {
            kind: EdgeKind::VisualIntra,
            window: p,
            nodes: span.clone().map(visual).collect(),
        });
        for t in span.clone() {
            let mut nodes = vec![audio(t)];
            nodes.extend(span.clone().map(visual));
            edges.push(Hyperedge {
                kind: EdgeKind::AudioStar,
                window: p,
                nodes,
            });
        }
        for t in span.clone() {
            let mut nodes: Vec<usize> = span.clone().map(audio).collect();
            nodes.push(visual(t));
            edges.push(Hyperedge {
                kind: EdgeKind::VisualStar,
                window: p,
                nodes,
            });
        }
    }

    let n = 2 * frames;
    let e = edges.len();
    let mut incidence = Tensor::zeros(&[n, e]);
    for (j, edge) in edges.iter().enumerate() {
        for &v in &edge.nodes {
            incidence.set(v, j, 1.0);
        }
    }
    let edge_weight = vec![1.0; e];
    let node_degree = (0..n)
        .map(|v| (0..e).map(|j| incidence.at(v, j) * edge_weight[j]).sum())
        .collect();
    let edge_degree = (0..e).map(|j| (0..n).map(|v| incidence.at(v, j)).sum()).collect();
    Ok(IncidenceStructure {
        frames,
        window,
        edges,
        incidence,
        node_degree,
        edge_degree,
        edge_weight,
    })
}

impl IncidenceStructure {
    pub fn node_count(&self) -> usize {
        2 * self.frames
    }

    /// `Dv^-1/2 · H · We · De^-1 · Hᵀ · Dv^-1/2`, a `2T × 2T` matrix.
    pub fn propagation(&self) -> Result<Tensor> {
        let n = self.node_count();
        if let Some(v) = self.node_degree.iter().position(|&d| d <= 0.0) {
            return Err(Error::InvalidArgument(format!("node {v} has zero degree")));
        }
        let mut out = Tensor::zeros(&[n, n]);
        for (j, edge) in self.edges.iter().enumerate() {
            let w = self.edge_weight[j] / self.edge_degree[j];
            for &a in &edge.nodes {
                for &b in &edge.nodes {
                    let v = out.at(a, b) + w / (self.node_degree[a] * self.node_degree[b]).sqrt();
                    out.set(a, b, v);
                }
            }
        }
        Ok(out)
    }

    /// `a{t}` for audio nodes, `v{t}` for visual nodes.
    pub fn node_label(&self, node: usize) -> String {
        if node < self.frames {
            format!("a{node}")
        } else {
            format!("v{}", node - self.frames)
        }
    }

    /// One line per hyperedge: `index<TAB>kind<TAB>window<TAB>nodes…`.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for (j, edge) in self.edges.iter().enumerate() {
            let nodes: Vec<String> = edge.nodes.iter().map(|&v| self.node_label(v)).collect();
            let _ = writeln!(out, "{j}\t{}\t{}\t{}", edge.kind.label(), edge.window, nodes.join(" "));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Stacked `X ← σ(P · X · Θ)` layers sharing one propagation matrix `P`.
#[derive(Clone, Debug)]
pub struct HypergraphConv {
    thetas: Vec<ParamId>,
    activation: Activation,
}

impl HypergraphConv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        layers: usize,
        activation: Activation,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("hypergraph convolution needs at least one layer".into()));
        }
        let thetas = (0..layers)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { output_dim };
                let bound = 1.0 / (d_in as f64).sqrt();
                store.add(
                    format!("{name}.theta{l}"),
                    Group::Main,
                    uniform(rng, &[d_in, output_dim], bound),
                )
            })
            .collect();
        Ok(HypergraphConv { thetas, activation })
    }

    pub fn thetas(&self) -> &[ParamId] {
        &self.thetas
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, propagation: Var) -> Result<Var> {
        let mut h = x;
        for &theta in &self.thetas {
            let px = g.matmul(propagation, h)?;
            let lin = g.matmul(px, p.var(theta))?;
            h = self.activation.apply(g, lin)?;
        }
        Ok(h)
    }
}

/// Denominator of the attention logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `√D2`, regardless of head count.
    #[default]
    Model,
    /// `√(D2 / h)`.
    PerHead,
}

/// Multi-head self-attention without biases: per-head projections are the
/// column blocks of `W^Q`, `W^K`, `W^V`; concatenated heads go through `W^O`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub dim: usize,
    pub heads: usize,
    pub scale: AttentionScale,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        heads: usize,
        scale: AttentionScale,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention dim {dim} not divisible by {heads} heads"
            )));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let mut mk = |suffix: &str| {
            store.add(
                format!("{name}.{suffix}"),
                Group::Main,
                uniform(rng, &[dim, dim], bound),
            )
        };
        Ok(MultiHeadAttention {
            w_q: mk("w_q"),
            w_k: mk("w_k"),
            w_v: mk("w_v"),
            w_o: mk("w_o"),
            dim,
            heads,
            scale,
        })
    }

    pub fn divisor(&self) -> f64 {
        match self.scale {
            AttentionScale::Model => (self.dim as f64).sqrt(),
            AttentionScale::PerHead => ((self.dim / self.heads) as f64).sqrt(),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let q = g.matmul(x, p.var(self.w_q))?;
        let k = g.matmul(x, p.var(self.w_k))?;
        let v = g.matmul(x, p.var(self.w_v))?;
        let width = self.dim / self.heads;
        let inv = 1.0 / self.divisor();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (s, e) = (h * width, (h + 1) * width);
            let qh = g.slice_cols(q, s, e)?;
            let kh = g.slice_cols(k, s, e)?;
            let vh = g.slice_cols(v, s, e)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, inv)?;
            let attn = g.softmax(scores)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        g.matmul(cat, p.var(self.w_o))
    }
}

/// Row-wise `[audio ‖ visual]`.
pub fn fuse_event(g: &mut Graph, audio: Var, visual: Var) -> Result<Var> {
    let (ta, tv) = (g.shape(audio)[0], g.shape(visual)[0]);
    if ta != tv {
        return Err(Error::ShapeMismatch {
            op: "fuse_event",
            lhs: g.shape(audio).to_vec(),
            rhs: g.shape(visual).to_vec(),
        });
    }
    g.concat_cols(&[audio, visual])
}

/// Dimensions and structure of the per-event Hypergraph-Former.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HgfConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub window: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub attention_scale: AttentionScale,
    #[serde(default = "yes")]
    pub positional_encoding: bool,
}

fn yes() -> bool {
    true
}

impl HgfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 || self.heads == 0 || !self.output_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "D2 = {} must be divisible by heads = {}",
                self.output_dim, self.heads
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("hypergraph layers must be at least 1".into()));
        }
        if !self.input_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("D1 = {} must be even", self.input_dim)));
        }
        Ok(())
    }
}

/// Shared convolution over the joint node set followed by separate audio and
/// visual attention blocks.
#[derive(Clone, Debug)]
pub struct HypergraphFormer {
    pub config: HgfConfig,
    pub conv: HypergraphConv,
    pub audio_attention: MultiHeadAttention,
    pub visual_attention: MultiHeadAttention,
}

impl HypergraphFormer {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, config: HgfConfig) -> Result<Self> {
        config.validate()?;
        let conv = HypergraphConv::new(
            store,
            rng,
            &format!("{name}.conv"),
            config.input_dim,
            config.output_dim,
            config.layers,
            config.activation,
        )?;
        let audio_attention = MultiHeadAttention::new(
            store,
            rng,
            &format!("{name}.attn_audio"),
            config.output_dim,
            config.heads,
            config.attention_scale,
        )?;
        let visual_attention = MultiHeadAttention::new(
            store,
            rng,
            &format!("{name}.attn_visual"),
            config.output_dim,
            config.heads,
            config.attention_scale,
        )?;
        Ok(HypergraphFormer {
            config,
            conv,
            audio_attention,
            visual_attention,
        })
    }

    /// `audio`, `visual`: gated `T × D1` features of one event; `propagation`
    /// is the `2T × 2T` matrix for this `T`. Returns `T × 2·D2`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, audio: Var, visual: Var, propagation: Var) -> Result<Var> {
        let frames = g.shape(audio)[0];
        let (a, v) = if self.config.positional_encoding {
            (positional_encode(g, audio)?, positional_encode(g, visual)?)
        } else {
            (audio, visual)
        };
        let nodes = g.concat_rows(&[a, v])?;
        let conv = self.conv.forward(g, p, nodes, propagation)?;
        let a_conv = g.slice_rows(conv, 0, frames)?;
        let v_conv = g.slice_rows(conv, frames, 2 * frames)?;
        let a_att = self.audio_attention.forward(g, p, a_conv)?;
        let v_att = self.visual_attention.forward(g, p, v_conv)?;
        fuse_event(g, a_att, v_att)
    }
}
