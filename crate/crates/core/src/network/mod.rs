//! Context-transformer + relational-graph emotion classifier.
//!
//! Per conversation the forward pass is
//!
//! 1. fusion: concatenate the active modalities per utterance, project to
//!    `hidden_dim`, add a learned positional embedding;
//! 2. context encoder: `seq_context_layers` pre-norm transformer layers
//!    attending over the whole conversation, then a final layer norm;
//! 3. relational graph convolution: per-relation mean aggregation with one
//!    weight matrix per relation plus a self transform, ReLU;
//! 4. graph transformer: `gnn_layers` transformer layers whose attention is
//!    restricted to graph edges, then a final layer norm;
//! 5. classifier: a linear map from the node embeddings to class logits.
//!
//! The node embeddings after step 4 are the distillation tap.

pub mod tape;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{num_relations, ConversationGraph};
use crate::rng::{self, streams, StreamRng};
use tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Video,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "audio" | "a" => Ok(Modality::Audio),
            "video" | "v" => Ok(Modality::Video),
            other => Err(Error::validation("modalities", format!("unsupported modality '{other}'"))),
        }
    }
}

/// Parses `"audio"`, `"audio,video"`, `"av"` and friends.
pub fn parse_modalities(s: &str) -> Result<Vec<Modality>> {
    let mut out: Vec<Modality> = if s.trim().eq_ignore_ascii_case("av") {
        vec![Modality::Audio, Modality::Video]
    } else {
        s.split(',').map(str::parse).collect::<Result<_>>()?
    };
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub modalities: Vec<Modality>,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub seq_context_layers: usize,
    pub gnn_layers: usize,
    pub heads: usize,
    pub num_classes: usize,
    pub num_speakers: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            modalities: vec![Modality::Audio, Modality::Video],
            audio_dim: crate::corpus::DEFAULT_AUDIO_DIM,
            video_dim: crate::corpus::DEFAULT_VIDEO_DIM,
            hidden_dim: 100,
            ff_dim: 200,
            seq_context_layers: 4,
            gnn_layers: 7,
            heads: 4,
            num_classes: crate::corpus::DEFAULT_NUM_CLASSES,
            num_speakers: 2,
            dropout: 0.1,
            max_len: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: String| Err(Error::validation(format!("model.{field}"), reason));
        if self.modalities.is_empty() {
            return fail("modalities", "at least one modality is required".into());
        }
        let mut sorted = self.modalities.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.modalities.len() {
            return fail("modalities", "duplicate modality".into());
        }
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("ff_dim", self.ff_dim),
            ("seq_context_layers", self.seq_context_layers),
            ("gnn_layers", self.gnn_layers),
            ("heads", self.heads),
            ("num_classes", self.num_classes),
            ("num_speakers", self.num_speakers),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return fail(name, "must be at least 1".into());
            }
        }
        if self.uses(Modality::Audio) && self.audio_dim == 0 {
            return fail("audio_dim", "must be at least 1".into());
        }
        if self.uses(Modality::Video) && self.video_dim == 0 {
            return fail("video_dim", "must be at least 1".into());
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return fail("heads", format!("hidden_dim {} not divisible by {} heads", self.hidden_dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout", "must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn uses(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn fused_input_dim(&self) -> usize {
        let mut d = 0;
        if self.uses(Modality::Audio) {
            d += self.audio_dim;
        }
        if self.uses(Modality::Video) {
            d += self.video_dim;
        }
        d
    }

    pub fn num_relations(&self) -> usize {
        num_relations(self.num_speakers)
    }
}

/// Parameter family, used to group gradient checks and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Fusion,
    Positional,
    SeqContext,
    Rgcn,
    GraphTransformer,
    Classifier,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Fusion,
        LayerKind::Positional,
        LayerKind::SeqContext,
        LayerKind::Rgcn,
        LayerKind::GraphTransformer,
        LayerKind::Classifier,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Glorot,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub kind: LayerKind,
    init: Init,
}

#[derive(Debug, Clone, Copy)]
struct LinearIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct TransformerIdx {
    q: LinearIdx,
    k: LinearIdx,
    v: LinearIdx,
    o: LinearIdx,
    norm1: NormIdx,
    ff1: LinearIdx,
    ff2: LinearIdx,
    norm2: NormIdx,
}

#[derive(Debug, Clone)]
struct RgcnIdx {
    self_w: usize,
    relation_w: Vec<usize>,
    b: usize,
}

/// Index of every parameter tensor, in registration order.
#[derive(Debug, Clone)]
struct Layout {
    fusion: LinearIdx,
    positional: usize,
    seq_context: Vec<TransformerIdx>,
    seq_context_norm: Option<NormIdx>,
    rgcn: RgcnIdx,
    graph: Vec<TransformerIdx>,
    graph_norm: Option<NormIdx>,
    classifier: LinearIdx,
}

struct SpecBuilder {
    specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    fn add(&mut self, name: String, shape: (usize, usize), kind: LayerKind, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, kind, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, kind: LayerKind) -> LinearIdx {
        LinearIdx {
            w: self.add(format!("{prefix}.w"), (fan_in, fan_out), kind, Init::Glorot),
            b: self.add(format!("{prefix}.b"), (1, fan_out), kind, Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, dim: usize, kind: LayerKind) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{prefix}.gain"), (1, dim), kind, Init::Ones),
            bias: self.add(format!("{prefix}.bias"), (1, dim), kind, Init::Zeros),
        }
    }

    fn transformer(&mut self, prefix: &str, c: &ModelConfig, kind: LayerKind) -> TransformerIdx {
        let h = c.hidden_dim;
        TransformerIdx {
            q: self.linear(&format!("{prefix}.q"), h, h, kind),
            k: self.linear(&format!("{prefix}.k"), h, h, kind),
            v: self.linear(&format!("{prefix}.v"), h, h, kind),
            o: self.linear(&format!("{prefix}.o"), h, h, kind),
            norm1: self.norm(&format!("{prefix}.norm1"), h, kind),
            ff1: self.linear(&format!("{prefix}.ff1"), h, c.ff_dim, kind),
            ff2: self.linear(&format!("{prefix}.ff2"), c.ff_dim, h, kind),
            norm2: self.norm(&format!("{prefix}.norm2"), h, kind),
        }
    }
}

fn layout(config: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let h = config.hidden_dim;
    let mut b = SpecBuilder { specs: Vec::new() };
    let fusion = b.linear("fusion", config.fused_input_dim(), h, LayerKind::Fusion);
    let positional = b.add("positional".into(), (config.max_len, h), LayerKind::Positional, Init::Glorot);
    let seq_context = (0..config.seq_context_layers)
        .map(|l| b.transformer(&format!("seq_context.{l}"), config, LayerKind::SeqContext))
        .collect();
    let seq_context_norm = (config.seq_context_layers > 0).then(|| b.norm("seq_context.norm", h, LayerKind::SeqContext));
    let rgcn = RgcnIdx {
        self_w: b.add("rgcn.self.w".into(), (h, h), LayerKind::Rgcn, Init::Glorot),
        relation_w: (0..config.num_relations())
            .map(|r| b.add(format!("rgcn.relation.{r}.w"), (h, h), LayerKind::Rgcn, Init::Glorot))
            .collect(),
        b: b.add("rgcn.b".into(), (1, h), LayerKind::Rgcn, Init::Zeros),
    };
    let graph = (0..config.gnn_layers)
        .map(|l| b.transformer(&format!("graph.{l}"), config, LayerKind::GraphTransformer))
        .collect();
    let graph_norm = (config.gnn_layers > 0).then(|| b.norm("graph.norm", h, LayerKind::GraphTransformer));
    let classifier = b.linear("classifier", h, config.num_classes, LayerKind::Classifier);
    (
        Layout {
            fusion,
            positional,
            seq_context,
            seq_context_norm,
            rgcn,
            graph,
            graph_norm,
            classifier,
        },
        b.specs,
    )
}

/// Every learnable tensor of a model, in a fixed registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    specs: Vec<ParamSpec>,
    values: Vec<Array2<f64>>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.values[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Named tensors, for checkpointing.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.specs.iter().map(|s| s.name.as_str()).zip(&self.values)
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, v) in self.named() {
            h.update(name.as_bytes());
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Rebuilds parameters for `config` from named tensors, checking shapes.
    pub fn from_named(config: &ModelConfig, mut named: BTreeMap<String, Array2<f64>>) -> Result<Self> {
        config.validate()?;
        let (_, specs) = layout(config);
        let mut values = Vec::with_capacity(specs.len());
        for spec in &specs {
            let v = named
                .remove(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", spec.name)))?;
            if v.dim() != spec.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, config expects {:?}",
                    spec.name,
                    v.dim(),
                    spec.shape
                )));
            }
            values.push(v);
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(Self { specs, values })
    }
}

/// Glorot-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`), zero biases,
/// unit layer-norm gains. Deterministic in `config.seed`.
pub fn init_params(config: &ModelConfig) -> Result<Params> {
    config.validate()?;
    let (_, specs) = layout(config);
    let mut rng = rng::stream(config.seed, streams::INIT);
    let values = specs
        .iter()
        .map(|spec| match spec.init {
            Init::Zeros => Array2::zeros(spec.shape),
            Init::Ones => Array2::ones(spec.shape),
            Init::Glorot => {
                let bound = (6.0 / (spec.shape.0 + spec.shape.1) as f64).sqrt();
                Array2::from_shape_fn(spec.shape, |_| rng.random_range(-bound..bound))
            }
        })
        .collect();
    Ok(Params { specs, values })
}

/// Dense per-conversation graph operators: one row-normalised adjacency per
/// relation that occurs, and the edge mask for graph attention.
#[derive(Debug, Clone)]
pub struct GraphTensors {
    num_nodes: usize,
    relations: Vec<(usize, Array2<f64>)>,
    attention_mask: Arc<Array2<bool>>,
}

impl GraphTensors {
    pub fn new(graph: &ConversationGraph) -> Self {
        let n = graph.num_nodes;
        let mut per_relation: BTreeMap<usize, Array2<f64>> = BTreeMap::new();
        let mut mask = Array2::from_elem((n, n), false);
        for e in &graph.edges {
            per_relation.entry(e.relation.0).or_insert_with(|| Array2::zeros((n, n)))[[e.src, e.dst]] = 1.0;
            mask[[e.src, e.dst]] = true;
        }
        let relations = per_relation
            .into_iter()
            .map(|(r, mut adj)| {
                for mut row in adj.rows_mut() {
                    let deg = row.sum();
                    if deg > 0.0 {
                        row.mapv_inplace(|x| x / deg);
                    }
                }
                (r, adj)
            })
            .collect();
        Self {
            num_nodes: n,
            relations,
            attention_mask: Arc::new(mask),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }
}

/// Per-utterance outputs of one conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub node_embeddings: Array2<f64>,
}

/// Handles into the tape for one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub params: Vec<Var>,
    pub context: Var,
    pub embeddings: Var,
    pub logits: Var,
}

struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut StreamRng>,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).raw_dim();
        let mask = Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    params: Params,
    layout: Layout,
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self::assemble(config, params))
    }

    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        if specs != params.specs {
            return Err(Error::Config("parameter layout does not match model config".into()));
        }
        Ok(Self { config, params, layout })
    }

    fn assemble(config: ModelConfig, params: Params) -> Self {
        let (layout, _) = layout(&config);
        Self { config, params, layout }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn into_params(self) -> Params {
        self.params
    }

    fn check_inputs(&self, audio: &Array2<f64>, video: &Array2<f64>) -> Result<usize> {
        let c = &self.config;
        let n = if c.uses(Modality::Audio) { audio.nrows() } else { video.nrows() };
        if n == 0 {
            return Err(Error::Dimension("conversation has no utterances".into()));
        }
        if n > c.max_len {
            return Err(Error::Dimension(format!("conversation length {n} exceeds max_len {}", c.max_len)));
        }
        if c.uses(Modality::Audio) && audio.ncols() != c.audio_dim {
            return Err(Error::Dimension(format!("audio width {} != audio_dim {}", audio.ncols(), c.audio_dim)));
        }
        if c.uses(Modality::Video) && video.ncols() != c.video_dim {
            return Err(Error::Dimension(format!("video width {} != video_dim {}", video.ncols(), c.video_dim)));
        }
        if c.uses(Modality::Audio) && c.uses(Modality::Video) && audio.nrows() != video.nrows() {
            return Err(Error::Dimension(format!(
                "audio has {} utterances, video has {}",
                audio.nrows(),
                video.nrows()
            )));
        }
        Ok(n)
    }

    /// Concatenated active modality features (audio first), before projection.
    pub fn fusion_input(&self, audio: &Array2<f64>, video: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(audio, video)?;
        let mut parts = Vec::new();
        if self.config.uses(Modality::Audio) {
            parts.push(audio.view());
        }
        if self.config.uses(Modality::Video) {
            parts.push(video.view());
        }
        ndarray::concatenate(ndarray::Axis(1), &parts).map_err(|e| Error::Dimension(e.to_string()))
    }

    /// Learned projection of the concatenated modalities to `hidden_dim`.
    pub fn fuse_modalities(&self, audio: &Array2<f64>, video: &Array2<f64>) -> Result<Array2<f64>> {
        let x = self.fusion_input(audio, video)?;
        let f = self.layout.fusion;
        Ok(x.dot(&self.params.values[f.w]) + &self.params.values[f.b])
    }

    /// Records the forward pass of one conversation on `tape`.
    ///
    /// `dropout_rng = Some(..)` means training mode.
    pub fn record<'t>(
        &'t self,
        tape: &mut Tape<'t>,
        audio: &Array2<f64>,
        video: &Array2<f64>,
        graph: &'t GraphTensors,
        dropout_rng: Option<&mut StreamRng>,
    ) -> Result<Recorded> {
        let n = self.check_inputs(audio, video)?;
        if graph.num_nodes != n {
            return Err(Error::Dimension(format!("graph has {} nodes, conversation {n}", graph.num_nodes)));
        }
        let params: Vec<Var> = self.params.values.iter().map(|v| tape.param(v)).collect();
        let mut dropout = Dropout {
            rate: self.config.dropout,
            rng: dropout_rng,
        };
        let l = &self.layout;
        let input = tape.constant(self.fusion_input(audio, video)?);
        let fused = linear(tape, &params, input, l.fusion);
        let pos = tape.slice_rows(params[l.positional], 0, n);
        let mut x = tape.add(fused, pos);
        x = dropout.apply(tape, x);
        for layer in &l.seq_context {
            x = self.transformer_layer(tape, &params, x, layer, None, &mut dropout);
        }
        if let Some(norm) = l.seq_context_norm {
            x = layer_norm(tape, &params, x, norm);
        }
        let context = x;

        let embeddings = self.graph_stage(tape, &params, x, graph, &mut dropout);
        let logits = linear(tape, &params, embeddings, l.classifier);
        if tape.value(logits).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits in forward pass".into()));
        }
        Ok(Recorded {
            params,
            context,
            embeddings,
            logits,
        })
    }

    fn transformer_layer(
        &self,
        tape: &mut Tape<'_>,
        params: &[Var],
        x: Var,
        idx: &TransformerIdx,
        mask: Option<&Arc<Array2<bool>>>,
        dropout: &mut Dropout<'_>,
    ) -> Var {
        let heads = self.config.heads;
        let d = self.config.hidden_dim / heads;
        let a = layer_norm(tape, params, x, idx.norm1);
        let q = linear(tape, params, a, idx.q);
        let k = linear(tape, params, a, idx.k);
        let v = linear(tape, params, a, idx.v);
        let scale = 1.0 / (d as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = tape.slice_cols(q, head * d, d);
            let kh = tape.slice_cols(k, head * d, d);
            let vh = tape.slice_cols(v, head * d, d);
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores, mask);
            outs.push(tape.matmul(attn, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let o = linear(tape, params, cat, idx.o);
        let o = dropout.apply(tape, o);
        let x1 = tape.add(x, o);
        let b = layer_norm(tape, params, x1, idx.norm2);
        let f = linear(tape, params, b, idx.ff1);
        let f = tape.relu(f);
        let f = linear(tape, params, f, idx.ff2);
        let f = dropout.apply(tape, f);
        tape.add(x1, f)
    }

    fn graph_stage<'t>(
        &self,
        tape: &mut Tape<'t>,
        params: &[Var],
        x: Var,
        graph: &'t GraphTensors,
        dropout: &mut Dropout<'_>,
    ) -> Var {
        let l = &self.layout;
        let mut acc = tape.matmul(x, params[l.rgcn.self_w]);
        for (r, adj) in &graph.relations {
            let a = tape.constant_ref(adj);
            let agg = tape.matmul(a, x);
            let msg = tape.matmul(agg, params[l.rgcn.relation_w[*r]]);
            acc = tape.add(acc, msg);
        }
        let acc = tape.add_row(acc, params[l.rgcn.b]);
        let h = tape.relu(acc);
        let mut h = dropout.apply(tape, h);
        for layer in &l.graph {
            h = self.transformer_layer(tape, params, h, layer, Some(&graph.attention_mask), dropout);
        }
        if let Some(norm) = l.graph_norm {
            h = layer_norm(tape, params, h, norm);
        }
        h
    }

    /// Graph block alone (relational convolution + graph transformer) on a
    /// given context-encoder output, in evaluation mode.
    pub fn graph_block(&self, context: &Array2<f64>, graph: &GraphTensors) -> Result<Array2<f64>> {
        if context.nrows() != graph.num_nodes || context.ncols() != self.config.hidden_dim {
            return Err(Error::Dimension("context shape does not match graph / hidden_dim".into()));
        }
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.values.iter().map(|v| tape.param(v)).collect();
        let x = tape.constant(context.clone());
        let h = self.graph_stage(&mut tape, &params, x, graph, &mut Dropout { rate: 0.0, rng: None });
        Ok(tape.value(h).clone())
    }

    /// Evaluation-mode forward pass of one conversation.
    pub fn forward(&self, audio: &Array2<f64>, video: &Array2<f64>, graph: &GraphTensors) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, audio, video, graph, None)?;
        Ok(ForwardOutput {
            logits: tape.value(rec.logits).clone(),
            node_embeddings: tape.value(rec.embeddings).clone(),
        })
    }

    /// Evaluation-mode forward pass over a batch of conversations.
    pub fn forward_batch(&self, inputs: &[(Array2<f64>, Array2<f64>)], graphs: &[GraphTensors]) -> Result<Vec<ForwardOutput>> {
        if inputs.len() != graphs.len() {
            return Err(Error::Dimension(format!("{} conversations but {} graphs", inputs.len(), graphs.len())));
        }
        inputs
            .iter()
            .zip(graphs)
            .map(|((a, v), g)| self.forward(a, v, g))
            .collect()
    }

    pub fn classifier_shape(&self) -> (usize, usize) {
        self.params.values[self.layout.classifier.w].dim()
    }
}

fn linear(tape: &mut Tape<'_>, params: &[Var], x: Var, idx: LinearIdx) -> Var {
    let y = tape.matmul(x, params[idx.w]);
    tape.add_row(y, params[idx.b])
}

fn layer_norm(tape: &mut Tape<'_>, params: &[Var], x: Var, idx: NormIdx) -> Var {
    let y = tape.normalize_rows(x);
    let y = tape.mul_row(y, params[idx.gain]);
    tape.add_row(y, params[idx.bias])
}
