#![allow(dead_code)]

use std::collections::BTreeMap;

use maskdistill::corpus::{Conversation, Utterance};
use maskdistill::graph::{build_graph, GraphConfig};
use maskdistill::losses;
use maskdistill::network::tape::Tape;
use maskdistill::network::{GraphTensors, LayerKind, ModelConfig, Network};
use ndarray::Array2;
use rand::Rng;

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        audio_dim: 5,
        video_dim: 4,
        hidden_dim: 8,
        ff_dim: 12,
        seq_context_layers: 1,
        gnn_layers: 1,
        heads: 2,
        num_classes: 4,
        num_speakers: 2,
        dropout: 0.0,
        max_len: 8,
        seed: 3,
        ..ModelConfig::default()
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub struct GradCase {
    pub network: Network,
    pub audio: Array2<f64>,
    pub video: Array2<f64>,
    pub graph: GraphTensors,
    pub labels: Vec<usize>,
    pub positives: Array2<f64>,
    pub negatives: Array2<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub margin: f64,
}

impl GradCase {
    pub fn new(config: ModelConfig, n: usize, seed: u64) -> Self {
        let mut rng = maskdistill::rng::stream(seed, 0);
        let conv = Conversation {
            conv_id: "toy".into(),
            num_speakers: config.num_speakers,
            utterances: (0..n)
                .map(|i| Utterance {
                    index: i,
                    speaker: i % config.num_speakers,
                    label: i % config.num_classes,
                    audio: vec![0.0; config.audio_dim],
                    video: vec![0.0; config.video_dim],
                })
                .collect(),
        };
        let graph = GraphTensors::new(&build_graph(&conv, &GraphConfig::default()));
        let h = config.hidden_dim;
        // Perturb every parameter so no layer sits at its symmetric init.
        let mut network = Network::new(config.clone()).unwrap();
        for v in network.params_mut().values_mut() {
            v.mapv_inplace(|x| x + rng.random_range(-0.3..0.3));
        }
        Self {
            audio: random_matrix(n, config.audio_dim, &mut rng),
            video: random_matrix(n, config.video_dim, &mut rng),
            labels: conv.labels(),
            positives: random_matrix(n, h, &mut rng) * 3.0,
            negatives: random_matrix(n, h, &mut rng) * 3.0,
            network,
            graph,
            alpha1: 0.7,
            alpha2: 1.3,
            margin: 25.0,
        }
    }

    fn record_loss<'t>(&'t self, net: &'t Network, tape: &mut Tape<'t>) -> (Vec<maskdistill::network::tape::Var>, maskdistill::network::tape::Var) {
        let rec = net.record(tape, &self.audio, &self.video, &self.graph, None).unwrap();
        let ce = losses::record_cross_entropy(tape, rec.logits, &self.labels).unwrap();
        let tri = losses::record_triplet(tape, rec.embeddings, self.positives.view(), self.negatives.view(), self.margin, 2.0).unwrap();
        let total = tape.combine(&[(tri, self.alpha1), (ce, self.alpha2)]);
        (rec.params, total)
    }

    pub fn loss_at(&self, net: &Network) -> f64 {
        let mut tape = Tape::new();
        let (_, total) = self.record_loss(net, &mut tape);
        tape.scalar(total)
    }

    pub fn analytic(&self) -> Vec<Array2<f64>> {
        let mut tape = Tape::new();
        let (params, total) = self.record_loss(&self.network, &mut tape);
        let grads = tape.backward(total);
        params
            .iter()
            .zip(self.network.params().values())
            .map(|(p, v)| grads.get(*p).cloned().unwrap_or_else(|| Array2::zeros(v.raw_dim())))
            .collect()
    }
}

#[derive(Debug)]
pub struct GradReport {
    pub checked: BTreeMap<String, usize>,
    pub failures: Vec<String>,
    pub worst_rel: f64,
}

/// Central-difference check of up to `per_kind` sampled scalars for every
/// layer kind.
pub fn gradient_check(case: &GradCase, per_kind: usize, seed: u64) -> GradReport {
    let analytic = case.analytic();
    let specs = case.network.params().specs().to_vec();
    let mut rng = maskdistill::rng::stream(seed, 1);
    let mut checked = BTreeMap::new();
    let mut failures = Vec::new();
    let mut worst_rel: f64 = 0.0;
    let h = 1e-5;
    for kind in LayerKind::ALL {
        let mut candidates = Vec::new();
        for (pi, spec) in specs.iter().enumerate().filter(|(_, s)| s.kind == kind) {
            for r in 0..spec.shape.0 {
                for c in 0..spec.shape.1 {
                    candidates.push((pi, r, c));
                }
            }
        }
        let take = per_kind.min(candidates.len());
        let picks = rand::seq::index::sample(&mut rng, candidates.len(), take);
        for idx in picks.iter() {
            let (pi, r, c) = candidates[idx];
            let mut net = case.network.clone();
            net.params_mut().values_mut()[pi][[r, c]] += h;
            let up = case.loss_at(&net);
            net.params_mut().values_mut()[pi][[r, c]] -= 2.0 * h;
            let down = case.loss_at(&net);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][[r, c]];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let ok = diff < 1e-8 || diff <= 1e-4 * scale;
            if scale > 0.0 {
                worst_rel = worst_rel.max(if diff < 1e-8 { 0.0 } else { diff / scale });
            }
            if !ok {
                failures.push(format!("{}[{r},{c}]: analytic {a:e} numeric {numeric:e}", specs[pi].name));
            }
        }
        checked.insert(format!("{kind:?}"), take);
    }
    GradReport { checked, failures, worst_rel }
}

/// O(n^2) window predicate: is `dst` a neighbour of `src`?
pub fn oracle_edge(src: usize, dst: usize, past: usize, future: usize, disjoint: bool, self_loops: bool) -> bool {
    if disjoint {
        return src == dst;
    }
    if src == dst {
        return self_loops;
    }
    if dst < src {
        src - dst <= past
    } else {
        dst - src <= future
    }
}

/// Relation id from first principles: 0 for self, then one block of
/// `m * m` speaker pairs for past edges and one for future edges.
pub fn oracle_relation(src: usize, dst: usize, s_src: usize, s_dst: usize, m: usize) -> usize {
    if src == dst {
        0
    } else if dst < src {
        1 + s_src * m + s_dst
    } else {
        1 + m * m + s_src * m + s_dst
    }
}

pub fn oracle_conversation(speakers: &[usize], num_speakers: usize) -> Conversation {
    Conversation {
        conv_id: "oracle".into(),
        num_speakers,
        utterances: speakers
            .iter()
            .enumerate()
            .map(|(i, &s)| Utterance {
                index: i,
                speaker: s,
                label: 0,
                audio: vec![],
                video: vec![],
            })
            .collect(),
    }
}

/// Confusion matrix by explicit counting, `m[label][pred]`.
pub fn oracle_confusion(preds: &[usize], labels: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; k]; k];
    for (l, row) in m.iter_mut().enumerate() {
        for (p, cell) in row.iter_mut().enumerate() {
            *cell = preds.iter().zip(labels).filter(|(pp, ll)| **pp == p && **ll == l).count() as u64;
        }
    }
    m
}

/// Weighted F1 straight from prediction and label vectors.
pub fn oracle_weighted_f1(preds: &[usize], labels: &[usize], k: usize) -> f64 {
    let n = labels.len() as f64;
    let mut total = 0.0;
    for c in 0..k {
        let tp = preds.iter().zip(labels).filter(|(p, l)| **p == c && **l == c).count() as f64;
        let fp = preds.iter().zip(labels).filter(|(p, l)| **p == c && **l != c).count() as f64;
        let fn_ = preds.iter().zip(labels).filter(|(p, l)| **p != c && **l == c).count() as f64;
        let support = tp + fn_;
        // F1 = 2tp / (2tp + fp + fn), zero when the class never appears.
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        total += support / n * f1;
    }
    total
}

/// Naive softmax cross entropy of one row.
pub fn oracle_cross_entropy_row(logits: &[f64], label: usize) -> f64 {
    let mut denom = 0.0;
    for &z in logits {
        denom += z.exp();
    }
    -(logits[label].exp() / denom).ln()
}

pub fn oracle_distance(a: &[f64], b: &[f64], p: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += (a[i] - b[i]).abs().powf(p);
    }
    acc.powf(1.0 / p)
}

pub fn oracle_triplet(x: &[f64], pos: &[f64], neg: &[f64], margin: f64, p: f64) -> f64 {
    let v = oracle_distance(x, pos, p) - oracle_distance(x, neg, p) + margin;
    if v > 0.0 {
        v
    } else {
        0.0
    }
}
