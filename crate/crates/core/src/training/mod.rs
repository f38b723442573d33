//! Baseline, masked and distillation training loops plus evaluation under
//! modality restriction.

pub mod checkpoint;
pub mod metrics;
pub mod optim;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::graph::{build_graph_with_speakers, GraphConfig};
use crate::losses::{self, DistillConfig};
use crate::masking::{self, MaskPlan, MaskScenarioProbs, RandomMaskParams, Scenario};
use crate::network::tape::Tape;
use crate::network::{GraphTensors, Modality, ModelConfig, Network};
use crate::rng::{self, streams, StreamRng};

pub use metrics::Metrics;
pub use optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    /// Four-scenario masking over audio and video.
    Masked,
    /// {None, Random} masking only, for single-modality models.
    MaskedUnimodal,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Masked => "masked",
            TrainMode::MaskedUnimodal => "masked_unimodal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data_order: u64,
    pub masking: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data_order: 1,
            masking: 2,
        }
    }
}

/// All seeds that determine a run, as embedded in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub init: u64,
    pub data_order: u64,
    pub masking: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub model: ModelConfig,
    pub graph: GraphConfig,
    pub mask: MaskScenarioProbs,
    pub random_mask: RandomMaskParams,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub patience: usize,
    pub seeds: Seeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Baseline,
            model: ModelConfig::default(),
            graph: GraphConfig::default(),
            mask: MaskScenarioProbs::default(),
            random_mask: RandomMaskParams::default(),
            optimizer: AdamConfig::default(),
            epochs: 50,
            patience: 10,
            seeds: Seeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::validation("train.epochs", "must be at least 1"));
        }
        match self.mode {
            TrainMode::Baseline => {}
            TrainMode::Masked => {
                if self.model.modalities.len() < 2 {
                    return Err(Error::validation("train.mode", "masked training needs at least two modalities"));
                }
                self.mask.validate()?;
                self.random_mask.validate()?;
            }
            TrainMode::MaskedUnimodal => {
                self.mask.unimodal()?;
                self.random_mask.validate()?;
            }
        }
        Ok(())
    }

    pub fn seed_record(&self) -> SeedRecord {
        SeedRecord {
            init: self.model.seed,
            data_order: self.seeds.data_order,
            masking: self.seeds.masking,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub(crate) fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serialises");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: String,
    pub config_hash: String,
    pub seeds: SeedRecord,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub loss_trace: Vec<f64>,
    pub val_f1_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_fingerprint: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub graph: GraphConfig,
    pub provenance: Provenance,
}

impl TrainedModel {
    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn fingerprint(&self) -> String {
        self.network.params().fingerprint()
    }
}

/// One conversation ready for the network.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub audio: Array2<f64>,
    pub video: Array2<f64>,
    pub labels: Vec<usize>,
    pub graph: GraphTensors,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Checks dataset/model compatibility and builds per-conversation tensors.
pub fn prepare(dataset: &Dataset, model: &ModelConfig, graph: &GraphConfig) -> Result<Vec<Prepared>> {
    let h = &dataset.header;
    if model.uses(Modality::Audio) && h.audio_dim != model.audio_dim {
        return Err(Error::validation(
            "model.audio_dim",
            format!("dataset audio_dim {} != model {}", h.audio_dim, model.audio_dim),
        ));
    }
    if model.uses(Modality::Video) && h.video_dim != model.video_dim {
        return Err(Error::validation(
            "model.video_dim",
            format!("dataset video_dim {} != model {}", h.video_dim, model.video_dim),
        ));
    }
    if h.num_classes != model.num_classes {
        return Err(Error::validation(
            "model.num_classes",
            format!("dataset num_classes {} != model {}", h.num_classes, model.num_classes),
        ));
    }
    if h.num_speakers > model.num_speakers {
        return Err(Error::validation(
            "model.num_speakers",
            format!("dataset has {} speakers, model supports {}", h.num_speakers, model.num_speakers),
        ));
    }
    dataset
        .conversations
        .iter()
        .map(|conv| {
            if conv.len() > model.max_len {
                return Err(Error::validation(
                    "model.max_len",
                    format!("conversation {} has {} utterances", conv.conv_id, conv.len()),
                ));
            }
            let conv_graph = build_graph_with_speakers(conv, graph, model.num_speakers);
            Ok(Prepared {
                audio: conv.audio_matrix(h.audio_dim)?,
                video: conv.video_matrix(h.video_dim)?,
                labels: conv.labels(),
                graph: GraphTensors::new(&conv_graph),
            })
        })
        .collect()
}

/// Masking plan that keeps exactly the `active` modalities, built through
/// the same scenario path as training-time masking.
pub fn inference_plan(active: &[Modality], len: usize) -> Result<MaskPlan> {
    let audio = active.contains(&Modality::Audio);
    let video = active.contains(&Modality::Video);
    let scenario = match (audio, video) {
        (true, true) => Scenario::None,
        (true, false) => Scenario::FullVideo,
        (false, true) => Scenario::FullAudio,
        (false, false) => return Err(Error::validation("modalities", "no active modality")),
    };
    // Only the Random scenario consumes randomness.
    let mut unused = rng::stream(0, 0);
    Ok(masking::build_mask(scenario, len, &RandomMaskParams::default(), &mut unused))
}

fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Predictions of `network` on prepared conversations with only `active`
/// modalities kept (the rest zero-filled).
pub fn predict(network: &Network, data: &[Prepared], active: &[Modality]) -> Result<Vec<Vec<usize>>> {
    let usable: Vec<Modality> = active.iter().copied().filter(|m| network.config().uses(*m)).collect();
    if usable.is_empty() {
        return Err(Error::validation(
            "modalities",
            format!("none of {active:?} is an input of this model ({:?})", network.config().modalities),
        ));
    }
    let mut keep = usable;
    // Modalities the model does not take are irrelevant to the plan.
    for m in [Modality::Audio, Modality::Video] {
        if !network.config().uses(m) && !keep.contains(&m) {
            keep.push(m);
        }
    }
    data.par_iter()
        .map(|conv| {
            let plan = inference_plan(&keep, conv.len())?;
            let (audio, video) = masking::apply_mask(&conv.audio, &conv.video, &plan)?;
            let out = network.forward(&audio, &video, &conv.graph)?;
            Ok(argmax_rows(&out.logits))
        })
        .collect()
}

pub fn evaluate_prepared(network: &Network, data: &[Prepared], active: &[Modality]) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::validation("test_set", "empty evaluation set"));
    }
    let preds = predict(network, data, active)?;
    let preds: Vec<usize> = preds.into_iter().flatten().collect();
    let labels: Vec<usize> = data.iter().flat_map(|c| c.labels.iter().copied()).collect();
    Metrics::from_predictions(&preds, &labels, network.config().num_classes)
}

/// Evaluation-mode metrics with inactive modalities zero-filled.
pub fn evaluate(model: &TrainedModel, test_set: &Dataset, active: &[Modality]) -> Result<Metrics> {
    if test_set.conversations.is_empty() {
        return Err(Error::validation("test_set", "empty evaluation set"));
    }
    let data = prepare(test_set, model.config(), &model.graph)?;
    evaluate_prepared(&model.network, &data, active)
}

/// State shared by every training loop.
struct Loop<'a> {
    train: &'a [Prepared],
    val: &'a [Prepared],
    epochs: usize,
    patience: usize,
    optimizer: AdamConfig,
    data_order_seed: u64,
}

struct LoopResult {
    network: Network,
    epochs_run: usize,
    best_epoch: usize,
    best_val_f1: f64,
    loss_trace: Vec<f64>,
    val_f1_trace: Vec<f64>,
}

/// Audio and video inputs for one step, borrowed when unmasked.
type Inputs<'c> = (std::borrow::Cow<'c, Array2<f64>>, std::borrow::Cow<'c, Array2<f64>>);

/// Per-step objective: given the (possibly masked) conversation, records
/// the loss on the tape and returns it.
trait Objective {
    fn inputs<'c>(&mut self, conv: &'c Prepared) -> Result<Inputs<'c>>;

    fn loss<'t>(
        &mut self,
        tape: &mut Tape<'t>,
        rec: &crate::network::Recorded,
        conv_index: usize,
        conv: &Prepared,
    ) -> Result<crate::network::tape::Var>;
}

impl Loop<'_> {
    fn run(&self, mut network: Network, objective: &mut dyn Objective) -> Result<LoopResult> {
        let val_modalities = network.config().modalities.clone();
        let mut order_rng = rng::stream(self.data_order_seed, streams::DATA_ORDER);
        let mut dropout_rng = rng::stream(network.config().seed, streams::DROPOUT);
        let mut adam = optim::Adam::new(self.optimizer, network.params().values());
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut best: Option<(f64, usize, crate::network::Params)> = None;
        let mut since_best = 0;
        let mut loss_trace = Vec::new();
        let mut val_f1_trace = Vec::new();

        for epoch in 0..self.epochs {
            order.shuffle(&mut order_rng);
            let mut epoch_loss = 0.0;
            for (step, &ci) in order.iter().enumerate() {
                let conv = &self.train[ci];
                let mut grads = {
                    let (audio, video) = objective.inputs(conv)?;
                    let mut tape = Tape::new();
                    let rec = network.record(&mut tape, &audio, &video, &conv.graph, Some(&mut dropout_rng))?;
                    let loss = objective.loss(&mut tape, &rec, ci, conv)?;
                    let value = tape.scalar(loss);
                    if !value.is_finite() {
                        return Err(Error::Numeric(format!("loss is {value} at epoch {epoch}, step {step}")));
                    }
                    epoch_loss += value;
                    let mut g = tape.backward(loss);
                    rec.params.iter().map(|v| g.take(*v)).collect::<Vec<_>>()
                };
                adam.step(network.params_mut().values_mut(), &mut grads);
                if !network.params().all_finite() {
                    return Err(Error::Numeric(format!("non-finite parameters after epoch {epoch}, step {step}")));
                }
            }
            loss_trace.push(epoch_loss / self.train.len().max(1) as f64);
            let val_f1 = evaluate_prepared(&network, self.val, &val_modalities)?.weighted_f1;
            val_f1_trace.push(val_f1);
            match &best {
                Some((b, _, _)) if val_f1 <= *b => since_best += 1,
                _ => {
                    best = Some((val_f1, epoch, network.params().clone()));
                    since_best = 0;
                }
            }
            if since_best >= self.patience.max(1) {
                break;
            }
        }
        let epochs_run = loss_trace.len();
        let (best_val_f1, best_epoch, params) = best.expect("at least one epoch ran");
        let network = Network::from_params(network.config().clone(), params)?;
        Ok(LoopResult {
            network,
            epochs_run,
            best_epoch,
            best_val_f1,
            loss_trace,
            val_f1_trace,
        })
    }
}

struct CrossEntropyObjective {
    mode: TrainMode,
    probs: MaskScenarioProbs,
    params: RandomMaskParams,
    mask_rng: StreamRng,
}

impl Objective for CrossEntropyObjective {
    fn inputs<'c>(&mut self, conv: &'c Prepared) -> Result<Inputs<'c>> {
        use std::borrow::Cow;
        if self.mode == TrainMode::Baseline {
            return Ok((Cow::Borrowed(&conv.audio), Cow::Borrowed(&conv.video)));
        }
        let scenario = masking::sample_scenario(&self.probs, &mut self.mask_rng)?;
        let plan = masking::build_mask(scenario, conv.len(), &self.params, &mut self.mask_rng);
        let (a, v) = masking::apply_mask(&conv.audio, &conv.video, &plan)?;
        Ok((Cow::Owned(a), Cow::Owned(v)))
    }

    fn loss<'t>(
        &mut self,
        tape: &mut Tape<'t>,
        rec: &crate::network::Recorded,
        _conv_index: usize,
        conv: &Prepared,
    ) -> Result<crate::network::tape::Var> {
        losses::record_cross_entropy(tape, rec.logits, &conv.labels)
    }
}

/// Trains one model with cross entropy, optionally with input masking.
///
/// Returns the parameters of the epoch with the best validation weighted F1.
pub fn train(train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let train_data = prepare(train_set, &config.model, &config.graph)?;
    let val_data = prepare(val_set, &config.model, &config.graph)?;
    train_prepared(&train_data, &val_data, config)
}

pub fn train_prepared(train_data: &[Prepared], val_data: &[Prepared], config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::validation("dataset", "training and validation sets must be non-empty"));
    }
    let probs = match config.mode {
        TrainMode::MaskedUnimodal => config.mask.unimodal()?,
        _ => config.mask,
    };
    let mut objective = CrossEntropyObjective {
        mode: config.mode,
        probs,
        params: config.random_mask,
        mask_rng: rng::stream(config.seeds.masking, streams::MASKING),
    };
    let network = Network::new(config.model.clone())?;
    let result = Loop {
        train: train_data,
        val: val_data,
        epochs: config.epochs,
        patience: config.patience,
        optimizer: config.optimizer,
        data_order_seed: config.seeds.data_order,
    }
    .run(network, &mut objective)?;
    Ok(TrainedModel {
        network: result.network,
        graph: config.graph,
        provenance: Provenance {
            kind: config.mode.as_str().to_string(),
            config_hash: config.hash(),
            seeds: config.seed_record(),
            epochs_run: result.epochs_run,
            best_epoch: result.best_epoch,
            best_val_f1: result.best_val_f1,
            loss_trace: result.loss_trace,
            val_f1_trace: result.val_f1_trace,
            teacher_fingerprint: None,
        },
    })
}

/// Student-side settings for [`distill`]: the student's own architecture
/// and optimisation schedule, plus the loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentConfig {
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub patience: usize,
    pub seeds: Seeds,
    pub distill: DistillConfig,
}

impl StudentConfig {
    /// Audio-only student mirroring a teacher training config.
    pub fn audio_student(teacher: &TrainConfig) -> Self {
        Self {
            model: ModelConfig {
                modalities: vec![Modality::Audio],
                ..teacher.model.clone()
            },
            optimizer: teacher.optimizer,
            epochs: teacher.epochs,
            patience: teacher.patience,
            seeds: teacher.seeds,
            distill: DistillConfig::default(),
        }
    }

    /// The equivalent plain training config (what `alpha1 = 0` reduces to).
    pub fn as_train_config(&self, graph: GraphConfig) -> TrainConfig {
        TrainConfig {
            mode: TrainMode::Baseline,
            model: self.model.clone(),
            graph,
            optimizer: self.optimizer,
            epochs: self.epochs,
            patience: self.patience,
            seeds: self.seeds,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.distill.validate()?;
        if self.epochs == 0 {
            return Err(Error::validation("student.epochs", "must be at least 1"));
        }
        Ok(())
    }
}

struct DistillObjective {
    teacher_embeddings: Vec<Array2<f64>>,
    config: DistillConfig,
    negative_rng: StreamRng,
}

impl Objective for DistillObjective {
    fn inputs<'c>(&mut self, conv: &'c Prepared) -> Result<Inputs<'c>> {
        use std::borrow::Cow;
        Ok((Cow::Borrowed(&conv.audio), Cow::Borrowed(&conv.video)))
    }

    fn loss<'t>(
        &mut self,
        tape: &mut Tape<'t>,
        rec: &crate::network::Recorded,
        conv_index: usize,
        conv: &Prepared,
    ) -> Result<crate::network::tape::Var> {
        let ce = losses::record_cross_entropy(tape, rec.logits, &conv.labels)?;
        if self.config.alpha1 == 0.0 || conv.len() < 2 {
            return Ok(tape.combine(&[(ce, self.config.alpha2)]));
        }
        let teacher = &self.teacher_embeddings[conv_index];
        let mut negatives = Array2::zeros(teacher.raw_dim());
        for i in 0..conv.len() {
            let j = losses::sample_negative(i, &conv.labels, self.config.negative_policy, &mut self.negative_rng)?;
            negatives.row_mut(i).assign(&teacher.row(j));
        }
        let triplet = losses::record_triplet(
            tape,
            rec.embeddings,
            teacher.view(),
            negatives.view(),
            self.config.margin,
            self.config.p,
        )?;
        Ok(tape.combine(&[(triplet, self.config.alpha1), (ce, self.config.alpha2)]))
    }
}

/// Trains a student against a frozen teacher with
/// `alpha1 * triplet + alpha2 * cross_entropy`.
///
/// Positives are the teacher's embeddings of the same utterance, negatives
/// the teacher's embeddings of a sampled utterance of the same conversation.
pub fn distill(teacher: &TrainedModel, train_set: &Dataset, val_set: &Dataset, student: &StudentConfig) -> Result<TrainedModel> {
    student.validate()?;
    let t = teacher.config();
    if student.model.hidden_dim != t.hidden_dim {
        return Err(Error::Config(format!(
            "student hidden_dim {} != teacher hidden_dim {}; embedding taps must be comparable",
            student.model.hidden_dim, t.hidden_dim
        )));
    }
    if let Some(m) = student.model.modalities.iter().find(|m| !t.uses(**m)) {
        return Err(Error::Config(format!("student modality {m} is not an input of the teacher")));
    }
    let graph = teacher.graph;
    let teacher_data = prepare(train_set, t, &graph)?;
    let train_data = prepare(train_set, &student.model, &graph)?;
    let val_data = prepare(val_set, &student.model, &graph)?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::validation("dataset", "training and validation sets must be non-empty"));
    }
    // The teacher runs in evaluation mode, so its taps are fixed per conversation.
    let teacher_embeddings = teacher_data
        .par_iter()
        .map(|c| Ok(teacher.network.forward(&c.audio, &c.video, &c.graph)?.node_embeddings))
        .collect::<Result<Vec<_>>>()?;
    let mut objective = DistillObjective {
        teacher_embeddings,
        config: student.distill,
        negative_rng: rng::stream(student.seeds.data_order, streams::NEGATIVES),
    };
    let result = Loop {
        train: &train_data,
        val: &val_data,
        epochs: student.epochs,
        patience: student.patience,
        optimizer: student.optimizer,
        data_order_seed: student.seeds.data_order,
    }
    .run(Network::new(student.model.clone())?, &mut objective)?;
    let config_hash = hash_json(&(student, &graph, teacher.fingerprint()));
    Ok(TrainedModel {
        network: result.network,
        graph,
        provenance: Provenance {
            kind: "distilled".into(),
            config_hash,
            seeds: SeedRecord {
                init: student.model.seed,
                data_order: student.seeds.data_order,
                masking: student.seeds.masking,
            },
            epochs_run: result.epochs_run,
            best_epoch: result.best_epoch,
            best_val_f1: result.best_val_f1,
            loss_trace: result.loss_trace,
            val_f1_trace: result.val_f1_trace,
            teacher_fingerprint: Some(teacher.fingerprint()),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_splits, SynthConfig};

    pub(crate) fn tiny_setup() -> ([Dataset; 3], TrainConfig) {
        let synth = SynthConfig {
            audio_dim: 6,
            video_dim: 5,
            min_len: 2,
            max_len: 6,
            ..SynthConfig::default()
        };
        let splits = generate_splits(&synth, 12, 4, 4).unwrap();
        let cfg = TrainConfig {
            model: ModelConfig {
                audio_dim: 6,
                video_dim: 5,
                hidden_dim: 8,
                ff_dim: 8,
                seq_context_layers: 1,
                gnn_layers: 1,
                heads: 2,
                ..ModelConfig::default()
            },
            epochs: 3,
            ..TrainConfig::default()
        };
        (splits, cfg)
    }

    #[test]
    fn training_is_deterministic() {
        let ([train_set, val, _], cfg) = tiny_setup();
        let a = train(&train_set, &val, &cfg).unwrap();
        let b = train(&train_set, &val, &cfg).unwrap();
        assert_eq!(a.provenance.loss_trace, b.provenance.loss_trace);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.provenance.epochs_run, 3);
    }

    #[test]
    fn masked_with_only_none_matches_baseline() {
        let ([train_set, val, _], cfg) = tiny_setup();
        let base = train(&train_set, &val, &cfg).unwrap();
        let masked = train(
            &train_set,
            &val,
            &TrainConfig {
                mode: TrainMode::Masked,
                mask: MaskScenarioProbs {
                    p_none: 1.0,
                    p_full_audio: 0.0,
                    p_full_video: 0.0,
                    p_random: 0.0,
                },
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(base.provenance.loss_trace, masked.provenance.loss_trace);
        assert_eq!(base.fingerprint(), masked.fingerprint());
    }

    #[test]
    fn masked_mode_needs_two_modalities() {
        let (_, mut cfg) = tiny_setup();
        cfg.mode = TrainMode::Masked;
        cfg.model.modalities = vec![Modality::Audio];
        assert!(cfg.validate().is_err());
        cfg.mode = TrainMode::MaskedUnimodal;
        cfg.validate().unwrap();
    }

    #[test]
    fn dim_mismatch_rejected_before_training() {
        let ([train_set, val, _], mut cfg) = tiny_setup();
        cfg.model.audio_dim = 7;
        assert!(matches!(train(&train_set, &val, &cfg), Err(Error::Validation { .. })));
    }

    #[test]
    fn distill_keeps_teacher_frozen_and_alpha1_zero_reduces_to_training() {
        let ([train_set, val, _], cfg) = tiny_setup();
        let teacher = train(&train_set, &val, &cfg).unwrap();
        let before = teacher.fingerprint();
        let student_cfg = StudentConfig::audio_student(&cfg);
        let student = distill(&teacher, &train_set, &val, &student_cfg).unwrap();
        assert_eq!(teacher.fingerprint(), before);
        assert_eq!(student.provenance.teacher_fingerprint.as_deref(), Some(before.as_str()));

        let plain_student = StudentConfig {
            distill: DistillConfig {
                alpha1: 0.0,
                ..DistillConfig::default()
            },
            ..student_cfg.clone()
        };
        let reduced = distill(&teacher, &train_set, &val, &plain_student).unwrap();
        let plain = train(&train_set, &val, &plain_student.as_train_config(cfg.graph)).unwrap();
        assert_eq!(reduced.provenance.loss_trace, plain.provenance.loss_trace);
        assert_eq!(reduced.fingerprint(), plain.fingerprint());
    }

    #[test]
    fn distill_rejects_incomparable_taps() {
        let ([train_set, val, _], cfg) = tiny_setup();
        let teacher = train(&train_set, &val, &TrainConfig { epochs: 1, ..cfg.clone() }).unwrap();
        let mut student = StudentConfig::audio_student(&cfg);
        student.model.hidden_dim = 4;
        assert!(matches!(distill(&teacher, &train_set, &val, &student), Err(Error::Config(_))));
    }

    #[test]
    fn evaluation_paths() {
        let ([train_set, val, test], cfg) = tiny_setup();
        let model = train(&train_set, &val, &TrainConfig { epochs: 1, ..cfg }).unwrap();
        let av = evaluate(&model, &test, &[Modality::Audio, Modality::Video]).unwrap();
        assert_eq!(av.num_samples as usize, test.num_utterances());
        let total: u64 = av.confusion.iter().flatten().sum();
        assert_eq!(total as usize, test.num_utterances());

        // All modalities active is the identity plan.
        let data = prepare(&test, model.config(), &model.graph).unwrap();
        let mut manual = Vec::new();
        for conv in &data {
            let (a, v) = masking::apply_mask(&conv.audio, &conv.video, &MaskPlan::identity(conv.len())).unwrap();
            manual.extend(argmax_rows(&model.network.forward(&a, &v, &conv.graph).unwrap().logits));
        }
        let preds: Vec<usize> = predict(&model.network, &data, &[Modality::Audio, Modality::Video])
            .unwrap()
            .into_iter()
            .flatten()
            .collect();
        assert_eq!(preds, manual);

        assert!(evaluate(&model, &Dataset::empty(test.header.clone()), &[Modality::Audio]).is_err());
    }

    #[test]
    fn audio_only_inference_equals_full_audio_mask_path() {
        let ([train_set, val, test], cfg) = tiny_setup();
        let model = train(&train_set, &val, &TrainConfig { epochs: 1, ..cfg }).unwrap();
        let data = prepare(&test, model.config(), &model.graph).unwrap();
        let mut r = rng::stream(9, 9);
        let mut manual = Vec::new();
        for conv in &data {
            let plan = masking::build_mask(Scenario::FullVideo, conv.len(), &RandomMaskParams::default(), &mut r);
            let (a, v) = masking::apply_mask(&conv.audio, &conv.video, &plan).unwrap();
            manual.extend(argmax_rows(&model.network.forward(&a, &v, &conv.graph).unwrap().logits));
        }
        let preds: Vec<usize> = predict(&model.network, &data, &[Modality::Audio]).unwrap().into_iter().flatten().collect();
        assert_eq!(preds, manual);
    }
}
