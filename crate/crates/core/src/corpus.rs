//! Dataset schema, line-delimited JSON storage, validation, the seeded
//! synthetic conversation generator and the learned-feature projection.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

pub const DEFAULT_AUDIO_DIM: usize = 100;
pub const DEFAULT_VIDEO_DIM: usize = 512;
pub const DEFAULT_NUM_CLASSES: usize = 4;

/// Neutral, happy, sad, angry.
pub const EMOTION_NAMES: [&str; 4] = ["neutral", "happy", "sad", "angry"];

pub fn class_name(class: usize) -> String {
    EMOTION_NAMES
        .get(class)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("class_{class}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub index: usize,
    pub speaker: usize,
    pub label: usize,
    pub audio: Vec<f64>,
    pub video: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conversation {
    pub conv_id: String,
    pub num_speakers: usize,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.label).collect()
    }

    pub fn speakers(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.speaker).collect()
    }

    /// Audio features stacked as a `len x audio_dim` matrix.
    pub fn audio_matrix(&self, audio_dim: usize) -> Result<Array2<f64>> {
        stack(self.utterances.iter().map(|u| u.audio.as_slice()), audio_dim, &self.conv_id, "audio")
    }

    pub fn video_matrix(&self, video_dim: usize) -> Result<Array2<f64>> {
        stack(self.utterances.iter().map(|u| u.video.as_slice()), video_dim, &self.conv_id, "video")
    }
}

fn stack<'a>(
    rows: impl ExactSizeIterator<Item = &'a [f64]>,
    dim: usize,
    conv_id: &str,
    field: &str,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.enumerate() {
        if row.len() != dim {
            return Err(Error::Dimension(format!(
                "conversation {conv_id} utterance {i}: {field} has length {}, expected {dim}",
                row.len()
            )));
        }
        out.row_mut(i).assign(&ArrayView1::from(row));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn synth_stream(self) -> u64 {
        match self {
            Split::Train => streams::SYNTH_TRAIN,
            Split::Val => streams::SYNTH_VAL,
            Split::Test => streams::SYNTH_TEST,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub audio_dim: usize,
    pub video_dim: usize,
    pub num_classes: usize,
    pub num_speakers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Default for DatasetHeader {
    fn default() -> Self {
        Self {
            audio_dim: DEFAULT_AUDIO_DIM,
            video_dim: DEFAULT_VIDEO_DIM,
            num_classes: DEFAULT_NUM_CLASSES,
            num_speakers: 2,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub conversations: Vec<Conversation>,
}

impl Dataset {
    pub fn empty(header: DatasetHeader) -> Self {
        Self {
            header,
            conversations: Vec::new(),
        }
    }

    pub fn num_utterances(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    /// Utterance count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.header.num_classes];
        for u in self.conversations.iter().flat_map(|c| &c.utterances) {
            if let Some(slot) = counts.get_mut(u.label) {
                *slot += 1;
            }
        }
        counts
    }
}

/// A single broken invariant, located as precisely as possible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub conversation: Option<String>,
    pub utterance: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.conversation, self.utterance) {
            (Some(c), Some(u)) => write!(f, "conversation {c}, utterance {u}, {}: {}", self.field, self.message),
            (Some(c), None) => write!(f, "conversation {c}, {}: {}", self.field, self.message),
            _ => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let h = &dataset.header;
    let mut out = Vec::new();
    let mut push = |conv: Option<&str>, utt: Option<usize>, field: &str, message: String| {
        out.push(Violation {
            conversation: conv.map(str::to_string),
            utterance: utt,
            field: field.to_string(),
            message,
        })
    };
    if h.num_classes == 0 {
        push(None, None, "header.num_classes", "must be at least 1".into());
    }
    if h.num_speakers == 0 {
        push(None, None, "header.num_speakers", "must be at least 1".into());
    }
    for conv in &dataset.conversations {
        let id = Some(conv.conv_id.as_str());
        if conv.utterances.is_empty() {
            push(id, None, "utterances", "conversation has no utterances".into());
        }
        if conv.num_speakers == 0 {
            push(id, None, "num_speakers", "must be at least 1".into());
        }
        if conv.num_speakers > h.num_speakers {
            push(
                id,
                None,
                "num_speakers",
                format!("{} exceeds header num_speakers {}", conv.num_speakers, h.num_speakers),
            );
        }
        for (pos, u) in conv.utterances.iter().enumerate() {
            let at = Some(pos);
            if u.index != pos {
                push(id, at, "index", format!("index {} at position {pos}", u.index));
            }
            if u.speaker >= conv.num_speakers {
                push(id, at, "speaker", format!("speaker {} >= num_speakers {}", u.speaker, conv.num_speakers));
            }
            if u.label >= h.num_classes {
                push(id, at, "label", format!("label {} >= num_classes {}", u.label, h.num_classes));
            }
            if u.audio.len() != h.audio_dim {
                push(id, at, "audio", format!("length {} != audio_dim {}", u.audio.len(), h.audio_dim));
            }
            if u.video.len() != h.video_dim {
                push(id, at, "video", format!("length {} != video_dim {}", u.video.len(), h.video_dim));
            }
            if u.audio.iter().chain(&u.video).any(|v| !v.is_finite()) {
                push(id, at, "features", "non-finite feature value".into());
            }
        }
    }
    out
}

fn first_violation_error(violations: Vec<Violation>) -> Result<()> {
    match violations.into_iter().next() {
        None => Ok(()),
        Some(v) => {
            let field = match (&v.conversation, v.utterance) {
                (Some(c), Some(u)) => format!("{c}[{u}].{}", v.field),
                (Some(c), None) => format!("{c}.{}", v.field),
                _ => v.field.clone(),
            };
            Err(Error::Validation {
                field,
                reason: v.message,
            })
        }
    }
}

/// Writes the header line followed by one conversation per line.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    serde_json::to_writer(&mut w, &dataset.header).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for conv in &dataset.conversations {
        serde_json::to_writer(&mut w, conv).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                reason: "missing header line".into(),
            })
        }
    };
    let header: DatasetHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        reason: format!("header: {e}"),
    })?;
    let mut conversations = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 2,
            reason: e.to_string(),
        })?;
        conversations.push(conv);
    }
    let dataset = Dataset { header, conversations };
    first_violation_error(validate(&dataset))?;
    Ok(dataset)
}

/// Parameters of the synthetic corpus.
///
/// Label evidence is split between the modalities: for class `c` the audio
/// prototype carries a fraction `audio_share[c]` of the squared class
/// separation `signal_scale^2` and the video prototype carries the rest.
/// Labels follow a Markov chain that keeps the current emotion with
/// probability `persistence`. Both modalities have a class-independent mean
/// of norm `offset_scale` lying in the span of that modality's prototype
/// directions, so zero-filling a modality moves the class scores unevenly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_conversations: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub num_speakers: usize,
    pub num_classes: usize,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub audio_share: Vec<f64>,
    pub signal_scale: f64,
    pub noise_scale: f64,
    pub persistence: f64,
    pub offset_scale: f64,
    pub seed: u64,
    pub split: Split,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_conversations: 600,
            min_len: 5,
            max_len: 15,
            num_speakers: 2,
            num_classes: DEFAULT_NUM_CLASSES,
            audio_dim: DEFAULT_AUDIO_DIM,
            video_dim: DEFAULT_VIDEO_DIM,
            audio_share: vec![0.75; DEFAULT_NUM_CLASSES],
            signal_scale: 3.0,
            noise_scale: 1.0,
            persistence: 0.7,
            offset_scale: 3.0,
            seed: 42,
            split: Split::Train,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| Err(Error::validation(field, reason));
        if self.min_len == 0 {
            return fail("min_len", "must be at least 1");
        }
        if self.min_len > self.max_len {
            return fail("min_len", "must not exceed max_len");
        }
        if self.num_speakers == 0 {
            return fail("num_speakers", "must be at least 1");
        }
        if self.num_classes < 2 {
            return fail("num_classes", "must be at least 2");
        }
        if self.audio_dim == 0 {
            return fail("audio_dim", "must be at least 1");
        }
        if self.video_dim == 0 {
            return fail("video_dim", "must be at least 1");
        }
        if self.audio_share.len() != self.num_classes {
            return fail("audio_share", "needs one entry per class");
        }
        if self.audio_share.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return fail("audio_share", "entries must lie in [0, 1]");
        }
        if !(self.signal_scale.is_finite() && self.signal_scale >= 0.0) {
            return fail("signal_scale", "must be finite and non-negative");
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return fail("noise_scale", "must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.persistence) {
            return fail("persistence", "must lie in [0, 1]");
        }
        if !(self.offset_scale.is_finite() && self.offset_scale >= 0.0) {
            return fail("offset_scale", "must be finite and non-negative");
        }
        Ok(())
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            audio_dim: self.audio_dim,
            video_dim: self.video_dim,
            num_classes: self.num_classes,
            num_speakers: self.num_speakers,
            split: Some(self.split),
        }
    }

    pub fn for_split(&self, split: Split, n_conversations: usize) -> Self {
        Self {
            split,
            n_conversations,
            ..self.clone()
        }
    }
}

fn random_direction(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit vector along a random Gaussian combination of `dirs`.
fn span_direction(rng: &mut impl Rng, dirs: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; dirs[0].len()];
        for d in dirs {
            let g: f64 = StandardNormal.sample(rng);
            v.iter_mut().zip(d).for_each(|(x, y)| *x += g * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

struct Prototypes {
    audio: Vec<Vec<f64>>,
    video: Vec<Vec<f64>>,
    audio_offset: Vec<f64>,
    video_offset: Vec<f64>,
}

impl Prototypes {
    /// Class means and offsets depend only on the seed and the dims, so
    /// every split of one corpus shares them.
    fn new(config: &SynthConfig) -> Self {
        let mut rng = rng::stream(config.seed, streams::SYNTH_PROTOTYPES);
        let scale = |v: Vec<f64>, s: f64| v.into_iter().map(|x| x * s).collect::<Vec<_>>();
        let mut audio_dirs = Vec::with_capacity(config.num_classes);
        let mut video_dirs = Vec::with_capacity(config.num_classes);
        for _ in 0..config.num_classes {
            audio_dirs.push(random_direction(&mut rng, config.audio_dim));
            video_dirs.push(random_direction(&mut rng, config.video_dim));
        }
        let audio_offset = scale(span_direction(&mut rng, &audio_dirs), config.offset_scale);
        let video_offset = scale(span_direction(&mut rng, &video_dirs), config.offset_scale);
        // Unit directions are nearly orthogonal, so two class means sit
        // about sqrt(2) * amplitude apart.
        let audio = audio_dirs
            .into_iter()
            .zip(&config.audio_share)
            .map(|(d, share)| scale(d, config.signal_scale * share.sqrt()))
            .collect();
        let video = video_dirs
            .into_iter()
            .zip(&config.audio_share)
            .map(|(d, share)| scale(d, config.signal_scale * (1.0 - share).sqrt()))
            .collect();
        Self {
            audio,
            video,
            audio_offset,
            video_offset,
        }
    }
}

/// Deterministic synthetic corpus for `config.split`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let protos = Prototypes::new(config);
    let mut rng = rng::stream(config.seed, config.split.synth_stream());
    let noise_per_dim = config.noise_scale;
    let mut conversations = Vec::with_capacity(config.n_conversations);
    for ci in 0..config.n_conversations {
        let len = rng.random_range(config.min_len..=config.max_len);
        let mut label = rng.random_range(0..config.num_classes);
        let mut speaker = rng.random_range(0..config.num_speakers);
        let mut utterances = Vec::with_capacity(len);
        for index in 0..len {
            if index > 0 {
                if rng.random::<f64>() >= config.persistence {
                    let shift = rng.random_range(1..config.num_classes);
                    label = (label + shift) % config.num_classes;
                }
                if config.num_speakers > 1 && rng.random::<f64>() < 0.8 {
                    let shift = rng.random_range(1..config.num_speakers);
                    speaker = (speaker + shift) % config.num_speakers;
                }
            }
            let mut sample = |proto: &[f64], offset: &[f64]| -> Vec<f64> {
                proto
                    .iter()
                    .zip(offset)
                    .map(|(p, o)| {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        o + p + noise_per_dim * eps
                    })
                    .collect()
            };
            let audio = sample(&protos.audio[label], &protos.audio_offset);
            let video = sample(&protos.video[label], &protos.video_offset);
            utterances.push(Utterance {
                index,
                speaker,
                label,
                audio,
                video,
            });
        }
        conversations.push(Conversation {
            conv_id: format!("{}_{ci:05}", config.split),
            num_speakers: config.num_speakers,
            utterances,
        });
    }
    Ok(Dataset {
        header: config.header(),
        conversations,
    })
}

/// Train, validation and test splits sharing one set of class prototypes.
pub fn generate_splits(config: &SynthConfig, n_train: usize, n_val: usize, n_test: usize) -> Result<[Dataset; 3]> {
    Ok([
        generate_synthetic(&config.for_split(Split::Train, n_train))?,
        generate_synthetic(&config.for_split(Split::Val, n_val))?,
        generate_synthetic(&config.for_split(Split::Test, n_test))?,
    ])
}

/// Linear map from pooled 1024-d learned audio features down to `audio_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl ProjectionMatrix {
    pub const SOURCE_DIM: usize = 1024;

    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != Self::SOURCE_DIM {
            return Err(Error::Dimension(format!(
                "projection source dim {} != {}",
                weights.nrows(),
                Self::SOURCE_DIM
            )));
        }
        if weights.ncols() != bias.len() {
            return Err(Error::Dimension(format!(
                "projection target dim {} != bias length {}",
                weights.ncols(),
                bias.len()
            )));
        }
        Ok(Self { weights, bias })
    }

    /// Glorot-uniform weights and zero bias.
    pub fn random(target_dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, streams::INIT);
        let bound = (6.0 / (Self::SOURCE_DIM + target_dim) as f64).sqrt();
        let weights = Array2::from_shape_fn((Self::SOURCE_DIM, target_dim), |_| rng.random_range(-bound..bound));
        Self {
            weights,
            bias: Array1::zeros(target_dim),
        }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn target_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// `raw . W + b`.
pub fn project_features(raw: &[f64], proj: &ProjectionMatrix) -> Result<Vec<f64>> {
    if raw.len() != proj.weights.nrows() {
        return Err(Error::Dimension(format!(
            "raw feature length {} != {}",
            raw.len(),
            proj.weights.nrows()
        )));
    }
    let out = ArrayView1::from(raw).dot(&proj.weights) + &proj.bias;
    Ok(out.to_vec())
}
