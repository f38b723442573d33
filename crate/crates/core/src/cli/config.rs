//! Experiment configuration file (TOML). Every section is optional and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SynthConfig;
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::losses::DistillConfig;
use crate::masking::{MaskScenarioProbs, RandomMaskParams};
use crate::network::{Modality, ModelConfig};
use crate::training::{AdamConfig, Seeds, StudentConfig, TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 600,
            val: 100,
            test: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub epochs: usize,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            mode: TrainMode::Baseline,
            epochs: 50,
            patience: 10,
        }
    }
}

/// All masking keys live under `[mask]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub p_none: f64,
    pub p_full_audio: f64,
    pub p_full_video: f64,
    pub p_random: f64,
    pub per_sample_start_prob: f64,
    pub len_audio: usize,
    pub len_video: usize,
}

impl Default for MaskSection {
    fn default() -> Self {
        let p = MaskScenarioProbs::default();
        let r = RandomMaskParams::default();
        Self {
            p_none: p.p_none,
            p_full_audio: p.p_full_audio,
            p_full_video: p.p_full_video,
            p_random: p.p_random,
            per_sample_start_prob: r.per_sample_start_prob,
            len_audio: r.len_audio,
            len_video: r.len_video,
        }
    }
}

impl MaskSection {
    pub fn probs(&self) -> MaskScenarioProbs {
        MaskScenarioProbs {
            p_none: self.p_none,
            p_full_audio: self.p_full_audio,
            p_full_video: self.p_full_video,
            p_random: self.p_random,
        }
    }

    pub fn random(&self) -> RandomMaskParams {
        RandomMaskParams {
            per_sample_start_prob: self.per_sample_start_prob,
            len_audio: self.len_audio,
            len_video: self.len_video,
        }
    }
}

/// Student architecture as overrides of `[model]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentSection {
    pub modalities: Vec<Modality>,
    pub seq_context_layers: Option<usize>,
    pub gnn_layers: Option<usize>,
    pub hidden_dim: Option<usize>,
}

impl Default for StudentSection {
    fn default() -> Self {
        Self {
            modalities: vec![Modality::Audio],
            seq_context_layers: None,
            gnn_layers: None,
            hidden_dim: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub init: u64,
    pub data_order: u64,
    pub masking: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        let s = Seeds::default();
        Self {
            init: 0,
            data_order: s.data_order,
            masking: s.masking,
        }
    }
}

impl SeedSection {
    /// Seeds for repeat `k` of a multi-seed run.
    pub fn offset(&self, k: u64) -> Self {
        Self {
            init: self.init.wrapping_add(k),
            data_order: self.data_order.wrapping_add(k),
            masking: self.masking.wrapping_add(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Directory holding `train.jsonl`, `val.jsonl` and `test.jsonl`. When
    /// unset, splits are generated in memory from `[synth]` and `[splits]`.
    pub data_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub splits: SplitSizes,
    pub model: ModelConfig,
    pub graph: GraphConfig,
    pub train: TrainSection,
    pub optimizer: AdamConfig,
    pub mask: MaskSection,
    pub distill: DistillConfig,
    pub student: StudentSection,
    pub seeds: SeedSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        for (name, n) in [("splits.train", self.splits.train), ("splits.val", self.splits.val), ("splits.test", self.splits.test)] {
            if n == 0 {
                return Err(Error::validation(name, "must be at least 1"));
            }
        }
        if self.model.seed != 0 && self.model.seed != self.seeds.init {
            return Err(Error::validation("model.seed", "set seeds.init instead"));
        }
        self.mask.probs().validate()?;
        self.mask.random().validate()?;
        self.train_config().validate()?;
        self.student_config().validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.train.mode,
            model: ModelConfig {
                seed: self.seeds.init,
                ..self.model.clone()
            },
            graph: self.graph,
            mask: self.mask.probs(),
            random_mask: self.mask.random(),
            optimizer: self.optimizer,
            epochs: self.train.epochs,
            patience: self.train.patience,
            seeds: Seeds {
                data_order: self.seeds.data_order,
                masking: self.seeds.masking,
            },
        }
    }

    pub fn student_config(&self) -> StudentConfig {
        let base = self.train_config();
        let s = &self.student;
        StudentConfig {
            model: ModelConfig {
                modalities: s.modalities.clone(),
                seq_context_layers: s.seq_context_layers.unwrap_or(base.model.seq_context_layers),
                gnn_layers: s.gnn_layers.unwrap_or(base.model.gnn_layers),
                hidden_dim: s.hidden_dim.unwrap_or(base.model.hidden_dim),
                ..base.model.clone()
            },
            optimizer: base.optimizer,
            epochs: base.epochs,
            patience: base.patience,
            seeds: base.seeds,
            distill: self.distill,
        }
    }

    pub fn with_seeds(&self, seeds: SeedSection) -> Self {
        Self { seeds, ..self.clone() }
    }

    /// SHA-256 of the canonical serialised form.
    pub fn hash(&self) -> String {
        crate::training::hash_json(self)
    }
}
