//! Masked training: per-presentation scenario sampling, mask construction
//! and zero-fill application.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    None,
    FullAudio,
    FullVideo,
    Random,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::None, Scenario::FullAudio, Scenario::FullVideo, Scenario::Random];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskScenarioProbs {
    pub p_none: f64,
    pub p_full_audio: f64,
    pub p_full_video: f64,
    pub p_random: f64,
}

impl Default for MaskScenarioProbs {
    fn default() -> Self {
        Self {
            p_none: 0.1,
            p_full_audio: 0.3,
            p_full_video: 0.3,
            p_random: 0.3,
        }
    }
}

impl MaskScenarioProbs {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p_none, self.p_full_audio, self.p_full_video, self.p_random]
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["mask.p_none", "mask.p_full_audio", "mask.p_full_video", "mask.p_random"];
        for (name, p) in names.iter().zip(self.as_array()) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(*name, format!("{p} outside [0, 1]")));
            }
        }
        let sum: f64 = self.as_array().iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation("mask", format!("scenario probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Single-modality variant: only {None, Random}, renormalised.
    pub fn unimodal(&self) -> Result<Self> {
        let total = self.p_none + self.p_random;
        if total <= 0.0 {
            return Err(Error::validation("mask", "p_none + p_random must be positive for unimodal masking"));
        }
        Ok(Self {
            p_none: self.p_none / total,
            p_full_audio: 0.0,
            p_full_video: 0.0,
            p_random: self.p_random / total,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomMaskParams {
    pub per_sample_start_prob: f64,
    pub len_audio: usize,
    pub len_video: usize,
}

impl Default for RandomMaskParams {
    fn default() -> Self {
        Self {
            per_sample_start_prob: 0.2,
            len_audio: 1,
            len_video: 1,
        }
    }
}

impl RandomMaskParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.per_sample_start_prob) {
            return Err(Error::validation("mask.per_sample_start_prob", "must lie in [0, 1]"));
        }
        if self.len_audio == 0 {
            return Err(Error::validation("mask.len_audio", "must be at least 1"));
        }
        if self.len_video == 0 {
            return Err(Error::validation("mask.len_video", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub scenario: Scenario,
    pub keep_audio: Vec<bool>,
    pub keep_video: Vec<bool>,
}

impl MaskPlan {
    pub fn identity(len: usize) -> Self {
        Self::uniform(Scenario::None, len, true, true)
    }

    fn uniform(scenario: Scenario, len: usize, audio: bool, video: bool) -> Self {
        Self {
            scenario,
            keep_audio: vec![audio; len],
            keep_video: vec![video; len],
        }
    }

    pub fn len(&self) -> usize {
        self.keep_audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep_audio.is_empty()
    }
}

/// Categorical draw over the four scenarios from exactly one uniform variate.
pub fn sample_scenario(probs: &MaskScenarioProbs, rng: &mut impl Rng) -> Result<Scenario> {
    probs.validate()?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (scenario, p) in Scenario::ALL.into_iter().zip(probs.as_array()) {
        acc += p;
        if u < acc && p > 0.0 {
            return Ok(scenario);
        }
    }
    // u landed in the rounding slack above the cumulative sum.
    Ok(Scenario::ALL
        .into_iter()
        .zip(probs.as_array())
        .rev()
        .find(|(_, p)| *p > 0.0)
        .map(|(s, _)| s)
        .unwrap_or(Scenario::None))
}

fn random_keep(len: usize, start_prob: f64, mask_len: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut keep = vec![true; len];
    for start in 0..len {
        if rng.random::<f64>() < start_prob {
            // Overlapping masks union; masks are clipped at the conversation end.
            for slot in keep.iter_mut().skip(start).take(mask_len) {
                *slot = false;
            }
        }
    }
    keep
}

pub fn build_mask(scenario: Scenario, conv_len: usize, params: &RandomMaskParams, rng: &mut impl Rng) -> MaskPlan {
    match scenario {
        Scenario::None => MaskPlan::identity(conv_len),
        Scenario::FullAudio => MaskPlan::uniform(scenario, conv_len, false, true),
        Scenario::FullVideo => MaskPlan::uniform(scenario, conv_len, true, false),
        Scenario::Random => {
            let keep_audio = random_keep(conv_len, params.per_sample_start_prob, params.len_audio, rng);
            let keep_video = random_keep(conv_len, params.per_sample_start_prob, params.len_video, rng);
            MaskPlan {
                scenario,
                keep_audio,
                keep_video,
            }
        }
    }
}

fn zero_rows(features: &Array2<f64>, keep: &[bool]) -> Array2<f64> {
    let mut out = features.clone();
    for (mut row, &k) in out.rows_mut().into_iter().zip(keep) {
        if !k {
            row.fill(0.0);
        }
    }
    out
}

/// Zero-fills dropped utterance rows; kept rows are copied bit for bit.
///
/// A modality with zero columns (absent from the model) passes through.
pub fn apply_mask(audio: &Array2<f64>, video: &Array2<f64>, plan: &MaskPlan) -> Result<(Array2<f64>, Array2<f64>)> {
    for (name, rows) in [("audio", audio.nrows()), ("video", video.nrows())] {
        if rows != plan.len() {
            return Err(Error::Dimension(format!("{name} has {rows} rows, mask plan covers {}", plan.len())));
        }
    }
    Ok((zero_rows(audio, &plan.keep_audio), zero_rows(video, &plan.keep_video)))
}
