//! Cross entropy, the p-norm triplet distillation loss, negative sampling
//! and the weighted two-term objective.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    /// A different-labelled utterance of the same batch, any other utterance
    /// when the batch is single-label.
    DiffLabel,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub margin: f64,
    pub p: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub negative_policy: NegativePolicy,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            p: 2.0,
            alpha1: 1.0,
            alpha2: 1.0,
            negative_policy: NegativePolicy::DiffLabel,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::validation("distill.margin", "must be finite and >= 0"));
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return Err(Error::validation("distill.p", "must be finite and >= 1"));
        }
        if !(self.alpha1.is_finite() && self.alpha1 >= 0.0) {
            return Err(Error::validation("distill.alpha1", "must be finite and >= 0"));
        }
        if !(self.alpha2.is_finite() && self.alpha2 >= 0.0) {
            return Err(Error::validation("distill.alpha2", "must be finite and >= 0"));
        }
        Ok(())
    }
}

fn check_labels(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::Dimension(format!("{} logit rows but {} labels", logits.nrows(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::Dimension("cross entropy over an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.ncols()) {
        return Err(Error::validation("label", format!("{bad} out of range for {} classes", logits.ncols())));
    }
    Ok(())
}

fn log_softmax_row(row: ArrayView1<'_, f64>) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean over rows of `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    Ok(cross_entropy_with_grad(logits, labels)?.0)
}

/// Loss and its gradient w.r.t. the logits, `(softmax - onehot) / n`.
pub fn cross_entropy_with_grad(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(logits, labels)?;
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for ((row, mut g), &label) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let logp = log_softmax_row(row);
        total -= logp[label];
        for (gj, lp) in g.iter_mut().zip(&logp) {
            *gj = lp.exp() / n;
        }
        g[label] -= 1.0 / n;
    }
    Ok((total / n, grad))
}

fn p_norm(diff: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p == 1.0 {
        diff.map(f64::abs).sum()
    } else if p == 2.0 {
        diff.map(|d| d * d).sum::<f64>().sqrt()
    } else {
        diff.map(|d| d.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// d||d||_p / dd, zero at the origin.
fn p_norm_grad(diff: &[f64], norm: f64, p: f64) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; diff.len()];
    }
    diff.iter()
        .map(|&d| {
            if p == 1.0 {
                d.signum() * (d != 0.0) as u8 as f64
            } else {
                d.signum() * (d.abs() / norm).powf(p - 1.0)
            }
        })
        .collect()
}

fn check_triplet(x: &[f64], pos: &[f64], neg: &[f64]) -> Result<()> {
    if x.len() != pos.len() || x.len() != neg.len() {
        return Err(Error::Dimension(format!(
            "triplet lengths differ: anchor {}, positive {}, negative {}",
            x.len(),
            pos.len(),
            neg.len()
        )));
    }
    Ok(())
}

/// `max(||x - pos||_p - ||x - neg||_p + margin, 0)` on already-embedded vectors.
pub fn triplet_loss(x: &[f64], pos: &[f64], neg: &[f64], margin: f64, p: f64) -> Result<f64> {
    check_triplet(x, pos, neg)?;
    let dp = p_norm(x.iter().zip(pos).map(|(a, b)| a - b), p);
    let dn = p_norm(x.iter().zip(neg).map(|(a, b)| a - b), p);
    Ok((dp - dn + margin).max(0.0))
}

/// Gradients of [`triplet_loss`] w.r.t. (x, pos, neg). Zero on and below the hinge.
pub fn triplet_loss_grad(x: &[f64], pos: &[f64], neg: &[f64], margin: f64, p: f64) -> Result<[Vec<f64>; 3]> {
    check_triplet(x, pos, neg)?;
    let d_pos: Vec<f64> = x.iter().zip(pos).map(|(a, b)| a - b).collect();
    let d_neg: Vec<f64> = x.iter().zip(neg).map(|(a, b)| a - b).collect();
    let dp = p_norm(d_pos.iter().copied(), p);
    let dn = p_norm(d_neg.iter().copied(), p);
    if dp - dn + margin <= 0.0 {
        let z = vec![0.0; x.len()];
        return Ok([z.clone(), z.clone(), z]);
    }
    let gp = p_norm_grad(&d_pos, dp, p);
    let gn = p_norm_grad(&d_neg, dn, p);
    let gx = gp.iter().zip(&gn).map(|(a, b)| a - b).collect();
    let gpos = gp.iter().map(|v| -v).collect();
    Ok([gx, gpos, gn])
}

/// Row-mean triplet loss over aligned anchor/positive/negative matrices and
/// its gradient w.r.t. the anchors.
pub fn batch_triplet_with_grad(
    anchors: ArrayView2<'_, f64>,
    positives: ArrayView2<'_, f64>,
    negatives: ArrayView2<'_, f64>,
    margin: f64,
    p: f64,
) -> Result<(f64, Array2<f64>)> {
    if anchors.dim() != positives.dim() || anchors.dim() != negatives.dim() {
        return Err(Error::Dimension("triplet batch shapes differ".into()));
    }
    let n = anchors.nrows();
    if n == 0 {
        return Err(Error::Dimension("empty triplet batch".into()));
    }
    let mut grad = Array2::zeros(anchors.raw_dim());
    let mut total = 0.0;
    for i in 0..n {
        let (x, pos, neg) = (anchors.row(i).to_vec(), positives.row(i).to_vec(), negatives.row(i).to_vec());
        total += triplet_loss(&x, &pos, &neg, margin, p)?;
        let [gx, _, _] = triplet_loss_grad(&x, &pos, &neg, margin, p)?;
        for (g, v) in grad.row_mut(i).iter_mut().zip(gx) {
            *g = v / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Index of a negative for `anchor`; deterministic given the rng state.
pub fn sample_negative(anchor: usize, labels: &[usize], policy: NegativePolicy, rng: &mut impl Rng) -> Result<usize> {
    if labels.len() < 2 {
        return Err(Error::Dimension("negative sampling needs at least two utterances".into()));
    }
    if anchor >= labels.len() {
        return Err(Error::Dimension(format!("anchor {anchor} outside batch of {}", labels.len())));
    }
    if policy == NegativePolicy::DiffLabel {
        let candidates: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != labels[anchor]).collect();
        if !candidates.is_empty() {
            return Ok(candidates[rng.random_range(0..candidates.len())]);
        }
    }
    let pick = rng.random_range(0..labels.len() - 1);
    Ok(if pick >= anchor { pick + 1 } else { pick })
}

pub fn combined_loss(ce: f64, triplet: f64, config: &DistillConfig) -> f64 {
    config.alpha1 * triplet + config.alpha2 * ce
}

/// Records mean cross entropy of `logits` on the tape.
pub fn record_cross_entropy(tape: &mut Tape<'_>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (value, grad) = cross_entropy_with_grad(tape.value(logits).view(), labels)?;
    Ok(tape.loss(logits, value, grad))
}

/// Records the mean triplet loss with constant positives and negatives.
pub fn record_triplet(
    tape: &mut Tape<'_>,
    anchors: Var,
    positives: ArrayView2<'_, f64>,
    negatives: ArrayView2<'_, f64>,
    margin: f64,
    p: f64,
) -> Result<Var> {
    let (value, grad) = batch_triplet_with_grad(tape.value(anchors).view(), positives, negatives, margin, p)?;
    Ok(tape.loss(anchors, value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Array2::zeros((3, 4));
        let ce = cross_entropy(logits.view(), &[0, 1, 3]).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        assert!((ce - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn saturated_logits_give_zero() {
        let logits = array![[30.0, 0.0, 0.0, 0.0]];
        let ce = cross_entropy(logits.view(), &[0]).unwrap();
        assert!(ce < 1e-9);
    }

    #[test]
    fn cross_entropy_errors() {
        let logits = Array2::zeros((2, 4));
        assert!(matches!(cross_entropy(logits.view(), &[0, 4]), Err(Error::Validation { .. })));
        assert!(matches!(cross_entropy(logits.view(), &[0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn triplet_examples() {
        let x = [0.0, 0.0];
        let neg = [2.0, 0.0];
        assert_eq!(triplet_loss(&x, &x, &neg, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(triplet_loss(&x, &[3.0, 4.0], &x, 1.0, 2.0).unwrap(), 6.0);
        assert!(matches!(triplet_loss(&x, &[1.0], &x, 1.0, 2.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn negative_sampling() {
        let mut r = rng::stream(1, rng::streams::NEGATIVES);
        assert_eq!(sample_negative(0, &[0, 1], NegativePolicy::DiffLabel, &mut r).unwrap(), 1);
        for _ in 0..100 {
            let i = sample_negative(2, &[1, 1, 1, 1], NegativePolicy::DiffLabel, &mut r).unwrap();
            assert_ne!(i, 2);
            let j = sample_negative(0, &[0, 1, 2], NegativePolicy::Any, &mut r).unwrap();
            assert_ne!(j, 0);
        }
        assert!(sample_negative(0, &[3], NegativePolicy::DiffLabel, &mut r).is_err());

        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[sample_negative(0, &[0, 0, 1, 2], NegativePolicy::DiffLabel, &mut r).unwrap()] += 1;
        }
        assert_eq!(counts[0] + counts[1], 0);
        for c in [counts[2], counts[3]] {
            let frac = c as f64 / 10_000.0;
            assert!((frac - 0.5).abs() <= 0.02, "{frac}");
        }
    }

    #[test]
    fn combined_loss_weights() {
        let cfg = DistillConfig::default();
        assert!((combined_loss(1.2, 0.3, &cfg) - 1.5).abs() < 1e-12);
        assert_eq!(combined_loss(1.2, 0.3, &DistillConfig { alpha1: 0.0, ..cfg }), 1.2);
        assert_eq!(combined_loss(1.2, 0.3, &DistillConfig { alpha2: 0.0, ..cfg }), 0.3);
    }

    #[test]
    fn distill_config_validation() {
        assert!(DistillConfig { p: 0.5, ..Default::default() }.validate().is_err());
        assert!(DistillConfig { margin: -1.0, ..Default::default() }.validate().is_err());
        DistillConfig::default().validate().unwrap();
    }
}
