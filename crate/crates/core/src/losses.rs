//! Training objectives with analytic gradients.
//!
//! Probability-domain functions mirror the textbook definitions and clamp
//! scores to `[SCORE_EPS, 1 - SCORE_EPS]`. The `*_from_logits` variants
//! compute the same quantities from pre-sigmoid / pre-softmax activations
//! and are what the training loop differentiates through.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCORE_EPS: f64 = 1e-7;
pub const PROB_FLOOR: f64 = 1e-12;
const DIST_TOL: f64 = 1e-6;

/// A scalar objective and its gradient with respect to the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Adversarial term.
    pub alpha: f64,
    /// Classification term.
    pub beta: f64,
    /// Diversity (noise penalty) term.
    pub gamma_div: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 2.5,
            gamma_div: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if ok(self.alpha) && ok(self.beta) && ok(self.gamma_div) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("loss weights must be >= 0: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationObjective {
    /// `Σ y log(y / ŷ)` with the target in the weighting position.
    #[default]
    KlDivergence,
    /// `−Σ y log ŷ`; differs from the KL form by the target entropy.
    CrossEntropy,
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        Err(Error::ScoreOutOfRange)
    } else {
        Ok(())
    }
}

#[inline]
fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// Mean of `log(1 − D(G(z)))` over the fake scores: the fake-sample term of
/// the minimax objective.
pub fn minimax_fake_term(fake_scores: &[f64]) -> Result<f64> {
    check_scores(fake_scores)?;
    if fake_scores.is_empty() {
        return Err(Error::BatchTooSmall { needed: 1, got: 0 });
    }
    Ok(mean(fake_scores.iter().map(|&s| libm::log(1.0 - clamp_score(s))), fake_scores.len()))
}

/// `loss_d = −mean(log D(x) + log(1 − D(G(z))))` and the non-saturating
/// `loss_g = −mean(log D(G(z)))`.
pub fn adversarial_losses(real_scores: &[f64], fake_scores: &[f64]) -> Result<(f64, f64)> {
    let d = discriminator_loss(real_scores, fake_scores)?;
    let g = generator_loss(fake_scores)?;
    Ok((d.value, g.value))
}

/// Discriminator loss; `grad` holds `∂/∂real` followed by `∂/∂fake`.
pub fn discriminator_loss(real_scores: &[f64], fake_scores: &[f64]) -> Result<LossGrad> {
    check_scores(real_scores)?;
    check_scores(fake_scores)?;
    if real_scores.is_empty() || real_scores.len() != fake_scores.len() {
        return Err(Error::LengthMismatch(real_scores.len(), fake_scores.len()));
    }
    let n = real_scores.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(2 * real_scores.len());
    for &s in real_scores {
        let c = clamp_score(s);
        value -= libm::log(c);
        grad.push(-1.0 / (c * n));
    }
    for &s in fake_scores {
        let c = clamp_score(s);
        value -= libm::log(1.0 - c);
        grad.push(1.0 / ((1.0 - c) * n));
    }
    Ok(LossGrad { value: value / n, grad })
}

/// Non-saturating generator loss `−mean(log D(G(z)))`.
pub fn generator_loss(fake_scores: &[f64]) -> Result<LossGrad> {
    check_scores(fake_scores)?;
    if fake_scores.is_empty() {
        return Err(Error::BatchTooSmall { needed: 1, got: 0 });
    }
    let n = fake_scores.len() as f64;
    let mut value = 0.0;
    let grad = fake_scores
        .iter()
        .map(|&s| {
            let c = clamp_score(s);
            value -= libm::log(c);
            -1.0 / (c * n)
        })
        .collect();
    Ok(LossGrad { value: value / n, grad })
}

/// `log σ(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -libm::log1p(libm::exp(-z))
    } else {
        z - libm::log1p(libm::exp(z))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// [`discriminator_loss`] from logits; gradient is with respect to the logits.
pub fn discriminator_loss_from_logits(real_logits: &[f64], fake_logits: &[f64]) -> Result<LossGrad> {
    check_scores(real_logits)?;
    check_scores(fake_logits)?;
    if real_logits.is_empty() || real_logits.len() != fake_logits.len() {
        return Err(Error::LengthMismatch(real_logits.len(), fake_logits.len()));
    }
    let n = real_logits.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(2 * real_logits.len());
    for &z in real_logits {
        value -= log_sigmoid(z);
        grad.push((sigmoid(z) - 1.0) / n);
    }
    for &z in fake_logits {
        // log(1 − σ(z)) = log σ(−z)
        value -= log_sigmoid(-z);
        grad.push(sigmoid(z) / n);
    }
    Ok(LossGrad { value: value / n, grad })
}

/// [`generator_loss`] from logits.
pub fn generator_loss_from_logits(fake_logits: &[f64]) -> Result<LossGrad> {
    check_scores(fake_logits)?;
    if fake_logits.is_empty() {
        return Err(Error::BatchTooSmall { needed: 1, got: 0 });
    }
    let n = fake_logits.len() as f64;
    let value = -fake_logits.iter().map(|&z| log_sigmoid(z)).sum::<f64>() / n;
    let grad = fake_logits.iter().map(|&z| (sigmoid(z) - 1.0) / n).collect();
    Ok(LossGrad { value, grad })
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (sum - 1.0).abs() > DIST_TOL {
        Err(Error::NotADistribution(sum))
    } else {
        Ok(())
    }
}

/// `Σ_v target(v) · log(target(v) / predicted(v))`, with `0 · log(0/q) = 0`
/// and `predicted` floored at `PROB_FLOOR`.
pub fn classification_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    Ok(classification_loss_grad(predicted, target, ClassificationObjective::KlDivergence)?.value)
}

/// Classification loss with its gradient with respect to `predicted`.
pub fn classification_loss_grad(
    predicted: &[f64],
    target: &[f64],
    objective: ClassificationObjective,
) -> Result<LossGrad> {
    if predicted.len() != target.len() {
        return Err(Error::LengthMismatch(predicted.len(), target.len()));
    }
    check_distribution(predicted)?;
    check_distribution(target)?;
    let mut value = 0.0;
    let mut grad = vec![0.0; predicted.len()];
    for ((&q, &y), g) in predicted.iter().zip(target).zip(grad.iter_mut()) {
        if y == 0.0 {
            continue;
        }
        let q = q.max(PROB_FLOOR);
        value += match objective {
            ClassificationObjective::KlDivergence => y * libm::log(y / q),
            ClassificationObjective::CrossEntropy => -y * libm::log(q),
        };
        *g = -y / q;
    }
    Ok(LossGrad { value, grad })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Classification loss of `softmax(logits)`; gradient with respect to the logits.
pub fn classification_loss_from_logits(
    logits: &[f64],
    target: &[f64],
    objective: ClassificationObjective,
) -> Result<LossGrad> {
    if logits.len() != target.len() {
        return Err(Error::LengthMismatch(logits.len(), target.len()));
    }
    check_scores(logits)?;
    check_distribution(target)?;
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + libm::log(logits.iter().map(|&z| libm::exp(z - m)).sum::<f64>());
    let mut value = 0.0;
    for (&z, &y) in logits.iter().zip(target) {
        if y == 0.0 {
            continue;
        }
        // −y log p = −y (z − lse)
        value += -y * (z - lse);
        if objective == ClassificationObjective::KlDivergence {
            value += y * libm::log(y);
        }
    }
    let p = softmax(logits);
    let ysum: f64 = target.iter().sum();
    let grad = p.iter().zip(target).map(|(&p, &y)| p * ysum - y).collect();
    Ok(LossGrad { value, grad })
}

/// Negated mode-seeking ratio over same-class pairs:
/// `−mean(L1 image distance) / mean(L2 code distance)`.
///
/// The image distance is the mean absolute per-pixel difference. Codes are
/// the noised style vectors fed to the decoder and are treated as
/// constants. Returns 0 when no two items share a class.
pub fn diversity_penalty(images: &[Vec<f64>], codes: &[Vec<f64>], classes: &[usize]) -> Result<LossGrad> {
    let n = images.len();
    if n < 2 {
        return Err(Error::BatchTooSmall { needed: 2, got: n });
    }
    if codes.len() != n || classes.len() != n {
        return Err(Error::BatchMismatch(n, codes.len().min(classes.len())));
    }
    let pixels = images[0].len();
    if images.iter().any(|im| im.len() != pixels) {
        return Err(Error::shape(pixels, "ragged image batch"));
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if classes[i] == classes[j] {
                pairs.push((i, j));
            }
        }
    }
    let mut grad = vec![0.0; n * pixels];
    if pairs.is_empty() || pixels == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let p = pairs.len() as f64;
    let mut img_sum = 0.0;
    let mut code_sum = 0.0;
    for &(i, j) in &pairs {
        img_sum += images[i].iter().zip(&images[j]).map(|(a, b)| (a - b).abs()).sum::<f64>() / pixels as f64;
        code_sum += libm::sqrt(codes[i].iter().zip(&codes[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
    }
    let img_mean = img_sum / p;
    let code_mean = (code_sum / p).max(1e-8);
    let value = -img_mean / code_mean;
    let scale = -1.0 / (code_mean * p * pixels as f64);
    for &(i, j) in &pairs {
        for k in 0..pixels {
            let d = images[i][k] - images[j][k];
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[i * pixels + k] += scale * s;
            grad[j * pixels + k] -= scale * s;
        }
    }
    Ok(LossGrad { value, grad })
}

/// `α·adversarial + β·classification + γ·diversity`.
pub fn total_loss(weights: &LossWeights, adversarial: f64, classification: f64, diversity: f64) -> f64 {
    weights.alpha * adversarial + weights.beta * classification + weights.gamma_div * diversity
}
