//! Reference class-weighted cross-entropy, soft Dice and their weighted sum,
//! with analytic gradients with respect to the logits.
//!
//! All arithmetic runs in f64 regardless of the tensor's storage precision.
//! The `*_f64` entry points take raw f64 logits so external trainers (and
//! finite-difference checks) can be validated without f32 rounding.

use serde::Serialize;

use crate::schema::{ClassSchema, IGNORE_INDEX};
use crate::tensor_io::{LabelMap, ProbTensor, TensorKind};

pub const DEFAULT_LAMBDA_CE: f64 = 0.7;
pub const DEFAULT_LAMBDA_DICE: f64 = 0.3;
pub const DEFAULT_DICE_EPSILON: f64 = 1e-6;
/// Magnitude below which [`max_relative_error`] compares absolutely.
pub const DEFAULT_GRADIENT_FLOOR: f64 = 1e-8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("every ground-truth pixel is ignored")]
    AllPixelsIgnored,
    #[error("no class is present in the ground truth")]
    NoPresentClasses,
    #[error("label {value} at flat index {at} is out of range for {classes} classes")]
    IndexOutOfRange { value: u8, at: usize, classes: usize },
    #[error("expected {expected} class weights, got {actual}")]
    WeightCount { expected: usize, actual: usize },
    #[error("class weights must be positive and finite")]
    InvalidWeight,
    #[error("expected a logits tensor")]
    NotLogits,
}

/// How the weighted cross-entropy sum is normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeNormalisation {
    /// Divide by the sum of the weights applied to the counted pixels.
    #[default]
    WeightedMean,
    /// Divide by the number of counted pixels.
    PixelMean,
}

/// Which classes the Dice mean runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceClassMode {
    /// Classes with at least one ground-truth pixel.
    #[default]
    Present,
    /// Every class in the schema.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_ce: f64,
    pub lambda_dice: f64,
    pub epsilon: f64,
    pub ce_normalisation: CeNormalisation,
    pub dice_class_mode: DiceClassMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ce: DEFAULT_LAMBDA_CE,
            lambda_dice: DEFAULT_LAMBDA_DICE,
            epsilon: DEFAULT_DICE_EPSILON,
            ce_normalisation: CeNormalisation::default(),
            dice_class_mode: DiceClassMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub dice: f64,
    /// `lambda_ce * ce + lambda_dice * dice`.
    pub combined: f64,
    pub lambda_ce: f64,
    pub lambda_dice: f64,
    pub epsilon: f64,
}

/// Shape of a class-major C×H×W logit buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn of(t: &ProbTensor) -> Shape {
        Shape {
            channels: t.channels(),
            height: t.height(),
            width: t.width(),
        }
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn len(&self) -> usize {
        self.channels * self.plane()
    }
}

fn check_inputs(data: &[f64], shape: Shape, gt: &LabelMap) -> Result<(), LossError> {
    if data.len() != shape.len() {
        return Err(LossError::DimensionMismatch(format!(
            "{} values for shape {}x{}x{}",
            data.len(),
            shape.channels,
            shape.height,
            shape.width
        )));
    }
    if gt.height() != shape.height || gt.width() != shape.width {
        return Err(LossError::DimensionMismatch(format!(
            "tensor {}x{} vs mask {}x{}",
            shape.height,
            shape.width,
            gt.height(),
            gt.width()
        )));
    }
    if let Some(at) = gt
        .data()
        .iter()
        .position(|&v| v != IGNORE_INDEX && v as usize >= shape.channels)
    {
        return Err(LossError::IndexOutOfRange {
            value: gt.data()[at],
            at,
            classes: shape.channels,
        });
    }
    Ok(())
}

fn check_weights(weights: &[f64], classes: usize) -> Result<(), LossError> {
    if weights.len() != classes {
        return Err(LossError::WeightCount {
            expected: classes,
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(LossError::InvalidWeight);
    }
    Ok(())
}

/// Per-pixel softmax over channels with max subtraction, in f64.
pub fn softmax_f64(logits: &[f64], shape: Shape) -> Vec<f64> {
    let n = shape.plane();
    let mut out = vec![0.0; logits.len()];
    for i in 0..n {
        let m = (0..shape.channels)
            .map(|c| logits[c * n + i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..shape.channels {
            let e = (logits[c * n + i] - m).exp();
            out[c * n + i] = e;
            sum += e;
        }
        for c in 0..shape.channels {
            out[c * n + i] /= sum;
        }
    }
    out
}

fn widen(t: &ProbTensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Accumulated cross-entropy terms: numerator, denominator.
fn ce_terms(
    logits: &[f64],
    shape: Shape,
    gt: &LabelMap,
    weights: &[f64],
    norm: CeNormalisation,
) -> Result<(f64, f64), LossError> {
    let n = shape.plane();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &y) in gt.data().iter().enumerate() {
        if y == IGNORE_INDEX {
            continue;
        }
        let y = y as usize;
        let m = (0..shape.channels)
            .map(|c| logits[c * n + i])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..shape.channels).map(|c| (logits[c * n + i] - m).exp()).sum();
        let nll = -(logits[y * n + i] - m - sum.ln());
        let w = weights[y];
        num += w * nll;
        den += match norm {
            CeNormalisation::WeightedMean => w,
            CeNormalisation::PixelMean => 1.0,
        };
    }
    if den == 0.0 {
        return Err(LossError::AllPixelsIgnored);
    }
    Ok((num, den))
}

pub fn weighted_ce_f64(
    logits: &[f64],
    shape: Shape,
    gt: &LabelMap,
    weights: &[f64],
    norm: CeNormalisation,
) -> Result<f64, LossError> {
    check_inputs(logits, shape, gt)?;
    check_weights(weights, shape.channels)?;
    let (num, den) = ce_terms(logits, shape, gt, weights, norm)?;
    Ok(num / den)
}

/// Class-weighted cross-entropy, normalised by the applied weights.
pub fn weighted_ce(logits: &ProbTensor, gt: &LabelMap, weights: &[f64]) -> Result<f64, LossError> {
    weighted_ce_with(logits, gt, weights, CeNormalisation::WeightedMean)
}

pub fn weighted_ce_with(
    logits: &ProbTensor,
    gt: &LabelMap,
    weights: &[f64],
    norm: CeNormalisation,
) -> Result<f64, LossError> {
    if logits.kind() != TensorKind::Logits {
        return Err(LossError::NotLogits);
    }
    weighted_ce_f64(&widen(logits), Shape::of(logits), gt, weights, norm)
}

struct DiceStats {
    intersection: Vec<f64>,
    pred_mass: Vec<f64>,
    gt_count: Vec<f64>,
    counted: Vec<bool>,
    k: usize,
}

fn dice_stats(probs: &[f64], shape: Shape, gt: &LabelMap, mode: DiceClassMode) -> Result<DiceStats, LossError> {
    let n = shape.plane();
    let c = shape.channels;
    let mut intersection = vec![0.0; c];
    let mut pred_mass = vec![0.0; c];
    let mut gt_count = vec![0.0; c];
    for (i, &y) in gt.data().iter().enumerate() {
        if y == IGNORE_INDEX {
            continue;
        }
        gt_count[y as usize] += 1.0;
        intersection[y as usize] += probs[y as usize * n + i];
        for (k, mass) in pred_mass.iter_mut().enumerate() {
            *mass += probs[k * n + i];
        }
    }
    let counted: Vec<bool> = match mode {
        DiceClassMode::Present => gt_count.iter().map(|&g| g > 0.0).collect(),
        DiceClassMode::All => vec![gt_count.iter().any(|&g| g > 0.0); c],
    };
    let k = counted.iter().filter(|&&b| b).count();
    if k == 0 {
        return Err(LossError::NoPresentClasses);
    }
    Ok(DiceStats {
        intersection,
        pred_mass,
        gt_count,
        counted,
        k,
    })
}

fn dice_from_stats(s: &DiceStats, eps: f64) -> f64 {
    let mean: f64 = (0..s.counted.len())
        .filter(|&c| s.counted[c])
        .map(|c| (2.0 * s.intersection[c] + eps) / (s.pred_mass[c] + s.gt_count[c] + eps))
        .sum::<f64>()
        / s.k as f64;
    1.0 - mean
}

/// Soft Dice loss on probabilities (logits are softmaxed first).
pub fn soft_dice_f64(
    values: &[f64],
    shape: Shape,
    kind: TensorKind,
    gt: &LabelMap,
    epsilon: f64,
    mode: DiceClassMode,
) -> Result<f64, LossError> {
    check_inputs(values, shape, gt)?;
    let probs;
    let p = match kind {
        TensorKind::Logits => {
            probs = softmax_f64(values, shape);
            &probs[..]
        }
        TensorKind::Probabilities => values,
    };
    Ok(dice_from_stats(&dice_stats(p, shape, gt, mode)?, epsilon))
}

pub fn soft_dice(t: &ProbTensor, gt: &LabelMap, epsilon: f64) -> Result<f64, LossError> {
    soft_dice_with(t, gt, epsilon, DiceClassMode::Present)
}

pub fn soft_dice_with(t: &ProbTensor, gt: &LabelMap, epsilon: f64, mode: DiceClassMode) -> Result<f64, LossError> {
    soft_dice_f64(&widen(t), Shape::of(t), t.kind(), gt, epsilon, mode)
}

pub fn combined_loss_f64(
    logits: &[f64],
    shape: Shape,
    gt: &LabelMap,
    weights: &[f64],
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    let ce = weighted_ce_f64(logits, shape, gt, weights, cfg.ce_normalisation)?;
    let dice = soft_dice_f64(logits, shape, TensorKind::Logits, gt, cfg.epsilon, cfg.dice_class_mode)?;
    Ok(LossBreakdown {
        ce,
        dice,
        combined: cfg.lambda_ce * ce + cfg.lambda_dice * dice,
        lambda_ce: cfg.lambda_ce,
        lambda_dice: cfg.lambda_dice,
        epsilon: cfg.epsilon,
    })
}

pub fn combined_loss(
    logits: &ProbTensor,
    gt: &LabelMap,
    schema: &ClassSchema,
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    if logits.kind() != TensorKind::Logits {
        return Err(LossError::NotLogits);
    }
    combined_loss_f64(&widen(logits), Shape::of(logits), gt, &schema.weights(), cfg)
}

/// Analytic gradient of the combined loss with respect to every logit,
/// laid out like the input (class-major).
pub fn combined_loss_grad_f64(
    logits: &[f64],
    shape: Shape,
    gt: &LabelMap,
    weights: &[f64],
    cfg: &LossConfig,
) -> Result<Vec<f64>, LossError> {
    check_inputs(logits, shape, gt)?;
    check_weights(weights, shape.channels)?;
    let n = shape.plane();
    let c = shape.channels;
    let p = softmax_f64(logits, shape);
    let (_, den) = ce_terms(logits, shape, gt, weights, cfg.ce_normalisation)?;
    let stats = dice_stats(&p, shape, gt, cfg.dice_class_mode)?;
    let eps = cfg.epsilon;

    let mut grad = vec![0.0; logits.len()];
    let mut dl_dp = vec![0.0; c];
    for (i, &y) in gt.data().iter().enumerate() {
        if y == IGNORE_INDEX {
            continue;
        }
        let y = y as usize;
        // Cross-entropy: w_y / den * (p - onehot).
        let scale = cfg.lambda_ce * weights[y] / den;
        for k in 0..c {
            let onehot = if k == y { 1.0 } else { 0.0 };
            grad[k * n + i] += scale * (p[k * n + i] - onehot);
        }
        // Dice through the softmax Jacobian.
        for (k, slot) in dl_dp.iter_mut().enumerate() {
            *slot = if stats.counted[k] {
                let denom = stats.pred_mass[k] + stats.gt_count[k] + eps;
                let g = if k == y { 1.0 } else { 0.0 };
                let dd = (2.0 * g * denom - (2.0 * stats.intersection[k] + eps)) / (denom * denom);
                -cfg.lambda_dice * dd / stats.k as f64
            } else {
                0.0
            };
        }
        let dot: f64 = (0..c).map(|k| p[k * n + i] * dl_dp[k]).sum();
        for k in 0..c {
            grad[k * n + i] += p[k * n + i] * (dl_dp[k] - dot);
        }
    }
    Ok(grad)
}

pub fn combined_loss_grad(
    logits: &ProbTensor,
    gt: &LabelMap,
    schema: &ClassSchema,
    cfg: &LossConfig,
) -> Result<Vec<f64>, LossError> {
    if logits.kind() != TensorKind::Logits {
        return Err(LossError::NotLogits);
    }
    combined_loss_grad_f64(&widen(logits), Shape::of(logits), gt, &schema.weights(), cfg)
}

/// Central-difference gradient of the combined loss; used by the
/// `grad-check` command to validate the analytic path on user data.
pub fn finite_difference_grad_f64(
    logits: &[f64],
    shape: Shape,
    gt: &LabelMap,
    weights: &[f64],
    cfg: &LossConfig,
    step: f64,
) -> Result<Vec<f64>, LossError> {
    let mut probe = logits.to_vec();
    let mut out = vec![0.0; logits.len()];
    for j in 0..logits.len() {
        probe[j] = logits[j] + step;
        let up = combined_loss_f64(&probe, shape, gt, weights, cfg)?.combined;
        probe[j] = logits[j] - step;
        let down = combined_loss_f64(&probe, shape, gt, weights, cfg)?.combined;
        probe[j] = logits[j];
        out[j] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// Largest element-wise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
