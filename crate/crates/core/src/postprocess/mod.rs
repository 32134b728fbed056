//! Probability-space post-processing: softmax, test-time augmentation
//! merging, dense-CRF refinement and uncertainty statistics.

mod crf;
mod lattice;
mod tta;
mod uncertainty;

pub use crf::{crf_refine, crf_refine_with, CrfBackend, CrfParams, EXACT_PIXEL_LIMIT};
pub use lattice::PermutohedralLattice;
pub use tta::{default_views, hflip_tensor, resize_tensor, tta_ensemble, tta_merge, TtaView, DEFAULT_TTA_SCALES};
pub use uncertainty::{
    mc_aggregate, rank_difficulty, uncertainty, uncertainty_with, Band, BandThresholds, DifficultyBlend,
    DifficultyRanking, McAccumulator, McAggregate, RankedImage, UncertaintyReport, DEFAULT_ENTROPY_THRESHOLD,
};

use crate::tensor_io::{IoError, ProbTensor, TensorKind};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PostprocessError {
    #[error("non-finite logit at flat index {0}")]
    NonFiniteInput(usize),
    #[error("expected a {expected:?} tensor, got {actual:?}")]
    KindMismatch { expected: TensorKind, actual: TensorKind },
    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(IoError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no views to merge")]
    EmptyViewList,
    #[error("no samples to aggregate")]
    EmptySampleList,
    #[error("no reports to rank")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Per-pixel softmax over channels, computed in f64 with max subtraction.
pub fn softmax(logits: &ProbTensor) -> Result<ProbTensor, PostprocessError> {
    if logits.kind() != TensorKind::Logits {
        return Err(PostprocessError::KindMismatch {
            expected: TensorKind::Logits,
            actual: logits.kind(),
        });
    }
    if let Some(i) = logits.data().iter().position(|v| !v.is_finite()) {
        return Err(PostprocessError::NonFiniteInput(i));
    }
    let n = logits.plane_len();
    let c = logits.channels();
    let src = logits.data();
    let mut out = vec![0f32; src.len()];
    let mut buf = vec![0f64; c];
    for i in 0..n {
        let m = (0..c).map(|k| src[k * n + i] as f64).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = (src[k * n + i] as f64 - m).exp();
            sum += *slot;
        }
        for (k, &v) in buf.iter().enumerate() {
            out[k * n + i] = (v / sum) as f32;
        }
    }
    Ok(ProbTensor::new_unchecked(TensorKind::Probabilities, c, logits.height(), logits.width(), out)
        .expect("shape carried over"))
}

/// Returns probabilities, softmaxing logits and validating probability tensors.
pub(crate) fn as_probabilities(t: &ProbTensor) -> Result<ProbTensor, PostprocessError> {
    match t.kind() {
        TensorKind::Logits => softmax(t),
        TensorKind::Probabilities => {
            t.validate().map_err(PostprocessError::InvalidProbabilities)?;
            Ok(t.clone())
        }
    }
}

pub(crate) fn require_probabilities(t: &ProbTensor) -> Result<(), PostprocessError> {
    if t.kind() != TensorKind::Probabilities {
        return Err(PostprocessError::KindMismatch {
            expected: TensorKind::Probabilities,
            actual: t.kind(),
        });
    }
    t.validate().map_err(PostprocessError::InvalidProbabilities)
}

/// Rescales each pixel's channel vector (f64, class-major) to sum to one.
pub(crate) fn normalise_pixels(data: &mut [f64], channels: usize) {
    let n = data.len() / channels;
    for i in 0..n {
        let sum: f64 = (0..channels).map(|c| data[c * n + i]).sum();
        if sum > 0.0 {
            for c in 0..channels {
                data[c * n + i] /= sum;
            }
        } else {
            for c in 0..channels {
                data[c * n + i] = 1.0 / channels as f64;
            }
        }
    }
}

pub(crate) fn to_prob_tensor(data: &[f64], channels: usize, height: usize, width: usize) -> ProbTensor {
    let values = data.iter().map(|&v| v as f32).collect();
    ProbTensor::new_unchecked(TensorKind::Probabilities, channels, height, width, values)
        .expect("shape carried over")
}
