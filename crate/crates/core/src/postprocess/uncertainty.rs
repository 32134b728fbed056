//! Entropy and confidence statistics, Monte-Carlo sample aggregation and
//! per-image difficulty ranking.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{require_probabilities, to_prob_tensor, PostprocessError};
use crate::tensor_io::ProbTensor;

pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 0.5;

/// Linear blend turning uncertain fraction and mean confidence into a
/// difficulty score: `uncertain_weight·uf + confidence_weight·(1 − mc)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBlend {
    pub uncertain_weight: f64,
    pub confidence_weight: f64,
}

impl Default for DifficultyBlend {
    fn default() -> Self {
        DifficultyBlend {
            uncertain_weight: 0.5,
            confidence_weight: 0.5,
        }
    }
}

impl DifficultyBlend {
    pub fn score(&self, uncertain_fraction: f64, mean_confidence: f64) -> f64 {
        (self.uncertain_weight * uncertain_fraction + self.confidence_weight * (1.0 - mean_confidence)).clamp(0.0, 1.0)
    }

    fn validate(&self) -> Result<(), PostprocessError> {
        let (a, b) = (self.uncertain_weight, self.confidence_weight);
        if a >= 0.0 && b >= 0.0 && a + b <= 1.0 + 1e-12 {
            Ok(())
        } else {
            Err(PostprocessError::InvalidParameter(format!(
                "difficulty weights ({a}, {b}) must be non-negative and sum to at most 1"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Threshold on normalised entropy.
    pub threshold: f64,
    pub mean_confidence: f64,
    pub uncertain_fraction: f64,
    pub mean_entropy: f64,
    pub difficulty: f64,
    /// Per-pixel entropy in nats, row-major. Not part of the JSON form.
    #[serde(skip)]
    pub entropy_map: Vec<f64>,
}

impl UncertaintyReport {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Entropy divided by `ln C`; all zeros for a single class.
    pub fn normalised_entropy_map(&self) -> Vec<f64> {
        let denom = normaliser(self.classes);
        self.entropy_map.iter().map(|h| h * denom).collect()
    }
}

fn normaliser(classes: usize) -> f64 {
    if classes > 1 {
        1.0 / (classes as f64).ln()
    } else {
        0.0
    }
}

fn check_threshold(threshold: f64) -> Result<(), PostprocessError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(PostprocessError::InvalidParameter(format!("threshold {threshold} outside [0, 1]")))
    }
}

pub fn uncertainty(probs: &ProbTensor, threshold: f64) -> Result<UncertaintyReport, PostprocessError> {
    uncertainty_with(probs, threshold, DifficultyBlend::default())
}

pub fn uncertainty_with(
    probs: &ProbTensor,
    threshold: f64,
    blend: DifficultyBlend,
) -> Result<UncertaintyReport, PostprocessError> {
    require_probabilities(probs)?;
    check_threshold(threshold)?;
    blend.validate()?;
    let data: Vec<f64> = probs.data().iter().map(|&v| v as f64).collect();
    Ok(report_from(&data, probs.channels(), probs.height(), probs.width(), threshold, blend))
}

/// Statistics over a class-major f64 probability buffer.
fn report_from(
    data: &[f64],
    classes: usize,
    height: usize,
    width: usize,
    threshold: f64,
    blend: DifficultyBlend,
) -> UncertaintyReport {
    let n = height * width;
    let norm = normaliser(classes);
    let mut entropy_map = vec![0f64; n];
    let (mut conf_sum, mut entropy_sum, mut uncertain) = (0.0, 0.0, 0usize);
    for (i, slot) in entropy_map.iter_mut().enumerate() {
        // Renormalise so f32 storage error does not leak into the entropy.
        let total: f64 = (0..classes).map(|c| data[c * n + i]).sum();
        let mut h = 0.0;
        let mut best = 0f64;
        for c in 0..classes {
            let p = data[c * n + i] / total;
            if p > 0.0 {
                h -= p * p.ln();
            }
            best = best.max(p);
        }
        let h = h.max(0.0);
        *slot = h;
        entropy_sum += h;
        conf_sum += best;
        if h * norm > threshold {
            uncertain += 1;
        }
    }
    let mean_confidence = conf_sum / n as f64;
    let uncertain_fraction = uncertain as f64 / n as f64;
    UncertaintyReport {
        classes,
        height,
        width,
        threshold,
        mean_confidence,
        uncertain_fraction,
        mean_entropy: entropy_sum / n as f64,
        difficulty: blend.score(uncertain_fraction, mean_confidence),
        entropy_map,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McAggregate {
    pub samples: usize,
    pub mean: ProbTensor,
    pub predictive: UncertaintyReport,
    /// Per-pixel mean over classes of the across-sample (population)
    /// variance, row-major.
    pub variance: Vec<f64>,
}

/// Streaming mean and variance over sample tensors (Welford).
#[derive(Debug, Clone, Default)]
pub struct McAccumulator {
    shape: Option<(usize, usize, usize)>,
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl McAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &ProbTensor) -> Result<(), PostprocessError> {
        require_probabilities(sample)?;
        let shape = (sample.channels(), sample.height(), sample.width());
        match self.shape {
            None => {
                self.shape = Some(shape);
                self.mean = vec![0.0; sample.data().len()];
                self.m2 = vec![0.0; sample.data().len()];
            }
            Some(s) if s != shape => {
                return Err(PostprocessError::DimensionMismatch(format!(
                    "sample {} vs {}x{}x{}",
                    sample.shape_str(),
                    s.0,
                    s.1,
                    s.2
                )))
            }
            Some(_) => {}
        }
        self.count += 1;
        let k = self.count as f64;
        for ((m, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample.data()) {
            let x = x as f64;
            let delta = x - *m;
            *m += delta / k;
            *m2 += delta * (x - *m);
        }
        Ok(())
    }

    pub fn finish(&self, threshold: f64, blend: DifficultyBlend) -> Result<McAggregate, PostprocessError> {
        let (c, h, w) = self.shape.ok_or(PostprocessError::EmptySampleList)?;
        check_threshold(threshold)?;
        blend.validate()?;
        let n = h * w;
        let t = self.count as f64;
        let mut variance = vec![0f64; n];
        for (i, v) in variance.iter_mut().enumerate() {
            *v = (0..c).map(|k| self.m2[k * n + i] / t).sum::<f64>() / c as f64;
        }
        Ok(McAggregate {
            samples: self.count,
            mean: to_prob_tensor(&self.mean, c, h, w),
            predictive: report_from(&self.mean, c, h, w, threshold, blend),
            variance,
        })
    }
}

pub fn mc_aggregate(samples: &[ProbTensor], threshold: f64) -> Result<McAggregate, PostprocessError> {
    let mut acc = McAccumulator::new();
    for s in samples {
        acc.push(s)?;
    }
    acc.finish(threshold, DifficultyBlend::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandThresholds {
    /// Difficulty strictly below this is well-predicted.
    pub well_below: f64,
    /// Difficulty at or above this is high-uncertainty.
    pub high_at_least: f64,
}

impl Default for BandThresholds {
    fn default() -> Self {
        BandThresholds {
            well_below: 0.15,
            high_at_least: 0.30,
        }
    }
}

impl BandThresholds {
    pub fn band(&self, difficulty: f64) -> Band {
        if difficulty < self.well_below {
            Band::WellPredicted
        } else if difficulty >= self.high_at_least {
            Band::HighUncertainty
        } else {
            Band::Middle
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    WellPredicted,
    Middle,
    HighUncertainty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedImage {
    pub rank: usize,
    pub image_id: String,
    pub difficulty: f64,
    pub mean_confidence: f64,
    pub uncertain_fraction: f64,
    pub band: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRanking {
    pub thresholds: BandThresholds,
    pub images: Vec<RankedImage>,
    pub total: usize,
    pub well_predicted: usize,
    pub middle: usize,
    pub high_uncertainty: usize,
    pub well_predicted_percent: f64,
    pub middle_percent: f64,
    pub high_uncertainty_percent: f64,
    /// Pixel-weighted over all images.
    pub global_mean_confidence: f64,
    pub global_uncertain_fraction: f64,
}

impl DifficultyRanking {
    /// Plain-text summary in the usual reporting layout.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Images: {}", self.total);
        let _ = writeln!(s, "Global mean confidence: {:.3}", self.global_mean_confidence);
        let _ = writeln!(
            s,
            "Uncertain pixels (above entropy threshold): {:.1}%",
            100.0 * self.global_uncertain_fraction
        );
        let _ = writeln!(
            s,
            "High-uncertainty images: {} ({:.1}%)",
            self.high_uncertainty, self.high_uncertainty_percent
        );
        let _ = writeln!(
            s,
            "Well-predicted images: {} ({:.1}%)",
            self.well_predicted, self.well_predicted_percent
        );
        if let Some(top) = self.images.first() {
            let _ = writeln!(
                s,
                "Hardest image: {} (difficulty {:.3}, {:.1}% uncertain pixels)",
                top.image_id,
                top.difficulty,
                100.0 * top.uncertain_fraction
            );
        }
        s
    }
}

pub fn rank_difficulty(
    reports: &[(String, UncertaintyReport)],
    bands: BandThresholds,
) -> Result<DifficultyRanking, PostprocessError> {
    if reports.is_empty() {
        return Err(PostprocessError::EmptyInput);
    }
    if bands.well_below.partial_cmp(&bands.high_at_least).is_none_or(|o| o.is_gt()) {
        return Err(PostprocessError::InvalidParameter(format!(
            "band thresholds {} > {}",
            bands.well_below, bands.high_at_least
        )));
    }
    let mut order: Vec<&(String, UncertaintyReport)> = reports.iter().collect();
    order.sort_by(|a, b| b.1.difficulty.total_cmp(&a.1.difficulty).then_with(|| a.0.cmp(&b.0)));

    let mut counts = [0usize; 3];
    let (mut pixels, mut conf, mut unc) = (0f64, 0f64, 0f64);
    let images: Vec<RankedImage> = order
        .iter()
        .enumerate()
        .map(|(i, (id, r))| {
            let band = bands.band(r.difficulty);
            counts[band as usize] += 1;
            let px = r.pixels() as f64;
            pixels += px;
            conf += px * r.mean_confidence;
            unc += px * r.uncertain_fraction;
            RankedImage {
                rank: i + 1,
                image_id: id.clone(),
                difficulty: r.difficulty,
                mean_confidence: r.mean_confidence,
                uncertain_fraction: r.uncertain_fraction,
                band,
            }
        })
        .collect();
    let total = images.len();
    let pct = |k: usize| 100.0 * k as f64 / total as f64;
    let (global_mean_confidence, global_uncertain_fraction) = if pixels > 0.0 {
        (conf / pixels, unc / pixels)
    } else {
        let t = total as f64;
        (
            order.iter().map(|r| r.1.mean_confidence).sum::<f64>() / t,
            order.iter().map(|r| r.1.uncertain_fraction).sum::<f64>() / t,
        )
    };
    Ok(DifficultyRanking {
        thresholds: bands,
        images,
        total,
        well_predicted: counts[Band::WellPredicted as usize],
        middle: counts[Band::Middle as usize],
        high_uncertainty: counts[Band::HighUncertainty as usize],
        well_predicted_percent: pct(counts[Band::WellPredicted as usize]),
        middle_percent: pct(counts[Band::Middle as usize]),
        high_uncertainty_percent: pct(counts[Band::HighUncertainty as usize]),
        global_mean_confidence,
        global_uncertain_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::TensorKind;

    fn probs(c: usize, h: usize, w: usize, data: Vec<f32>) -> ProbTensor {
        ProbTensor::new(TensorKind::Probabilities, c, h, w, data).unwrap()
    }

    fn report_with(difficulty: f64) -> UncertaintyReport {
        UncertaintyReport {
            classes: 10,
            height: 1,
            width: 1,
            threshold: 0.5,
            mean_confidence: 1.0 - difficulty,
            uncertain_fraction: difficulty,
            mean_entropy: 0.0,
            difficulty,
            entropy_map: vec![0.0],
        }
    }

    #[test]
    fn uniform_is_maximally_uncertain() {
        let r = uncertainty(&probs(10, 2, 2, vec![0.1; 40]), 0.5).unwrap();
        assert!(r.entropy_map.iter().all(|h| (h - 10f64.ln()).abs() < 1e-6));
        assert!(r.normalised_entropy_map().iter().all(|h| (h - 1.0).abs() < 1e-6));
        assert_eq!(r.uncertain_fraction, 1.0);
        assert!((r.mean_confidence - 0.1).abs() < 1e-7);
    }

    #[test]
    fn one_hot_is_certain() {
        let mut data = vec![0f32; 20];
        data[0] = 1.0;
        data[2 + 1] = 1.0;
        let r = uncertainty(&probs(10, 1, 2, data), 0.5).unwrap();
        assert_eq!(r.entropy_map, vec![0.0, 0.0]);
        assert_eq!(r.uncertain_fraction, 0.0);
        assert_eq!(r.mean_confidence, 1.0);
        assert_eq!(r.difficulty, 0.0);
    }

    #[test]
    fn half_half_pixel() {
        let mut data = vec![0f32; 10];
        data[3] = 0.5;
        data[7] = 0.5;
        let r = uncertainty(&probs(10, 1, 1, data), 0.5).unwrap();
        assert!((r.entropy_map[0] - 2f64.ln()).abs() < 1e-12);
        assert!((r.normalised_entropy_map()[0] - std::f64::consts::LOG10_2).abs() < 1e-5);
        assert_eq!(r.uncertain_fraction, 0.0);
    }

    #[test]
    fn single_class_has_zero_normalised_entropy() {
        let r = uncertainty(&probs(1, 1, 2, vec![1.0, 1.0]), 0.0).unwrap();
        assert_eq!(r.normalised_entropy_map(), vec![0.0, 0.0]);
        assert_eq!(r.uncertain_fraction, 0.0);
    }

    #[test]
    fn threshold_is_validated() {
        let p = probs(2, 1, 1, vec![0.5, 0.5]);
        assert!(matches!(uncertainty(&p, 1.5), Err(PostprocessError::InvalidParameter(_))));
    }

    #[test]
    fn mc_opposing_samples() {
        let a = probs(2, 1, 1, vec![1.0, 0.0]);
        let b = probs(2, 1, 1, vec![0.0, 1.0]);
        let agg = mc_aggregate(&[a, b], 0.5).unwrap();
        assert_eq!(agg.mean.data(), &[0.5, 0.5]);
        assert!((agg.predictive.entropy_map[0] - 2f64.ln()).abs() < 1e-12);
        assert!((agg.variance[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn mc_identical_samples() {
        let p = probs(3, 1, 2, vec![0.2, 0.5, 0.3, 0.25, 0.5, 0.25]);
        let agg = mc_aggregate(&[p.clone(), p.clone(), p.clone()], 0.5).unwrap();
        assert!(agg.variance.iter().all(|&v| v == 0.0));
        assert_eq!(agg.predictive, uncertainty(&p, 0.5).unwrap());
        assert_eq!(agg.mean, p);
        let single = mc_aggregate(std::slice::from_ref(&p), 0.5).unwrap();
        assert_eq!(single.mean, p);
    }

    #[test]
    fn mc_errors() {
        assert_eq!(mc_aggregate(&[], 0.5).unwrap_err(), PostprocessError::EmptySampleList);
        let a = probs(2, 1, 1, vec![1.0, 0.0]);
        let b = probs(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(mc_aggregate(&[a, b], 0.5), Err(PostprocessError::DimensionMismatch(_))));
    }

    #[test]
    fn bands_and_counts() {
        let reports = vec![
            ("a".to_string(), report_with(0.05)),
            ("b".to_string(), report_with(0.20)),
            ("c".to_string(), report_with(0.40)),
        ];
        let r = rank_difficulty(&reports, BandThresholds::default()).unwrap();
        let ids: Vec<_> = r.images.iter().map(|i| i.image_id.as_str()).collect();
        assert_eq!(ids, ["c", "b", "a"]);
        let bands: Vec<_> = r.images.iter().map(|i| i.band).collect();
        assert_eq!(bands, [Band::HighUncertainty, Band::Middle, Band::WellPredicted]);
        assert_eq!((r.well_predicted, r.middle, r.high_uncertainty), (1, 1, 1));
        assert!(r.render_text().contains("High-uncertainty images: 1 (33.3%)"));
    }

    #[test]
    fn ties_order_by_id() {
        let reports = vec![
            ("z".to_string(), report_with(0.2)),
            ("m".to_string(), report_with(0.2)),
            ("a".to_string(), report_with(0.2)),
        ];
        let r = rank_difficulty(&reports, BandThresholds::default()).unwrap();
        let ids: Vec<_> = r.images.iter().map(|i| i.image_id.as_str()).collect();
        assert_eq!(ids, ["a", "m", "z"]);
        assert_eq!(rank_difficulty(&[], BandThresholds::default()), Err(PostprocessError::EmptyInput));
    }

    #[test]
    fn band_boundaries() {
        let b = BandThresholds::default();
        assert_eq!(b.band(0.15), Band::Middle);
        assert_eq!(b.band(0.30), Band::HighUncertainty);
        assert_eq!(b.band(0.1499), Band::WellPredicted);
    }
}
