//! Seeded geometric augmentation of image/mask pairs and copy-paste of
//! rare-class instances.

mod copy_paste;

pub use copy_paste::{
    connected_components, copy_paste, paste_component, BoundingBox, Component, CopyPasteConfig, CopyPasteOutcome,
    PastedInstance,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::resample::{bilinear, source_coord};
use crate::tensor_io::{LabelMap, ProbTensor, RgbImage, TensorKind};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
pub const DEFAULT_CROP_SCALE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AugmentError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("crop window is smaller than one pixel")]
    DegenerateWindow,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("standard deviation for channel {0} is zero")]
    ZeroStd(usize),
}

/// An image with its per-pixel labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    image: RgbImage,
    mask: LabelMap,
}

impl Sample {
    pub fn new(image: RgbImage, mask: LabelMap) -> Result<Self, AugmentError> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(AugmentError::DimensionMismatch(format!(
                "image {}x{} vs mask {}x{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(Sample { image, mask })
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn mask(&self) -> &LabelMap {
        &self.mask
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn into_parts(self) -> (RgbImage, LabelMap) {
        (self.image, self.mask)
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut RgbImage, &mut LabelMap) {
        (&mut self.image, &mut self.mask)
    }
}

pub fn hflip(s: &Sample) -> Sample {
    let (w, h) = (s.width(), s.height());
    let mut image = s.image.clone();
    let mut mask = s.mask.clone();
    for r in 0..h {
        for c in 0..w {
            image.set_pixel(r, c, s.image.pixel(r, w - 1 - c));
            mask.set(r, c, s.mask.get(r, w - 1 - c));
        }
    }
    Sample { image, mask }
}

/// Source rectangle sampled by a crop, in source pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Draws a window whose area is `scale × source area` (scale uniform in
/// `scale_range`, aspect ratio kept, clamped to the source) at a uniform
/// position, then resamples it to `out_size = (height, width)`.
pub fn random_resized_crop(
    s: &Sample,
    scale_range: (f64, f64),
    out_size: (usize, usize),
    seed: u64,
) -> Result<(Sample, CropWindow), AugmentError> {
    let (lo, hi) = scale_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(AugmentError::InvalidParameter(format!("scale range [{lo}, {hi}]")));
    }
    if out_size.0 == 0 || out_size.1 == 0 {
        return Err(AugmentError::InvalidParameter("output size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let side = |len: usize| ((scale.sqrt() * len as f64).round() as usize).min(len);
    let (wh, ww) = (side(s.height()), side(s.width()));
    if wh == 0 || ww == 0 {
        return Err(AugmentError::DegenerateWindow);
    }
    let top = rng.random_range(0..=s.height() - wh);
    let left = rng.random_range(0..=s.width() - ww);
    let window = CropWindow {
        top,
        left,
        height: wh,
        width: ww,
    };
    Ok((crop_resize(s, window, out_size), window))
}

/// Resamples `window` to `out_size`: bilinear for the image, nearest for
/// the mask, both on the same half-pixel grid.
pub fn crop_resize(s: &Sample, window: CropWindow, out_size: (usize, usize)) -> Sample {
    let (oh, ow) = out_size;
    let (sw, sh) = (s.width(), s.height());
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|ch| s.image.data().iter().skip(ch).step_by(3).map(|&v| v as f64).collect())
        .collect();
    let mut image = vec![0u8; oh * ow * 3];
    let mut mask = vec![0u8; oh * ow];
    for r in 0..oh {
        let y = source_coord(r, window.top as f64, window.height as f64, oh);
        let my = ((y + 0.5).floor().max(0.0) as usize).min(window.top + window.height - 1);
        for c in 0..ow {
            let x = source_coord(c, window.left as f64, window.width as f64, ow);
            let mx = ((x + 0.5).floor().max(0.0) as usize).min(window.left + window.width - 1);
            mask[r * ow + c] = s.mask.get(my, mx);
            for (ch, plane) in planes.iter().enumerate() {
                let v = bilinear(plane, sw, sh, x, y);
                image[(r * ow + c) * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Sample {
        image: RgbImage::new(ow, oh, image).expect("positive output size"),
        mask: LabelMap::new(ow, oh, mask).expect("positive output size"),
    }
}

/// Channel-major `3 × H × W` normalised image.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl NormalizedImage {
    /// As an unconstrained real tensor (written with the logits kind).
    pub fn to_tensor(&self) -> ProbTensor {
        ProbTensor::new_unchecked(TensorKind::Logits, 3, self.height, self.width, self.data.clone())
            .expect("three channels")
    }
}

/// `(pixel / 255 − mean) / std` per channel.
pub fn normalize(image: &RgbImage, mean: [f64; 3], std: [f64; 3]) -> Result<NormalizedImage, AugmentError> {
    if let Some(ch) = std.iter().position(|&s| s == 0.0) {
        return Err(AugmentError::ZeroStd(ch));
    }
    let n = image.width() * image.height();
    let mut data = vec![0f32; 3 * n];
    for (i, px) in image.data().chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * n + i] = ((px[ch] as f64 / 255.0 - mean[ch]) / std[ch]) as f32;
        }
    }
    Ok(NormalizedImage {
        height: image.height(),
        width: image.width(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(w: usize, h: usize) -> Sample {
        let image: Vec<u8> = (0..w * h * 3).map(|i| (i * 7 % 256) as u8).collect();
        let mask: Vec<u8> = (0..w * h).map(|i| (i % 10) as u8).collect();
        Sample::new(RgbImage::new(w, h, image).unwrap(), LabelMap::new(w, h, mask).unwrap()).unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let s = sample(5, 3);
        assert_eq!(hflip(&hflip(&s)), s);
        let tiny = Sample::new(RgbImage::filled(2, 1, [0, 0, 0]), LabelMap::new(2, 1, vec![0, 9]).unwrap()).unwrap();
        assert_eq!(hflip(&tiny).mask().data(), &[9, 0]);
        assert_eq!(hflip(&s).mask().class_counts(10), s.mask().class_counts(10));
    }

    #[test]
    fn unit_scale_full_size_crop_is_identity() {
        let s = sample(7, 4);
        let (out, window) = random_resized_crop(&s, (1.0, 1.0), (4, 7), 3).unwrap();
        assert_eq!(out, s);
        assert_eq!(
            window,
            CropWindow {
                top: 0,
                left: 0,
                height: 4,
                width: 7
            }
        );
    }

    #[test]
    fn crop_is_deterministic_and_sized() {
        let s = sample(16, 12);
        let a = random_resized_crop(&s, DEFAULT_CROP_SCALE, (9, 5), 42).unwrap();
        let b = random_resized_crop(&s, DEFAULT_CROP_SCALE, (9, 5), 42).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.0.height(), a.0.width()), (9, 5));
        let values: std::collections::BTreeSet<u8> = s.mask().data().iter().copied().collect();
        assert!(a.0.mask().data().iter().all(|v| values.contains(v)));
    }

    #[test]
    fn crop_errors() {
        let s = sample(4, 4);
        assert_eq!(
            random_resized_crop(&s, (0.01, 0.01), (2, 2), 0).unwrap_err(),
            AugmentError::DegenerateWindow
        );
        assert!(matches!(
            random_resized_crop(&s, (2.0, 1.0), (2, 2), 0),
            Err(AugmentError::InvalidParameter(_))
        ));
    }

    #[test]
    fn imagenet_normalisation() {
        let img = RgbImage::new(1, 1, vec![124, 116, 104]).unwrap();
        let n = normalize(&img, IMAGENET_MEAN, IMAGENET_STD).unwrap();
        assert!(n.data.iter().all(|v| v.abs() < 0.01));
        let expected = [0.005567, -0.004902, 0.008192];
        for (v, e) in n.data.iter().zip(expected) {
            assert!((*v as f64 - e).abs() < 1e-5, "{v} vs {e}");
        }
        let white = RgbImage::new(1, 1, vec![255, 255, 255]).unwrap();
        let n = normalize(&white, IMAGENET_MEAN, IMAGENET_STD).unwrap();
        assert!((n.data[0] as f64 - (1.0 - 0.485) / 0.229).abs() < 1e-6);
        let plain = normalize(&white, [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(plain.data, vec![1.0; 3]);
        assert_eq!(normalize(&white, [0.0; 3], [1.0, 0.0, 1.0]), Err(AugmentError::ZeroStd(1)));
    }
}
