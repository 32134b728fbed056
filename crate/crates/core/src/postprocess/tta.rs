//! Test-time augmentation: horizontal flip and multi-scale views mapped back
//! to the base geometry and averaged in probability space.

use super::{as_probabilities, normalise_pixels, to_prob_tensor, PostprocessError};
use crate::resample::{bilinear, resize_plane_bilinear, source_coord};
use crate::tensor_io::{ProbTensor, RgbImage};

pub const DEFAULT_TTA_SCALES: [f64; 3] = [0.75, 1.0, 1.25];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TtaView {
    pub hflip: bool,
    pub scale: f64,
}

impl TtaView {
    pub const IDENTITY: TtaView = TtaView {
        hflip: false,
        scale: 1.0,
    };

    /// Size of the view for a base image of `height` × `width`.
    pub fn view_size(&self, height: usize, width: usize) -> (usize, usize) {
        let side = |n: usize| ((n as f64 * self.scale).round() as usize).max(1);
        (side(height), side(width))
    }

    /// Produces the view image handed to the upstream model.
    pub fn forward_image(&self, image: &RgbImage) -> RgbImage {
        let (h, w) = self.view_size(image.height(), image.width());
        let mut planes = [Vec::new(), Vec::new(), Vec::new()];
        for (ch, plane) in planes.iter_mut().enumerate() {
            *plane = image.data().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        }
        let mut out = vec![0u8; w * h * 3];
        for r in 0..h {
            let y = source_coord(r, 0.0, image.height() as f64, h);
            for c in 0..w {
                let x = source_coord(c, 0.0, image.width() as f64, w);
                let dst_c = if self.hflip { w - 1 - c } else { c };
                for (ch, plane) in planes.iter().enumerate() {
                    let v = bilinear(plane, image.width(), image.height(), x, y);
                    out[(r * w + dst_c) * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        RgbImage::new(w, h, out).expect("non-empty view")
    }

    /// Maps a view's output back to the base geometry: softmax (for logits),
    /// undo the flip, bilinear-resize each plane, renormalise.
    pub fn inverse(&self, t: &ProbTensor, base_height: usize, base_width: usize) -> Result<ProbTensor, PostprocessError> {
        if self.scale.is_nan() || self.scale <= 0.0 {
            return Err(PostprocessError::InvalidParameter(format!("scale {} must be positive", self.scale)));
        }
        let mut probs = as_probabilities(t)?;
        if self.hflip {
            probs = hflip_tensor(&probs);
        }
        if probs.height() == base_height && probs.width() == base_width {
            return Ok(probs);
        }
        Ok(resize_tensor(&probs, base_height, base_width))
    }
}

/// Each scale with and without a horizontal flip.
pub fn default_views(scales: &[f64]) -> Vec<TtaView> {
    scales
        .iter()
        .flat_map(|&scale| [TtaView { hflip: false, scale }, TtaView { hflip: true, scale }])
        .collect()
}

pub fn hflip_tensor(t: &ProbTensor) -> ProbTensor {
    let (w, h) = (t.width(), t.height());
    let mut out = t.clone();
    let src = t.data();
    for (plane_idx, plane) in out.data_mut().chunks_exact_mut(w * h).enumerate() {
        let base = plane_idx * w * h;
        for r in 0..h {
            for c in 0..w {
                plane[r * w + c] = src[base + r * w + (w - 1 - c)];
            }
        }
    }
    out
}

/// Bilinear per-plane resize of a probability tensor, renormalised per pixel.
pub fn resize_tensor(t: &ProbTensor, height: usize, width: usize) -> ProbTensor {
    let n = t.plane_len();
    let mut data = Vec::with_capacity(t.channels() * height * width);
    for c in 0..t.channels() {
        let plane: Vec<f64> = t.data()[c * n..(c + 1) * n].iter().map(|&v| v as f64).collect();
        data.extend(resize_plane_bilinear(&plane, t.width(), t.height(), width, height));
    }
    normalise_pixels(&mut data, t.channels());
    to_prob_tensor(&data, t.channels(), height, width)
}

/// Averages views that are already aligned to the base geometry. Logit
/// views are softmaxed first; the mean is renormalised per pixel.
pub fn tta_merge(views: &[ProbTensor]) -> Result<ProbTensor, PostprocessError> {
    let first = views.first().ok_or(PostprocessError::EmptyViewList)?;
    let mut acc = vec![0f64; first.data().len()];
    for v in views {
        if !v.same_shape(first) {
            return Err(PostprocessError::DimensionMismatch(format!(
                "view {} vs {}",
                v.shape_str(),
                first.shape_str()
            )));
        }
        let p = as_probabilities(v)?;
        for (a, &x) in acc.iter_mut().zip(p.data()) {
            *a += x as f64;
        }
    }
    let k = views.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    normalise_pixels(&mut acc, first.channels());
    Ok(to_prob_tensor(&acc, first.channels(), first.height(), first.width()))
}

/// Inverse-maps every `(view, output)` pair to `base_height × base_width`
/// and merges them.
pub fn tta_ensemble(
    views: &[(TtaView, ProbTensor)],
    base_height: usize,
    base_width: usize,
) -> Result<ProbTensor, PostprocessError> {
    let aligned = views
        .iter()
        .map(|(view, t)| view.inverse(t, base_height, base_width))
        .collect::<Result<Vec<_>, _>>()?;
    tta_merge(&aligned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::softmax;
    use crate::tensor_io::TensorKind;

    fn probs(c: usize, h: usize, w: usize, data: Vec<f32>) -> ProbTensor {
        ProbTensor::new(TensorKind::Probabilities, c, h, w, data).unwrap()
    }

    #[test]
    fn single_identity_view_is_softmax() {
        let logits = ProbTensor::new(TensorKind::Logits, 3, 1, 2, vec![0.1, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
        let merged = tta_ensemble(&[(TtaView::IDENTITY, logits.clone())], 1, 2).unwrap();
        assert_eq!(merged, softmax(&logits).unwrap());
    }

    #[test]
    fn two_view_mean() {
        let a = probs(2, 1, 1, vec![0.8, 0.2]);
        let b = probs(2, 1, 1, vec![0.6, 0.4]);
        let m = tta_merge(&[a, b]).unwrap();
        assert!((m.data()[0] as f64 - 0.7).abs() < 1e-7);
        assert!((m.data()[1] as f64 - 0.3).abs() < 1e-7);
    }

    #[test]
    fn flip_view_of_symmetric_map_is_unchanged() {
        // 2 classes, 1x3, mirror-symmetric along the row.
        let t = probs(2, 1, 3, vec![0.9, 0.3, 0.9, 0.1, 0.7, 0.1]);
        let views = [(TtaView::IDENTITY, t.clone()), (TtaView { hflip: true, scale: 1.0 }, t.clone())];
        assert_eq!(tta_ensemble(&views, 1, 3).unwrap(), t);
    }

    #[test]
    fn flip_inverse_realigns_columns() {
        let t = probs(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let flipped = hflip_tensor(&t);
        assert_eq!(flipped.data(), &[0.0, 1.0, 1.0, 0.0]);
        let back = TtaView { hflip: true, scale: 1.0 }.inverse(&flipped, 1, 2).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn scaled_views_resize_to_base() {
        let view = TtaView { hflip: false, scale: 1.25 };
        assert_eq!(view.view_size(8, 4), (10, 5));
        let out = probs(2, 10, 5, [vec![0.25f32; 50], vec![0.75f32; 50]].concat());
        let back = view.inverse(&out, 8, 4).unwrap();
        assert_eq!((back.height(), back.width()), (8, 4));
        assert!(back.data()[..32].iter().all(|&v| (v - 0.25).abs() < 1e-6));
        assert!(back.validate().is_ok());
    }

    #[test]
    fn merge_errors() {
        assert_eq!(tta_merge(&[]), Err(PostprocessError::EmptyViewList));
        let a = probs(2, 1, 1, vec![0.5, 0.5]);
        let b = probs(2, 1, 2, vec![0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(tta_merge(&[a, b]), Err(PostprocessError::DimensionMismatch(_))));
    }

    #[test]
    fn forward_image_flips_and_scales() {
        let img = RgbImage::new(2, 1, vec![10, 10, 10, 200, 200, 200]).unwrap();
        let flipped = TtaView { hflip: true, scale: 1.0 }.forward_image(&img);
        assert_eq!(flipped.pixel(0, 0), [200, 200, 200]);
        let up = TtaView { hflip: false, scale: 2.0 }.forward_image(&img);
        assert_eq!((up.width(), up.height()), (4, 2));
    }
}
