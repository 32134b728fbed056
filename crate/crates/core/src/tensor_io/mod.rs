//! Grid types shared by every module, plus their on-disk codecs.

mod mask;
mod overlay;
mod tensor;

pub use mask::{
    decode_gray16_png, decode_label_png, decode_mask, decode_palette_mask, decode_rgb_image, encode_gray16_png,
    encode_heatmap, encode_mask, encode_rgb_image, MaskEncoding,
};
pub use overlay::render_overlay;
pub use tensor::{read_tensor, write_tensor, TENSOR_MAGIC, TENSOR_VERSION};

use crate::schema::IGNORE_INDEX;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IoError {
    #[error("corrupt PNG: {0}")]
    CorruptPng(String),
    #[error("expected an 8-bit grayscale PNG, found {0}")]
    NotGrayscale(String),
    #[error("expected an 8-bit RGB PNG, found {0}")]
    NotRgb(String),
    #[error("raw value {value} at (row {row}, col {col}) is not in the schema")]
    UnknownRawValue { value: u8, row: usize, col: usize },
    #[error("colour {color:?} at (row {row}, col {col}) is not in the palette")]
    UnknownColor { color: [u8; 3], row: usize, col: usize },
    #[error("bad tensor magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor version {0}")]
    VersionUnsupported(u8),
    #[error("unknown tensor kind {0}")]
    UnknownKind(u8),
    #[error("reserved header field must be zero, got {0}")]
    ReservedNonZero(u16),
    #[error("tensor shape {0}x{1}x{2} is empty or overflows")]
    ShapeOverflow(u32, u32, u32),
    #[error("tensor payload truncated: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("tensor has {0} trailing bytes after the payload")]
    TrailingBytes(usize),
    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),
    #[error("probabilities at (row {row}, col {col}) are not normalised (sum {sum})")]
    NormalizationViolation { row: usize, col: usize, sum: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {value} at flat index {at} is not a valid class index (C = {classes})")]
    IndexOutOfRange { value: u8, at: usize, classes: usize },
    #[error("PNG encoding failed: {0}")]
    Encode(String),
}

/// Row-major grid of class indices. [`IGNORE_INDEX`] marks ignored pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, IoError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(IoError::DimensionMismatch(format!(
                "label map {width}x{height} with {} values",
                data.len()
            )));
        }
        Ok(LabelMap { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "label map must be non-empty");
        LabelMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    /// Checks every label is a class index below `classes` or the ignore index.
    pub fn validate(&self, classes: usize) -> Result<(), IoError> {
        match self
            .data
            .iter()
            .position(|&v| v as usize >= classes && v != IGNORE_INDEX)
        {
            Some(at) => Err(IoError::IndexOutOfRange {
                value: self.data[at],
                at,
                classes,
            }),
            None => Ok(()),
        }
    }

    /// Pixel count per class; ignored pixels are not counted.
    pub fn class_counts(&self, classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; classes];
        for &v in &self.data {
            if let Some(c) = counts.get_mut(v as usize) {
                *c += 1;
            }
        }
        counts
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TensorKind {
    Logits,
    Probabilities,
}

/// Tolerance on per-pixel channel sums of probability tensors.
pub const PROB_SUM_TOLERANCE: f64 = 1e-4;

/// C×H×W grid of f32, class-major planes, row-major within a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTensor {
    channels: usize,
    height: usize,
    width: usize,
    kind: TensorKind,
    data: Vec<f32>,
}

impl ProbTensor {
    /// Builds a tensor and checks shape, finiteness and (for probabilities)
    /// per-pixel normalisation.
    pub fn new(
        kind: TensorKind,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, IoError> {
        let t = ProbTensor::new_unchecked(kind, channels, height, width, data)?;
        t.validate()?;
        Ok(t)
    }

    /// Shape-checked constructor that skips value validation.
    pub fn new_unchecked(
        kind: TensorKind,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, IoError> {
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .filter(|&n| n > 0);
        if expected != Some(data.len()) {
            return Err(IoError::DimensionMismatch(format!(
                "tensor {channels}x{height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(ProbTensor {
            channels,
            height,
            width,
            kind,
            data,
        })
    }

    pub fn zeros(kind: TensorKind, channels: usize, height: usize, width: usize) -> Self {
        ProbTensor::new_unchecked(kind, channels, height, width, vec![0.0; channels * height * width])
            .expect("non-empty shape")
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(IoError::NonFiniteValue(i));
        }
        if self.kind == TensorKind::Probabilities {
            let plane = self.plane_len();
            for p in 0..plane {
                let mut sum = 0.0f64;
                let mut in_range = true;
                for c in 0..self.channels {
                    let v = self.data[c * plane + p];
                    in_range &= (0.0..=1.0).contains(&v);
                    sum += v as f64;
                }
                if !in_range || (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(IoError::NormalizationViolation {
                        row: p / self.width,
                        col: p % self.width,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> TensorKind {
        self.kind
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn same_shape(&self, other: &ProbTensor) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }

    /// Per-pixel argmax over channels; ties resolve to the lowest index.
    pub fn argmax(&self) -> LabelMap {
        let n = self.plane_len();
        let mut out = vec![0u8; n];
        for (p, slot) in out.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_v = self.data[p];
            for c in 1..self.channels {
                let v = self.data[c * n + p];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            *slot = best as u8;
        }
        LabelMap::new(self.width, self.height, out).expect("shape carried over")
    }
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, IoError> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(IoError::DimensionMismatch(format!(
                "rgb image {width}x{height} with {} bytes",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        RgbImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_shape_checks() {
        assert!(LabelMap::new(2, 2, vec![0; 3]).is_err());
        assert!(LabelMap::new(0, 2, vec![]).is_err());
        let m = LabelMap::new(2, 1, vec![0, 9]).unwrap();
        assert!(m.validate(10).is_ok());
        assert_eq!(
            m.validate(5),
            Err(IoError::IndexOutOfRange {
                value: 9,
                at: 1,
                classes: 5
            })
        );
        let ignored = LabelMap::new(1, 1, vec![IGNORE_INDEX]).unwrap();
        assert!(ignored.validate(10).is_ok());
    }

    #[test]
    fn probability_normalisation_is_checked() {
        let ok = ProbTensor::new(TensorKind::Probabilities, 2, 1, 1, vec![0.25, 0.75]);
        assert!(ok.is_ok());
        let bad = ProbTensor::new(TensorKind::Probabilities, 2, 1, 1, vec![0.5, 0.4]);
        assert!(matches!(bad, Err(IoError::NormalizationViolation { .. })));
        let nan = ProbTensor::new(TensorKind::Logits, 1, 1, 1, vec![f32::NAN]);
        assert_eq!(nan, Err(IoError::NonFiniteValue(0)));
    }

    #[test]
    fn argmax_picks_lowest_on_ties() {
        let t = ProbTensor::new(TensorKind::Logits, 3, 1, 2, vec![1.0, 0.0, 1.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(t.argmax().data(), &[0, 1]);
    }
}
