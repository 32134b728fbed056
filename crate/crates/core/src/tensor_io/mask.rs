use std::io::Cursor;

use image::codecs::png::{PngDecoder, PngEncoder};
use image::{ColorType, DynamicImage, ExtendedColorType, ImageDecoder, ImageEncoder, ImageFormat};

use super::{IoError, LabelMap, RgbImage};
use crate::schema::{ClassSchema, IGNORE_INDEX};

/// How [`encode_mask`] represents labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskEncoding {
    /// 8-bit grayscale PNG of schema raw values (annotation convention).
    RawValues,
    /// 8-bit RGB PNG of palette colours (display convention).
    PaletteColor,
}

fn load_png(bytes: &[u8]) -> Result<DynamicImage, IoError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| IoError::CorruptPng(e.to_string()))
}

fn color_name(img: &DynamicImage) -> String {
    format!("{:?}", img.color())
}

/// Decodes an annotation PNG of raw values into class indices.
pub fn decode_mask(bytes: &[u8], schema: &ClassSchema) -> Result<LabelMap, IoError> {
    let img = load_png(bytes)?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => return Err(IoError::NotGrayscale(color_name(&other))),
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut raw = gray.into_raw();
    for (i, v) in raw.iter_mut().enumerate() {
        *v = schema.index_for_raw(*v).ok_or(IoError::UnknownRawValue {
            value: *v,
            row: i / w,
            col: i % w,
        })?;
    }
    LabelMap::new(w, h, raw)
}

/// Decodes a palette-coloured RGB mask back to class indices. Black reads
/// as ignored when the schema has an ignore value and no black class.
pub fn decode_palette_mask(bytes: &[u8], schema: &ClassSchema) -> Result<LabelMap, IoError> {
    let img = decode_rgb_image(bytes)?;
    let (w, h) = (img.width(), img.height());
    let black_is_ignore = schema.ignore_value().is_some() && schema.classes().iter().all(|c| c.color != [0, 0, 0]);
    let mut out = Vec::with_capacity(w * h);
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let color = [px[0], px[1], px[2]];
        let idx = schema
            .classes()
            .iter()
            .find(|c| c.color == color)
            .map(|c| c.index)
            .or((black_is_ignore && color == [0, 0, 0]).then_some(IGNORE_INDEX))
            .ok_or(IoError::UnknownColor {
                color,
                row: i / w,
                col: i % w,
            })?;
        out.push(idx);
    }
    LabelMap::new(w, h, out)
}

/// Decodes either mask convention, chosen by the PNG colour type: 8-bit
/// grayscale as raw values, anything else as palette colours.
pub fn decode_label_png(bytes: &[u8], schema: &ClassSchema) -> Result<LabelMap, IoError> {
    let header = PngDecoder::new(Cursor::new(bytes)).map_err(|e| IoError::CorruptPng(e.to_string()))?;
    if header.color_type() == ColorType::L8 {
        decode_mask(bytes, schema)
    } else {
        decode_palette_mask(bytes, schema)
    }
}

/// Encodes a label map as PNG. `RawValues` inverts [`decode_mask`] exactly.
/// Ignored pixels are written as the schema's ignore value (raw mode) or
/// black (palette mode).
pub fn encode_mask(map: &LabelMap, schema: &ClassSchema, mode: MaskEncoding) -> Result<Vec<u8>, IoError> {
    map.validate(schema.len())?;
    let (w, h) = (map.width(), map.height());
    match mode {
        MaskEncoding::RawValues => {
            let ignore_raw = schema.ignore_value();
            let mut raw = Vec::with_capacity(map.len());
            for (at, &v) in map.data().iter().enumerate() {
                let value = if v == IGNORE_INDEX {
                    ignore_raw.ok_or(IoError::IndexOutOfRange {
                        value: v,
                        at,
                        classes: schema.len(),
                    })?
                } else {
                    schema.classes()[v as usize].raw_value
                };
                raw.push(value);
            }
            encode_png(&raw, w, h, ExtendedColorType::L8)
        }
        MaskEncoding::PaletteColor => {
            let mut rgb = Vec::with_capacity(map.len() * 3);
            for &v in map.data() {
                let color = schema.class(v as usize).map_or([0, 0, 0], |c| c.color);
                rgb.extend_from_slice(&color);
            }
            encode_png(&rgb, w, h, ExtendedColorType::Rgb8)
        }
    }
}

/// Loads an 8-bit RGB(A) PNG; alpha is dropped, grayscale is expanded.
pub fn decode_rgb_image(bytes: &[u8]) -> Result<RgbImage, IoError> {
    let img = load_png(bytes)?;
    let rgb = match img {
        DynamicImage::ImageRgb8(i) => i,
        DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            img.to_rgb8()
        }
        other => return Err(IoError::NotRgb(color_name(&other))),
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    RgbImage::new(w, h, rgb.into_raw())
}

pub fn encode_rgb_image(img: &RgbImage) -> Result<Vec<u8>, IoError> {
    encode_png(img.data(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

/// Grayscale heatmap: 0 maps to black, `max` (and above) to white.
pub fn encode_heatmap(values: &[f64], width: usize, height: usize, max: f64) -> Result<Vec<u8>, IoError> {
    if values.len() != width * height {
        return Err(IoError::DimensionMismatch(format!(
            "heatmap {width}x{height} with {} values",
            values.len()
        )));
    }
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let gray: Vec<u8> = values
        .iter()
        .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    encode_png(&gray, width, height, ExtendedColorType::L8)
}

pub fn encode_gray16_png(values: &[u16], width: usize, height: usize) -> Result<Vec<u8>, IoError> {
    if values.len() != width * height {
        return Err(IoError::DimensionMismatch(format!(
            "16-bit image {width}x{height} with {} values",
            values.len()
        )));
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_ne_bytes()).collect();
    encode_png(&bytes, width, height, ExtendedColorType::L16)
}

/// Returns `(width, height, values)` of a 16-bit grayscale PNG.
pub fn decode_gray16_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), IoError> {
    match load_png(bytes)? {
        DynamicImage::ImageLuma16(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            Ok((w, h, g.into_raw()))
        }
        other => Err(IoError::NotGrayscale(color_name(&other))),
    }
}

fn encode_png(data: &[u8], width: usize, height: usize, color: ExtendedColorType) -> Result<Vec<u8>, IoError> {
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new(&mut out)
        .write_image(data, width as u32, height as u32, color)
        .map_err(|e| IoError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}
