mod support;

use image::{GrayImage, ImageFormat, RgbImage as ImgRgb};
use proptest::prelude::*;
use support::*;
use terraseg::tensor_io::{
    decode_mask, decode_palette_mask, decode_rgb_image, encode_mask, encode_rgb_image, read_tensor, render_overlay,
    write_tensor, IoError, MaskEncoding,
};
use terraseg::{ClassSchema, LabelMap, ProbTensor, RgbImage, TensorKind};

fn gray_png(w: u32, h: u32, values: &[u8]) -> Vec<u8> {
    let img = GrayImage::from_raw(w, h, values.to_vec()).unwrap();
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

fn rgb_pixels(png: &[u8]) -> Vec<u8> {
    image::load_from_memory(png).unwrap().to_rgb8().into_raw()
}

#[test]
fn decode_raw_values() {
    let s = ClassSchema::default();
    assert_eq!(decode_mask(&gray_png(1, 1, &[100]), &s).unwrap(), label_map(&[&[0]]));
    assert_eq!(decode_mask(&gray_png(1, 1, &[190]), &s).unwrap(), label_map(&[&[9]]));
    assert_eq!(
        decode_mask(&gray_png(1, 1, &[7]), &s),
        Err(IoError::UnknownRawValue { value: 7, row: 0, col: 0 })
    );
    assert_eq!(
        decode_mask(&gray_png(3, 2, &[100, 100, 100, 100, 101, 100]), &s),
        Err(IoError::UnknownRawValue { value: 101, row: 1, col: 1 })
    );
}

#[test]
fn decode_rejects_colour_and_garbage() {
    let s = ClassSchema::default();
    let rgb = encode_mask(&label_map(&[&[0]]), &s, MaskEncoding::PaletteColor).unwrap();
    assert!(matches!(decode_mask(&rgb, &s), Err(IoError::NotGrayscale(_))));
    assert!(matches!(decode_mask(b"not a png", &s), Err(IoError::CorruptPng(_))));
}

#[test]
fn encode_raw_and_palette() {
    let s = ClassSchema::default();
    let raw = encode_mask(&label_map(&[&[0, 9]]), &s, MaskEncoding::RawValues).unwrap();
    assert_eq!(image::load_from_memory(&raw).unwrap().to_luma8().into_raw(), [100, 190]);
    let pal = encode_mask(&label_map(&[&[9]]), &s, MaskEncoding::PaletteColor).unwrap();
    assert_eq!(rgb_pixels(&pal), [0, 0, 255]);
    assert_eq!(decode_palette_mask(&pal, &s).unwrap(), label_map(&[&[9]]));
}

#[test]
fn palette_unknown_colour() {
    let img = ImgRgb::from_raw(2, 1, vec![0, 0, 255, 1, 2, 3]).unwrap();
    let mut png = std::io::Cursor::new(Vec::new());
    img.write_to(&mut png, ImageFormat::Png).unwrap();
    assert_eq!(
        decode_palette_mask(png.get_ref(), &ClassSchema::default()),
        Err(IoError::UnknownColor { color: [1, 2, 3], row: 0, col: 1 })
    );
}

#[test]
fn ignore_without_configured_value_cannot_be_encoded() {
    let map = label_map(&[&[terraseg::IGNORE_INDEX]]);
    assert!(encode_mask(&map, &ClassSchema::default(), MaskEncoding::RawValues).is_err());
}

#[test]
fn tensor_round_trip_is_bit_exact() {
    let mut r = rng(3);
    let t = random_logits(&mut r, 10, 4, 4, 8.0);
    let bytes = write_tensor(&t);
    assert_eq!(&bytes[..4], b"TST1");
    assert_eq!(bytes.len(), 20 + 4 * 160);
    let back = read_tensor(&bytes).unwrap();
    assert_eq!(back.kind(), TensorKind::Logits);
    let bits = |t: &ProbTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&t));
}

#[test]
fn tensor_header_layout_is_little_endian() {
    let t = ProbTensor::new(TensorKind::Probabilities, 2, 1, 3, vec![1.0, 0.5, 0.0, 0.0, 0.5, 1.0]).unwrap();
    let bytes = write_tensor(&t);
    assert_eq!(&bytes[4..8], &[1, 1, 0, 0]);
    assert_eq!(&bytes[8..20], &[2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
    assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
}

#[test]
fn tensor_errors() {
    let t = uniform_probs(3, 2, 2);
    let good = write_tensor(&t);

    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"XXXX");
    assert_eq!(read_tensor(&magic), Err(IoError::BadMagic(*b"XXXX")));

    let mut version = good.clone();
    version[4] = 2;
    assert_eq!(read_tensor(&version), Err(IoError::VersionUnsupported(2)));

    let mut huge = good.clone();
    huge[8..20].copy_from_slice(&[0xff; 12]);
    assert!(matches!(read_tensor(&huge), Err(IoError::ShapeOverflow(..))));

    assert!(matches!(
        read_tensor(&good[..good.len() - 1]),
        Err(IoError::TruncatedPayload { .. })
    ));

    let mut nan = good.clone();
    nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
    assert_eq!(read_tensor(&nan), Err(IoError::NonFiniteValue(0)));
}

#[test]
fn probability_sum_violation_is_not_a_finiteness_error() {
    let mut data = vec![0.5f32; 8];
    data[4] = 0.4;
    let t = ProbTensor::new_unchecked(TensorKind::Probabilities, 2, 2, 2, data).unwrap();
    match read_tensor(&write_tensor(&t)) {
        Err(IoError::NormalizationViolation { row: 0, col: 0, sum }) => assert!((sum - 0.9).abs() < 1e-6),
        other => panic!("expected NormalizationViolation, got {other:?}"),
    }
}

#[test]
fn overlay_examples() {
    let s = ClassSchema::default();
    let img = RgbImage::filled(1, 1, [200, 200, 200]);
    let sky = label_map(&[&[9]]);
    assert_eq!(render_overlay(&img, &sky, &s, 0.0).unwrap(), img);
    assert_eq!(render_overlay(&img, &sky, &s, 1.0).unwrap().pixel(0, 0), [0, 0, 255]);
    assert_eq!(render_overlay(&img, &sky, &s, 0.5).unwrap().pixel(0, 0), [100, 100, 228]);
    assert!(matches!(
        render_overlay(&img, &label_map(&[&[9, 9]]), &s, 0.5),
        Err(IoError::DimensionMismatch(_))
    ));
}

#[test]
fn rgb_image_round_trip() {
    let mut r = rng(9);
    let img = random_image(&mut r, 7, 5);
    assert_eq!(decode_rgb_image(&encode_rgb_image(&img).unwrap()).unwrap(), img);
}

fn map_strategy(classes: u8) -> impl Strategy<Value = LabelMap> {
    (1usize..24, 1usize..24).prop_flat_map(move |(w, h)| {
        prop::collection::vec(0..classes, w * h).prop_map(move |d| LabelMap::new(w, h, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_round_trip_in_both_modes(map in map_strategy(10)) {
        let s = ClassSchema::default();
        for mode in [MaskEncoding::RawValues, MaskEncoding::PaletteColor] {
            let png = encode_mask(&map, &s, mode).unwrap();
            let back = terraseg::tensor_io::decode_label_png(&png, &s).unwrap();
            prop_assert!(back.data().iter().all(|&v| v < 10));
            prop_assert_eq!(&back, &map);
        }
    }

    #[test]
    fn tensors_round_trip(
        (c, h, w) in (1usize..6, 1usize..8, 1usize..8),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let t = random_logits(&mut r, c, h, w, 50.0);
        let bytes = write_tensor(&t);
        prop_assert_eq!(read_tensor(&bytes).unwrap(), t.clone());
        prop_assert_eq!(write_tensor(&read_tensor(&bytes).unwrap()), bytes);
    }
}
