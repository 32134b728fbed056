use super::{IoError, LabelMap, RgbImage};
use crate::schema::ClassSchema;

/// Blends palette colours over an image: `round((1 - alpha) * image + alpha * palette)`
/// per channel, rounding half away from zero. Ignored pixels keep the image colour.
pub fn render_overlay(
    image: &RgbImage,
    map: &LabelMap,
    schema: &ClassSchema,
    alpha: f64,
) -> Result<RgbImage, IoError> {
    if image.width() != map.width() || image.height() != map.height() {
        return Err(IoError::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            image.width(),
            image.height(),
            map.width(),
            map.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(IoError::DimensionMismatch(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(image.data().len());
    for (px, &label) in image.data().chunks_exact(3).zip(map.data()) {
        match schema.class(label as usize) {
            Some(class) => {
                for (&base, &tint) in px.iter().zip(&class.color) {
                    let v = (1.0 - alpha) * base as f64 + alpha * tint as f64;
                    out.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
            None => out.extend_from_slice(px),
        }
    }
    RgbImage::new(image.width(), image.height(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_extremes() {
        let s = ClassSchema::default();
        let img = RgbImage::new(2, 1, vec![10, 20, 30, 40, 50, 60]).unwrap();
        let map = LabelMap::new(2, 1, vec![0, 9]).unwrap();
        assert_eq!(render_overlay(&img, &map, &s, 0.0).unwrap(), img);
        let full = render_overlay(&img, &map, &s, 1.0).unwrap();
        assert_eq!(full.pixel(0, 0), s.class(0).unwrap().color);
        assert_eq!(full.pixel(0, 1), s.class(9).unwrap().color);
    }

    #[test]
    fn half_alpha_rounds_half_away_from_zero() {
        let s = ClassSchema::default();
        assert_eq!(s.class(9).unwrap().color, [0, 0, 255]);
        let img = RgbImage::filled(1, 1, [200, 200, 200]);
        let map = LabelMap::new(1, 1, vec![9]).unwrap();
        // 0.5 * 200 + 0.5 * 255 = 227.5 -> 228
        assert_eq!(render_overlay(&img, &map, &s, 0.5).unwrap().pixel(0, 0), [100, 100, 228]);
    }

    #[test]
    fn shape_mismatch() {
        let s = ClassSchema::default();
        let img = RgbImage::filled(2, 2, [0, 0, 0]);
        let map = LabelMap::filled(1, 2, 0);
        assert!(matches!(
            render_overlay(&img, &map, &s, 0.5),
            Err(IoError::DimensionMismatch(_))
        ));
    }
}
