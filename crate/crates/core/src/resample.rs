//! Plane resampling helpers shared by augmentation and TTA.
//!
//! Pixel centres sit at integer coordinates; output pixel `x` samples the
//! source at `(x + 0.5) * src / dst - 0.5` (half-pixel convention).

/// Bilinear sample of a row-major plane, coordinates clamped to the edges.
#[inline]
pub fn bilinear(plane: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |r: usize, c: usize| plane[r * width + c];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Source coordinate sampled by destination index `dst` when mapping a
/// span of `src_len` pixels starting at `src_origin` onto `dst_len` pixels.
#[inline]
pub fn source_coord(dst: usize, src_origin: f64, src_len: f64, dst_len: usize) -> f64 {
    src_origin + (dst as f64 + 0.5) * src_len / dst_len as f64 - 0.5
}

pub fn resize_plane_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dw * dh);
    for r in 0..dh {
        let y = source_coord(r, 0.0, sh as f64, dh);
        for c in 0..dw {
            let x = source_coord(c, 0.0, sw as f64, dw);
            out.push(bilinear(src, sw, sh, x, y));
        }
    }
    out
}
