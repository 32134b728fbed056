//! Fully-connected CRF refinement by mean-field iteration.
//!
//! Unary potentials are `-ln p` (probabilities clamped at 1e-8). The pairwise
//! term is a Potts model over two Gaussian kernels: a spatial smoothness
//! kernel and a bilateral appearance kernel over position and RGB. With the
//! Potts compatibility, each update reduces to
//! `Q_l(i) ∝ p_l(i) · exp(m_l(i))` where `m_l(i) = Σ_{j≠i} k(i, j) Q_l(j)`.
//!
//! Message passing uses a separable spatial filter and, for the bilateral
//! kernel, an exact all-pairs sum up to [`EXACT_PIXEL_LIMIT`] pixels and a
//! permutohedral lattice above it.

use serde::{Deserialize, Serialize};

use super::lattice::PermutohedralLattice;
use super::{require_probabilities, PostprocessError};
use crate::tensor_io::{ProbTensor, RgbImage, TensorKind};

/// Largest image (in pixels) refined with the exact bilateral sum under
/// [`CrfBackend::Auto`].
pub const EXACT_PIXEL_LIMIT: usize = 64 * 64;

const PROB_FLOOR: f64 = 1e-8;
/// Spatial kernel support, in standard deviations.
const SPATIAL_RADIUS_SIGMAS: f64 = 8.0;
const CALIBRATION_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfParams {
    pub iterations: usize,
    pub w_smooth: f64,
    pub theta_gamma: f64,
    pub w_bilateral: f64,
    pub theta_alpha: f64,
    pub theta_beta: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            iterations: 5,
            w_smooth: 3.0,
            theta_gamma: 3.0,
            w_bilateral: 10.0,
            theta_alpha: 80.0,
            theta_beta: 13.0,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<(), PostprocessError> {
        let bad = |what: &str| Err(PostprocessError::InvalidParameter(what.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.w_smooth >= 0.0 && self.w_bilateral >= 0.0) {
            return bad("kernel weights must be non-negative");
        }
        if !(self.theta_gamma > 0.0 && self.theta_alpha > 0.0 && self.theta_beta > 0.0) {
            return bad("kernel widths must be positive");
        }
        if ![self.w_smooth, self.w_bilateral, self.theta_gamma, self.theta_alpha, self.theta_beta]
            .iter()
            .all(|v| v.is_finite())
        {
            return bad("parameters must be finite");
        }
        Ok(())
    }
}

/// How the bilateral message is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrfBackend {
    /// Exact up to [`EXACT_PIXEL_LIMIT`] pixels, lattice above.
    #[default]
    Auto,
    Exact,
    Lattice,
}

pub fn crf_refine(probs: &ProbTensor, image: &RgbImage, params: &CrfParams) -> Result<ProbTensor, PostprocessError> {
    crf_refine_with(probs, image, params, CrfBackend::Auto)
}

pub fn crf_refine_with(
    probs: &ProbTensor,
    image: &RgbImage,
    params: &CrfParams,
    backend: CrfBackend,
) -> Result<ProbTensor, PostprocessError> {
    require_probabilities(probs)?;
    params.validate()?;
    if probs.height() != image.height() || probs.width() != image.width() {
        return Err(PostprocessError::DimensionMismatch(format!(
            "probabilities {}x{} vs image {}x{}",
            probs.height(),
            probs.width(),
            image.height(),
            image.width()
        )));
    }
    let c = probs.channels();
    let n = probs.plane_len();

    // Pixel-major working buffers.
    let mut log_unary = vec![0f64; n * c];
    let mut q = vec![0f64; n * c];
    for i in 0..n {
        let mut sum = 0.0;
        for l in 0..c {
            let p = (probs.data()[l * n + i] as f64).max(PROB_FLOOR);
            log_unary[i * c + l] = p.ln();
            q[i * c + l] = p;
            sum += p;
        }
        q[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= sum);
    }

    let filter = MessageFilter::new(image, params, backend);
    for _ in 0..params.iterations {
        let messages = filter.messages(&q, c);
        for i in 0..n {
            let row = i * c..(i + 1) * c;
            let scores: Vec<f64> = log_unary[row.clone()]
                .iter()
                .zip(&messages[row.clone()])
                .map(|(u, m)| u + m)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (slot, s) in q[row.clone()].iter_mut().zip(&scores) {
                *slot = (s - max).exp();
                sum += *slot;
            }
            q[row].iter_mut().for_each(|v| *v /= sum);
        }
    }

    let mut out = vec![0f32; n * c];
    for i in 0..n {
        for l in 0..c {
            out[l * n + i] = q[i * c + l] as f32;
        }
    }
    Ok(ProbTensor::new_unchecked(TensorKind::Probabilities, c, probs.height(), probs.width(), out)
        .expect("shape carried over"))
}

enum Bilateral {
    None,
    Exact { features: Vec<[f64; 5]> },
    Lattice { lattice: PermutohedralLattice, scale: f64 },
}

struct MessageFilter {
    width: usize,
    height: usize,
    w_smooth: f64,
    kernel_x: Vec<f64>,
    kernel_y: Vec<f64>,
    w_bilateral: f64,
    bilateral: Bilateral,
}

fn gaussian_taps(theta: f64, len: usize) -> Vec<f64> {
    let radius = ((SPATIAL_RADIUS_SIGMAS * theta).ceil() as usize).min(len.saturating_sub(1));
    (0..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * theta * theta)).exp())
        .collect()
}

fn bilateral_features(image: &RgbImage, params: &CrfParams) -> Vec<[f64; 5]> {
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let [red, green, blue] = image.pixel(r, c);
            out.push([
                c as f64 / params.theta_alpha,
                r as f64 / params.theta_alpha,
                red as f64 / params.theta_beta,
                green as f64 / params.theta_beta,
                blue as f64 / params.theta_beta,
            ]);
        }
    }
    out
}

#[inline]
fn bilateral_kernel(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d2).exp()
}

impl MessageFilter {
    fn new(image: &RgbImage, params: &CrfParams, backend: CrfBackend) -> Self {
        let (width, height) = (image.width(), image.height());
        let n = width * height;
        let bilateral = if params.w_bilateral == 0.0 {
            Bilateral::None
        } else {
            let features = bilateral_features(image, params);
            let use_exact = match backend {
                CrfBackend::Exact => true,
                CrfBackend::Lattice => false,
                CrfBackend::Auto => n <= EXACT_PIXEL_LIMIT,
            };
            if use_exact {
                Bilateral::Exact { features }
            } else {
                let flat: Vec<f64> = features.iter().flatten().copied().collect();
                let lattice = PermutohedralLattice::new(&flat, 5);
                let scale = lattice_scale(&lattice, &features);
                Bilateral::Lattice { lattice, scale }
            }
        };
        MessageFilter {
            width,
            height,
            w_smooth: params.w_smooth,
            kernel_x: gaussian_taps(params.theta_gamma, width),
            kernel_y: gaussian_taps(params.theta_gamma, height),
            w_bilateral: params.w_bilateral,
            bilateral,
        }
    }

    /// `m_l(i) = Σ_{j≠i} k(i, j) Q_l(j)`, pixel-major.
    fn messages(&self, q: &[f64], c: usize) -> Vec<f64> {
        let mut out = vec![0f64; q.len()];
        if self.w_smooth > 0.0 {
            let smooth = self.spatial(q, c);
            for ((o, s), qv) in out.iter_mut().zip(&smooth).zip(q) {
                // The kernel is 1 at zero offset; drop the self term.
                *o += self.w_smooth * (s - qv);
            }
        }
        match &self.bilateral {
            Bilateral::None => {}
            Bilateral::Exact { features } => {
                let n = features.len();
                let mut acc = vec![0f64; q.len()];
                for i in 0..n {
                    let fi = &features[i];
                    for j in (i + 1)..n {
                        let k = bilateral_kernel(fi, &features[j]);
                        for l in 0..c {
                            acc[i * c + l] += k * q[j * c + l];
                            acc[j * c + l] += k * q[i * c + l];
                        }
                    }
                }
                for (o, a) in out.iter_mut().zip(&acc) {
                    *o += self.w_bilateral * a;
                }
            }
            Bilateral::Lattice { lattice, scale } => {
                let filtered = lattice.filter(q, c);
                for ((o, f), qv) in out.iter_mut().zip(&filtered).zip(q) {
                    *o += self.w_bilateral * (scale * f - qv).max(0.0);
                }
            }
        }
        out
    }

    /// Separable Gaussian blur including the centre tap.
    fn spatial(&self, q: &[f64], c: usize) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut rows = vec![0f64; q.len()];
        for r in 0..h {
            for x in 0..w {
                let dst = (r * w + x) * c;
                for (d, &k) in self.kernel_x.iter().enumerate() {
                    if d == 0 {
                        for l in 0..c {
                            rows[dst + l] += k * q[dst + l];
                        }
                        continue;
                    }
                    if x >= d {
                        let src = (r * w + x - d) * c;
                        for l in 0..c {
                            rows[dst + l] += k * q[src + l];
                        }
                    }
                    if x + d < w {
                        let src = (r * w + x + d) * c;
                        for l in 0..c {
                            rows[dst + l] += k * q[src + l];
                        }
                    }
                }
            }
        }
        let mut out = vec![0f64; q.len()];
        for y in 0..h {
            for x in 0..w {
                let dst = (y * w + x) * c;
                for (d, &k) in self.kernel_y.iter().enumerate() {
                    if d == 0 {
                        for l in 0..c {
                            out[dst + l] += k * rows[dst + l];
                        }
                        continue;
                    }
                    if y >= d {
                        let src = ((y - d) * w + x) * c;
                        for l in 0..c {
                            out[dst + l] += k * rows[src + l];
                        }
                    }
                    if y + d < h {
                        let src = ((y + d) * w + x) * c;
                        for l in 0..c {
                            out[dst + l] += k * rows[src + l];
                        }
                    }
                }
            }
        }
        out
    }
}

/// Ratio between exact kernel mass and lattice-filtered mass, measured on
/// an evenly spaced pixel sample.
fn lattice_scale(lattice: &PermutohedralLattice, features: &[[f64; 5]]) -> f64 {
    let n = features.len();
    let stride = (n / CALIBRATION_SAMPLES).max(1);
    let ones = vec![1.0; n];
    let filtered = lattice.filter(&ones, 1);
    let (mut exact, mut approx) = (0.0, 0.0);
    for s in (0..n).step_by(stride) {
        exact += features.iter().map(|f| bilateral_kernel(&features[s], f)).sum::<f64>();
        approx += filtered[s];
    }
    if approx > 0.0 {
        exact / approx
    } else {
        1.0
    }
}
