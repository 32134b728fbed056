//! Copy-paste of rare-class instances between samples. Instances are the
//! 8-connected components of each rare class in the donor mask.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentError, Sample};
use crate::schema::ClassSchema;
use crate::tensor_io::LabelMap;

const DEFAULT_RARE: [&str; 3] = ["Dry Bushes", "Flowers", "Logs"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CopyPasteConfig {
    pub rare_classes: Vec<u8>,
    pub probability: f64,
    pub max_instances: usize,
    pub min_instance_pixels: usize,
    pub seed: u64,
}

impl Default for CopyPasteConfig {
    fn default() -> Self {
        Self::for_schema(&ClassSchema::default())
    }
}

impl CopyPasteConfig {
    /// Defaults with Dry Bushes, Flowers and Logs as the rare classes when
    /// the schema has them.
    pub fn for_schema(schema: &ClassSchema) -> Self {
        CopyPasteConfig {
            rare_classes: DEFAULT_RARE
                .iter()
                .filter_map(|n| schema.index_of(n))
                .map(|i| i as u8)
                .collect(),
            probability: 0.5,
            max_instances: 3,
            min_instance_pixels: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(AugmentError::InvalidParameter(format!(
                "probability {} outside [0, 1]",
                self.probability
            )));
        }
        if self.max_instances == 0 || self.min_instance_pixels == 0 {
            return Err(AugmentError::InvalidParameter(
                "max_instances and min_instance_pixels must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub class: u8,
    /// `(row, col)` in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BoundingBox,
}

/// 8-connected components of the given classes with at least `min_pixels`
/// pixels, ordered by their first pixel in raster order.
pub fn connected_components(mask: &LabelMap, classes: &[u8], min_pixels: usize) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        let class = mask.data()[start];
        if seen[start] || !classes.contains(&class) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            pixels.push((r, c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if !seen[q] && mask.data()[q] == class {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if pixels.len() < min_pixels {
            continue;
        }
        pixels.sort_unstable();
        let bbox = BoundingBox {
            top: pixels.iter().map(|p| p.0).min().unwrap_or(0),
            left: pixels.iter().map(|p| p.1).min().unwrap_or(0),
            bottom: pixels.iter().map(|p| p.0).max().unwrap_or(0),
            right: pixels.iter().map(|p| p.1).max().unwrap_or(0),
        };
        out.push(Component { class, pixels, bbox });
    }
    out
}

/// Copies the component's image pixels and labels from `donor` into
/// `recipient`, moving its bounding-box top-left corner to `(row, col)`.
/// Pixels landing outside the recipient are dropped; returns how many were
/// written.
pub fn paste_component(donor: &Sample, component: &Component, recipient: &mut Sample, row: i64, col: i64) -> usize {
    let (h, w) = (recipient.height() as i64, recipient.width() as i64);
    let (image, mask) = recipient.parts_mut();
    let mut written = 0;
    for &(r, c) in &component.pixels {
        let dr = row + (r - component.bbox.top) as i64;
        let dc = col + (c - component.bbox.left) as i64;
        if dr < 0 || dc < 0 || dr >= h || dc >= w {
            continue;
        }
        let (dr, dc) = (dr as usize, dc as usize);
        image.set_pixel(dr, dc, donor.image().pixel(r, c));
        mask.set(dr, dc, component.class);
        written += 1;
    }
    written
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PastedInstance {
    pub class: u8,
    pub source_bbox: BoundingBox,
    pub component_pixels: usize,
    pub pasted_pixels: usize,
    /// Destination of the bounding-box top-left corner.
    pub offset: (i64, i64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopyPasteOutcome {
    pub sample: Sample,
    pub applied: bool,
    pub no_rare_instances: bool,
    pub instances: Vec<PastedInstance>,
}

/// With probability `cfg.probability` pastes `min(max_instances, n)`
/// distinct, uniformly chosen donor components at uniform offsets that keep
/// each bounding-box centre inside the recipient.
pub fn copy_paste(donor: &Sample, recipient: &Sample, cfg: &CopyPasteConfig) -> Result<CopyPasteOutcome, AugmentError> {
    cfg.validate()?;
    let unchanged = |no_rare_instances| CopyPasteOutcome {
        sample: recipient.clone(),
        applied: false,
        no_rare_instances,
        instances: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if rng.random::<f64>() >= cfg.probability {
        return Ok(unchanged(false));
    }
    let components = connected_components(donor.mask(), &cfg.rare_classes, cfg.min_instance_pixels);
    if components.is_empty() {
        return Ok(unchanged(true));
    }
    let count = cfg.max_instances.min(components.len());
    let chosen = index::sample(&mut rng, components.len(), count);
    let mut sample = recipient.clone();
    let (h, w) = (recipient.height() as i64, recipient.width() as i64);
    let mut instances = Vec::with_capacity(count);
    for i in chosen.iter() {
        let comp = &components[i];
        let half_h = (comp.bbox.height() as i64 - 1) / 2;
        let half_w = (comp.bbox.width() as i64 - 1) / 2;
        let row = rng.random_range(-half_h..h - half_h);
        let col = rng.random_range(-half_w..w - half_w);
        let pasted = paste_component(donor, comp, &mut sample, row, col);
        instances.push(PastedInstance {
            class: comp.class,
            source_bbox: comp.bbox,
            component_pixels: comp.pixels.len(),
            pasted_pixels: pasted,
            offset: (row, col),
        });
    }
    Ok(CopyPasteOutcome {
        sample,
        applied: true,
        no_rare_instances: false,
        instances,
    })
}
