//! Three-tier traversability costmaps built from label maps, ground-plane
//! projection and least-cost path planning.

mod planner;

pub use planner::{plan_path, suggest_waypoints, Cell, PathPlan};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::schema::{ClassSchema, Tier};
use crate::tensor_io::{decode_gray16_png, encode_gray16_png, IoError, LabelMap};
use crate::IGNORE_INDEX;

/// 16-bit PNG value of a blocked cell.
pub const BLOCKED_VALUE: u16 = u16::MAX;
const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CostmapError {
    #[error("class index {value} at ({row}, {col}) is outside the schema")]
    IndexOutOfRange { value: u8, row: usize, col: usize },
    #[error("invalid tier costs: {0}")]
    InvalidCosts(String),
    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),
    #[error("cell ({0}, {1}) is outside the map")]
    OutOfBounds(usize, usize),
    #[error("start cell is blocked")]
    StartBlocked,
    #[error("goal cell is blocked")]
    GoalBlocked,
    #[error("no path between start and goal")]
    NoPath,
    #[error("invalid costmap image: {0}")]
    Image(#[from] IoError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Cost per tier; Obstacle cells are always blocked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierCosts {
    pub safe: f64,
    pub caution: f64,
}

impl Default for TierCosts {
    fn default() -> Self {
        TierCosts {
            safe: 1.0,
            caution: 10.0,
        }
    }
}

impl TierCosts {
    pub fn validate(&self) -> Result<(), CostmapError> {
        if !(self.safe > 0.0 && self.safe < self.caution && self.caution.is_finite()) {
            return Err(CostmapError::InvalidCosts(format!(
                "need 0 < safe ({}) < caution ({})",
                self.safe, self.caution
            )));
        }
        if self.caution.round() >= BLOCKED_VALUE as f64 {
            return Err(CostmapError::InvalidCosts(format!(
                "caution cost {} does not fit a 16-bit costmap",
                self.caution
            )));
        }
        Ok(())
    }

    pub fn cost(&self, tier: Tier) -> Option<f64> {
        match tier {
            Tier::Safe => Some(self.safe),
            Tier::Caution => Some(self.caution),
            Tier::Obstacle => None,
        }
    }
}

/// Row-major grid of cell costs. `None` marks a blocked cell, which is
/// exactly the Obstacle tier.
#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    width: usize,
    height: usize,
    costs: Vec<Option<f64>>,
    tiers: Vec<Tier>,
    tier_costs: TierCosts,
}

impl Costmap {
    /// Builds a map directly from tiers.
    pub fn from_tiers(width: usize, height: usize, tiers: Vec<Tier>, tier_costs: TierCosts) -> Result<Self, CostmapError> {
        tier_costs.validate()?;
        if width == 0 || height == 0 || tiers.len() != width * height {
            return Err(CostmapError::InvalidParameter(format!(
                "{width}x{height} map with {} cells",
                tiers.len()
            )));
        }
        let costs = tiers.iter().map(|&t| tier_costs.cost(t)).collect();
        Ok(Costmap {
            width,
            height,
            costs,
            tiers,
            tier_costs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn tier_costs(&self) -> TierCosts {
        self.tier_costs
    }

    pub fn costs(&self) -> &[Option<f64>] {
        &self.costs
    }

    pub fn tiers(&self) -> &[Tier] {
        &self.tiers
    }

    pub fn cost(&self, row: usize, col: usize) -> Option<f64> {
        self.costs[row * self.width + col]
    }

    pub fn tier(&self, row: usize, col: usize) -> Tier {
        self.tiers[row * self.width + col]
    }

    pub fn is_blocked(&self, row: usize, col: usize) -> bool {
        self.cost(row, col).is_none()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.height && col < self.width
    }

    /// Minimum cost over traversable cells.
    pub fn min_cost(&self) -> Option<f64> {
        self.costs.iter().flatten().copied().reduce(f64::min)
    }

    /// 16-bit grayscale PNG: rounded cost per cell, [`BLOCKED_VALUE`] for
    /// blocked cells.
    pub fn to_png(&self) -> Result<Vec<u8>, CostmapError> {
        let values: Vec<u16> = self
            .costs
            .iter()
            .map(|c| c.map_or(BLOCKED_VALUE, |v| v.round() as u16))
            .collect();
        Ok(encode_gray16_png(&values, self.width, self.height)?)
    }

    /// Inverse of [`Costmap::to_png`] given the tier costs it was written with.
    pub fn from_png(bytes: &[u8], tier_costs: TierCosts) -> Result<Self, CostmapError> {
        tier_costs.validate()?;
        let (width, height, values) = decode_gray16_png(bytes)?;
        let safe = tier_costs.safe.round() as u16;
        let caution = tier_costs.caution.round() as u16;
        let mut tiers = Vec::with_capacity(values.len());
        for (i, &v) in values.iter().enumerate() {
            let tier = if v == BLOCKED_VALUE {
                Tier::Obstacle
            } else if v == safe {
                Tier::Safe
            } else if v == caution {
                Tier::Caution
            } else {
                return Err(CostmapError::InvalidParameter(format!(
                    "cell ({}, {}) holds {v}, which is neither the safe, caution nor blocked value",
                    i / width,
                    i % width
                )));
            };
            tiers.push(tier);
        }
        Costmap::from_tiers(width, height, tiers, tier_costs)
    }

    pub fn sidecar(&self, homography: Option<[[f64; 3]; 3]>) -> CostmapSidecar {
        let count = |t: Tier| self.tiers.iter().filter(|&&x| x == t).count();
        CostmapSidecar {
            width: self.width,
            height: self.height,
            costs: self.tier_costs,
            blocked_value: BLOCKED_VALUE,
            legend: TierLegend {
                safe: self.tier_costs.safe.round() as u16,
                caution: self.tier_costs.caution.round() as u16,
                obstacle: BLOCKED_VALUE,
            },
            cell_counts: TierCounts {
                safe: count(Tier::Safe),
                caution: count(Tier::Caution),
                obstacle: count(Tier::Obstacle),
            },
            homography,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierLegend {
    pub safe: u16,
    pub caution: u16,
    pub obstacle: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierCounts {
    pub safe: usize,
    pub caution: usize,
    pub obstacle: usize,
}

/// JSON description accompanying a costmap PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostmapSidecar {
    pub width: usize,
    pub height: usize,
    pub costs: TierCosts,
    pub blocked_value: u16,
    pub legend: TierLegend,
    pub cell_counts: TierCounts,
    pub homography: Option<[[f64; 3]; 3]>,
}

/// Looks up each pixel's tier in the schema. Ignored pixels are treated as
/// obstacles.
pub fn to_costmap(mask: &LabelMap, schema: &ClassSchema, costs: TierCosts) -> Result<Costmap, CostmapError> {
    costs.validate()?;
    let mut tiers = Vec::with_capacity(mask.len());
    for (i, &v) in mask.data().iter().enumerate() {
        let tier = if v == IGNORE_INDEX {
            Tier::Obstacle
        } else {
            schema.tier(v as usize).ok_or(CostmapError::IndexOutOfRange {
                value: v,
                row: i / mask.width(),
                col: i % mask.width(),
            })?
        };
        tiers.push(tier);
    }
    Costmap::from_tiers(mask.width(), mask.height(), tiers, costs)
}

/// Warps `map` into an `out_size = (height, width)` grid. The homography
/// maps source `(col, row, 1)` to destination coordinates; every output
/// cell samples the nearest source cell under the inverse mapping.
pub fn project_ground(map: &Costmap, homography: &[[f64; 3]; 3], out_size: (usize, usize)) -> Result<Costmap, CostmapError> {
    let (oh, ow) = out_size;
    if oh == 0 || ow == 0 {
        return Err(CostmapError::InvalidParameter("output size must be positive".into()));
    }
    let h = Matrix3::from_fn(|r, c| homography[r][c]);
    let det = h.determinant();
    if det.is_nan() || det.abs() <= SINGULAR_DET {
        return Err(CostmapError::SingularHomography(det.abs()));
    }
    let inv = h.try_inverse().ok_or(CostmapError::SingularHomography(det.abs()))?;
    let mut tiers = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let src = inv * Vector3::new(c as f64, r as f64, 1.0);
            let tier = if src.z.abs() <= f64::EPSILON {
                Tier::Obstacle
            } else {
                let x = (src.x / src.z).round();
                let y = (src.y / src.z).round();
                if x >= 0.0 && y >= 0.0 && x < map.width as f64 && y < map.height as f64 {
                    map.tier(y as usize, x as usize)
                } else {
                    Tier::Obstacle
                }
            };
            tiers.push(tier);
        }
    }
    Costmap::from_tiers(ow, oh, tiers, map.tier_costs)
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn schema() -> ClassSchema {
        ClassSchema::default()
    }

    fn idx(name: &str) -> u8 {
        schema().index_of(name).unwrap() as u8
    }

    #[test]
    fn tier_lookup() {
        let mask = LabelMap::new(2, 2, vec![idx("Landscape"), idx("Flowers"), idx("Logs"), idx("Sky")]).unwrap();
        let map = to_costmap(&mask, &schema(), TierCosts::default()).unwrap();
        assert_eq!(map.costs(), &[Some(1.0), Some(10.0), None, Some(1.0)]);
        assert_eq!(map.tiers(), &[Tier::Safe, Tier::Caution, Tier::Obstacle, Tier::Safe]);
        let rocks = to_costmap(&LabelMap::filled(3, 3, idx("Rocks")), &schema(), TierCosts::default()).unwrap();
        assert!(rocks.costs().iter().all(Option::is_none));
        let ignored = to_costmap(&LabelMap::filled(1, 1, IGNORE_INDEX), &schema(), TierCosts::default()).unwrap();
        assert!(ignored.is_blocked(0, 0));
    }

    #[test]
    fn rejects_bad_input() {
        let mask = LabelMap::filled(1, 1, 10);
        assert!(matches!(
            to_costmap(&mask, &schema(), TierCosts::default()),
            Err(CostmapError::IndexOutOfRange { value: 10, .. })
        ));
        let bad = TierCosts { safe: 5.0, caution: 2.0 };
        assert!(matches!(
            to_costmap(&LabelMap::filled(1, 1, 0), &schema(), bad),
            Err(CostmapError::InvalidCosts(_))
        ));
    }

    #[test]
    fn identity_and_translation() {
        let mask = LabelMap::new(4, 2, vec![8, 5, 6, 9, 2, 1, 0, 8]).unwrap();
        let map = to_costmap(&mask, &schema(), TierCosts::default()).unwrap();
        assert_eq!(project_ground(&map, &IDENTITY, (2, 4)).unwrap(), map);
        let shift = [[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let moved = project_ground(&map, &shift, (2, 4)).unwrap();
        for r in 0..2 {
            assert!(moved.is_blocked(r, 0) && moved.is_blocked(r, 1));
            assert_eq!(moved.tier(r, 2), map.tier(r, 0));
            assert_eq!(moved.tier(r, 3), map.tier(r, 1));
        }
        let singular = [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            project_ground(&map, &singular, (2, 4)),
            Err(CostmapError::SingularHomography(_))
        ));
    }

    #[test]
    fn png_round_trip() {
        let mask = LabelMap::new(3, 1, vec![8, 5, 6]).unwrap();
        let map = to_costmap(&mask, &schema(), TierCosts::default()).unwrap();
        let png = map.to_png().unwrap();
        let (_, _, raw) = decode_gray16_png(&png).unwrap();
        assert_eq!(raw, vec![1, 10, BLOCKED_VALUE]);
        assert_eq!(Costmap::from_png(&png, TierCosts::default()).unwrap(), map);
        let side = map.sidecar(None);
        assert_eq!(side.cell_counts.obstacle, 1);
    }
}
