//! Byte-level operations shared by the command line and the HTTP service.
//!
//! Both front ends decode their inputs into the same byte buffers and call
//! these functions, so identical inputs produce identical outputs.

use std::fmt::Debug;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentError;
use crate::canonical::to_canonical_json;
use crate::costmap::{
    plan_path, project_ground, suggest_waypoints, to_costmap, Cell, Costmap, CostmapError, CostmapSidecar, PathPlan,
    TierCosts,
};
use crate::loss::{combined_loss, LossBreakdown, LossConfig, LossError};
use crate::metrics::{finalize, ConfusionAccumulator, ExclusionSet, MetricsError, MetricsReport};
use crate::postprocess::{
    crf_refine_with, uncertainty_with, CrfBackend, CrfParams, DifficultyBlend, PostprocessError, UncertaintyReport,
    DEFAULT_ENTROPY_THRESHOLD,
};
use crate::schema::{ClassSchema, SchemaError};
use crate::tensor_io::{decode_label_png, decode_rgb_image, encode_heatmap, read_tensor, write_tensor, IoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad input content or arguments.
    Validation,
    /// Filesystem or network failure.
    Io,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct AppError {
    pub kind: ErrorKind,
    pub code: String,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a AppError,
}

impl Serialize for AppError {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("AppError", 3)?;
        st.serialize_field("kind", &self.kind)?;
        st.serialize_field("code", &self.code)?;
        st.serialize_field("message", &self.message)?;
        st.end()
    }
}

impl AppError {
    pub fn validation(code: &str, message: impl Into<String>) -> Self {
        AppError {
            kind: ErrorKind::Validation,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: &std::io::Error) -> Self {
        AppError {
            kind: ErrorKind::Io,
            code: "Io".to_string(),
            message: format!("{}: {err}", path.display()),
        }
    }

    /// Canonical `{"error": {...}}` document.
    pub fn to_json(&self) -> String {
        to_canonical_json(&ErrorBody { error: self })
    }

    fn from_debug<E: Debug + std::fmt::Display>(err: &E) -> Self {
        let debug = format!("{err:?}");
        let code: String = debug.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
        AppError::validation(&code, err.to_string())
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {
        $(impl From<$t> for AppError {
            fn from(e: $t) -> Self {
                AppError::from_debug(&e)
            }
        })*
    };
}

validation_from!(IoError, MetricsError, LossError, PostprocessError, AugmentError, CostmapError);

impl From<SchemaError> for AppError {
    fn from(e: SchemaError) -> Self {
        let mut err = AppError::from_debug(&e);
        if matches!(e, SchemaError::Io(_)) {
            err.kind = ErrorKind::Io;
        }
        err
    }
}

pub fn read_input(path: &Path) -> Result<Vec<u8>, AppError> {
    std::fs::read(path).map_err(|e| AppError::io(path, &e))
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(what: &str, bytes: &[u8]) -> Result<T, AppError> {
    serde_json::from_slice(bytes).map_err(|e| AppError::validation("InvalidJson", format!("{what}: {e}")))
}

/// Adds one ground-truth/prediction PNG pair to `acc`.
pub fn accumulate_pair(acc: &mut ConfusionAccumulator, gt: &[u8], pred: &[u8], schema: &ClassSchema) -> Result<(), AppError> {
    let gt = decode_label_png(gt, schema)?;
    let pred = decode_label_png(pred, schema)?;
    acc.accumulate(&gt, &pred)?;
    Ok(())
}

pub fn metrics_report(
    acc: &ConfusionAccumulator,
    schema: &ClassSchema,
    exclusions: &[ExclusionSet],
    top_k: usize,
) -> Result<MetricsReport, AppError> {
    let mut report = finalize(acc, schema, exclusions)?;
    report.set_top_confusions(acc, schema, top_k);
    Ok(report)
}

pub fn loss_breakdown(logits: &[u8], mask: &[u8], schema: &ClassSchema, cfg: &LossConfig) -> Result<LossBreakdown, AppError> {
    let logits = read_tensor(logits)?;
    let gt = decode_label_png(mask, schema)?;
    Ok(combined_loss(&logits, &gt, schema, cfg)?)
}

/// Refines a TST1 probability tensor and returns the encoded result.
pub fn crf_bytes(probs: &[u8], image: &[u8], params: &CrfParams, backend: CrfBackend) -> Result<Vec<u8>, AppError> {
    let probs = read_tensor(probs)?;
    let image = decode_rgb_image(image)?;
    let refined = crf_refine_with(&probs, &image, params, backend)?;
    Ok(write_tensor(&refined))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintyParams {
    pub threshold: f64,
    pub blend: DifficultyBlend,
}

impl Default for UncertaintyParams {
    fn default() -> Self {
        UncertaintyParams {
            threshold: DEFAULT_ENTROPY_THRESHOLD,
            blend: DifficultyBlend::default(),
        }
    }
}

pub struct UncertaintyOutput {
    pub report: UncertaintyReport,
    /// Normalised entropy as an 8-bit heatmap (white = ln C).
    pub entropy_png: Vec<u8>,
}

pub fn uncertainty_outputs(probs: &[u8], params: &UncertaintyParams) -> Result<UncertaintyOutput, AppError> {
    let probs = read_tensor(probs)?;
    let report = uncertainty_with(&probs, params.threshold, params.blend)?;
    let max = if report.classes > 1 { (report.classes as f64).ln() } else { 0.0 };
    let entropy_png = encode_heatmap(&report.entropy_map, report.width, report.height, max)?;
    Ok(UncertaintyOutput { report, entropy_png })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CostmapParams {
    pub costs: TierCosts,
    /// Maps source `(col, row, 1)` to the output grid.
    pub homography: Option<[[f64; 3]; 3]>,
    /// `(height, width)` of the projected grid; the mask size when absent.
    pub out_size: Option<(usize, usize)>,
}

pub struct CostmapOutput {
    pub costmap: Costmap,
    pub png: Vec<u8>,
    pub sidecar: CostmapSidecar,
}

pub fn costmap_outputs(mask: &[u8], schema: &ClassSchema, params: &CostmapParams) -> Result<CostmapOutput, AppError> {
    let mask = decode_label_png(mask, schema)?;
    let mut costmap = to_costmap(&mask, schema, params.costs)?;
    if let Some(h) = &params.homography {
        let size = params.out_size.unwrap_or((mask.height(), mask.width()));
        costmap = project_ground(&costmap, h, size)?;
    } else if params.out_size.is_some() {
        return Err(AppError::validation("InvalidParameter", "out_size requires a homography"));
    }
    let png = costmap.to_png()?;
    let sidecar = costmap.sidecar(params.homography);
    Ok(CostmapOutput { costmap, png, sidecar })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub start: Cell,
    pub goal: Cell,
    #[serde(default)]
    pub clearance: usize,
    /// Tier costs the costmap was written with; defaults when absent.
    #[serde(default)]
    pub costs: Option<TierCosts>,
}

pub fn plan_from_png(costmap_png: &[u8], req: &PlanRequest) -> Result<PathPlan, AppError> {
    let map = Costmap::from_png(costmap_png, req.costs.unwrap_or_default())?;
    let plan = plan_path(&map, req.start, req.goal)?;
    if req.clearance == 0 {
        return Ok(plan);
    }
    Ok(suggest_waypoints(&plan, &map, req.clearance)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes_come_from_variants() {
        let err: AppError = CostmapError::GoalBlocked.into();
        assert_eq!(err.code, "GoalBlocked");
        assert_eq!(err.kind, ErrorKind::Validation);
        let err: AppError = IoError::UnknownRawValue { value: 7, row: 0, col: 1 }.into();
        assert_eq!(err.code, "UnknownRawValue");
        assert!(err.to_json().contains("\"kind\": \"validation\""));
    }
}
