//! C ABI over the `terraseg` toolkit.
//!
//! Every entry point returns a [`TsStatus`]. On failure the thread-local
//! last error holds a JSON document `{"error": {"kind", "code", "message"}}`
//! readable through [`ts_last_error`]. Byte results are handed out as
//! [`TsBuffer`]s that the caller releases with [`ts_buffer_free`]; handles
//! are released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::Deserialize;
use terraseg::canonical::to_canonical_json;
use terraseg::metrics::{ConfusionAccumulator, ExclusionSet};
use terraseg::ops::{self, AppError, CostmapParams, ErrorKind, PlanRequest, UncertaintyParams};
use terraseg::postprocess::{CrfBackend, CrfParams};
use terraseg::ClassSchema;

/// Result code of every `ts_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Input content or parameters were rejected.
    Invalid = 2,
    /// Filesystem failure.
    Io = 3,
    /// A bug inside the library; the handle involved should be discarded.
    Panic = 4,
}

/// Owned byte buffer returned by the library.
#[repr(C)]
#[derive(Debug)]
pub struct TsBuffer {
    pub data: *mut u8,
    pub len: usize,
}

impl TsBuffer {
    fn from_vec(bytes: Vec<u8>) -> Self {
        let boxed = bytes.into_boxed_slice();
        let len = boxed.len();
        TsBuffer {
            data: Box::into_raw(boxed).cast(),
            len,
        }
    }
}

/// Opaque class schema.
pub struct TsSchema(ClassSchema);

/// Opaque streaming confusion accumulator bound to a schema.
pub struct TsAccumulator {
    schema: ClassSchema,
    acc: ConfusionAccumulator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(err: &AppError) {
    let text = CString::new(err.to_json()).unwrap_or_else(|_| c"{\"error\":{}}".to_owned());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &AppError) -> TsStatus {
    match err.kind {
        ErrorKind::Validation => TsStatus::Invalid,
        ErrorKind::Io => TsStatus::Io,
    }
}

fn null(what: &str) -> AppError {
    AppError::validation("NullArgument", format!("`{what}` is null"))
}

/// Runs `f`, translating errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), AppError>>(f: F) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsStatus::Ok,
        Ok(Err(err)) => {
            let status = if err.code == "NullArgument" {
                TsStatus::NullArgument
            } else {
                status_of(&err)
            };
            set_last_error(&err);
            status
        }
        Err(_) => {
            set_last_error(&AppError::validation("Panic", "internal panic"));
            TsStatus::Panic
        }
    }
}

unsafe fn bytes<'a>(ptr: *const u8, len: usize, what: &str) -> Result<&'a [u8], AppError> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Optional NUL-terminated JSON; null yields `T::default()`.
unsafe fn json_or_default<T: Default + for<'de> Deserialize<'de>>(ptr: *const c_char, what: &str) -> Result<T, AppError> {
    if ptr.is_null() {
        return Ok(T::default());
    }
    ops::parse_json(what, CStr::from_ptr(ptr).to_bytes())
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, AppError> {
    ptr.as_mut().ok_or_else(|| null(what))
}

/// Last error on this thread as JSON, or null when none was recorded.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a buffer returned by the library. Null buffers are ignored.
///
/// # Safety
/// `buffer` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ts_buffer_free(buffer: TsBuffer) {
    if !buffer.data.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(buffer.data, buffer.len)));
    }
}

/// Built-in ten-class terrain schema.
///
/// # Safety
/// `out_schema` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_schema_default(out_schema: *mut *mut TsSchema) -> TsStatus {
    guard(|| {
        *out(out_schema, "out_schema")? = Box::into_raw(Box::new(TsSchema(ClassSchema::default())));
        Ok(())
    })
}

/// Parses a schema from NUL-terminated JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out_schema` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_schema_from_json(json: *const c_char, out_schema: *mut *mut TsSchema) -> TsStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| AppError::validation("Parse", "schema JSON is not UTF-8"))?;
        let schema = ClassSchema::from_json(text)?;
        *out(out_schema, "out_schema")? = Box::into_raw(Box::new(TsSchema(schema)));
        Ok(())
    })
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `schema` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_schema_len(schema: *const TsSchema) -> usize {
    schema.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `schema` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_schema_free(schema: *mut TsSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Empty accumulator sized for `schema`; the schema is copied.
///
/// # Safety
/// `schema` must be a live handle; `out_acc` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_accumulator_new(schema: *const TsSchema, out_acc: *mut *mut TsAccumulator) -> TsStatus {
    guard(|| {
        let schema = schema.as_ref().ok_or_else(|| null("schema"))?.0.clone();
        let acc = ConfusionAccumulator::new(schema.len());
        *out(out_acc, "out_acc")? = Box::into_raw(Box::new(TsAccumulator { schema, acc }));
        Ok(())
    })
}

/// Adds one ground-truth/prediction pair of label PNGs.
///
/// # Safety
/// `acc` must be a live handle and each pointer/length pair a readable range.
#[no_mangle]
pub unsafe extern "C" fn ts_accumulator_add_png(
    acc: *mut TsAccumulator,
    gt_png: *const u8,
    gt_len: usize,
    pred_png: *const u8,
    pred_len: usize,
) -> TsStatus {
    guard(|| {
        let acc = out(acc, "acc")?;
        let gt = bytes(gt_png, gt_len, "gt_png")?;
        let pred = bytes(pred_png, pred_len, "pred_png")?;
        ops::accumulate_pair(&mut acc.acc, gt, pred, &acc.schema)
    })
}

/// Folds `src` into `dst`; both must share a class count.
///
/// # Safety
/// Both handles must be live and distinct.
#[no_mangle]
pub unsafe extern "C" fn ts_accumulator_merge(dst: *mut TsAccumulator, src: *const TsAccumulator) -> TsStatus {
    guard(|| {
        let src = src.as_ref().ok_or_else(|| null("src"))?;
        Ok(out(dst, "dst")?.acc.merge(&src.acc)?)
    })
}

/// Pixels counted so far, or 0 for a null handle.
///
/// # Safety
/// `acc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_accumulator_pixels(acc: *const TsAccumulator) -> u64 {
    acc.as_ref().map_or(0, |a| a.acc.pixels_seen())
}

/// Metrics report as canonical JSON. `exclude_json` is an optional list of
/// class-name lists; null selects the default exclusion sets.
///
/// # Safety
/// `acc` must be a live handle, `exclude_json` null or NUL-terminated, and
/// `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_accumulator_report_json(
    acc: *const TsAccumulator,
    exclude_json: *const c_char,
    top_k: usize,
    out_json: *mut TsBuffer,
) -> TsStatus {
    guard(|| {
        let acc = acc.as_ref().ok_or_else(|| null("acc"))?;
        let sets: Option<Vec<Vec<String>>> = json_or_default(exclude_json, "exclude")?;
        let exclusions = match sets {
            None => ExclusionSet::defaults(&acc.schema),
            Some(sets) => sets
                .iter()
                .map(|names| ExclusionSet::from_names(&acc.schema, names))
                .collect::<Result<_, _>>()?,
        };
        let report = ops::metrics_report(&acc.acc, &acc.schema, &exclusions, top_k)?;
        *out(out_json, "out_json")? = TsBuffer::from_vec(to_canonical_json(&report).into_bytes());
        Ok(())
    })
}

/// # Safety
/// `acc` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_accumulator_free(acc: *mut TsAccumulator) {
    if !acc.is_null() {
        drop(Box::from_raw(acc));
    }
}

/// Combined loss breakdown for a TST1 logit tensor and a label PNG.
/// `config_json` may be null for the default weighting.
///
/// # Safety
/// `schema` must be live, byte ranges readable, `config_json` null or
/// NUL-terminated, and `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn ts_loss_json(
    schema: *const TsSchema,
    logits: *const u8,
    logits_len: usize,
    mask_png: *const u8,
    mask_len: usize,
    config_json: *const c_char,
    out_json: *mut TsBuffer,
) -> TsStatus {
    guard(|| {
        let schema = &schema.as_ref().ok_or_else(|| null("schema"))?.0;
        let cfg = json_or_default(config_json, "config")?;
        let breakdown = ops::loss_breakdown(
            bytes(logits, logits_len, "logits")?,
            bytes(mask_png, mask_len, "mask_png")?,
            schema,
            &cfg,
        )?;
        *out(out_json, "out_json")? = TsBuffer::from_vec(to_canonical_json(&breakdown).into_bytes());
        Ok(())
    })
}

/// Uncertainty report JSON plus an entropy heatmap PNG for a TST1
/// probability tensor. Either output pointer may be null to skip it.
///
/// # Safety
/// Byte range readable, `params_json` null or NUL-terminated, outputs null
/// or valid.
#[no_mangle]
pub unsafe extern "C" fn ts_uncertainty(
    probs: *const u8,
    probs_len: usize,
    params_json: *const c_char,
    out_json: *mut TsBuffer,
    out_png: *mut TsBuffer,
) -> TsStatus {
    guard(|| {
        let params: UncertaintyParams = json_or_default(params_json, "params")?;
        let result = ops::uncertainty_outputs(bytes(probs, probs_len, "probs")?, &params)?;
        if let Some(o) = out_json.as_mut() {
            *o = TsBuffer::from_vec(to_canonical_json(&result.report).into_bytes());
        }
        if let Some(o) = out_png.as_mut() {
            *o = TsBuffer::from_vec(result.entropy_png);
        }
        Ok(())
    })
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct CrfRequest {
    #[serde(flatten)]
    params: CrfParams,
    backend: CrfBackend,
}

/// Dense-CRF refinement of a TST1 probability tensor against an RGB PNG;
/// writes the refined TST1 tensor.
///
/// # Safety
/// Byte ranges readable, `params_json` null or NUL-terminated, `out_tensor`
/// valid.
#[no_mangle]
pub unsafe extern "C" fn ts_crf(
    probs: *const u8,
    probs_len: usize,
    image_png: *const u8,
    image_len: usize,
    params_json: *const c_char,
    out_tensor: *mut TsBuffer,
) -> TsStatus {
    guard(|| {
        let req: CrfRequest = json_or_default(params_json, "params")?;
        let refined = ops::crf_bytes(
            bytes(probs, probs_len, "probs")?,
            bytes(image_png, image_len, "image_png")?,
            &req.params,
            req.backend,
        )?;
        *out(out_tensor, "out_tensor")? = TsBuffer::from_vec(refined);
        Ok(())
    })
}

/// Traversability costmap PNG and sidecar JSON for a label PNG.
///
/// # Safety
/// `schema` live, byte range readable, `params_json` null or
/// NUL-terminated, outputs null or valid.
#[no_mangle]
pub unsafe extern "C" fn ts_costmap(
    schema: *const TsSchema,
    mask_png: *const u8,
    mask_len: usize,
    params_json: *const c_char,
    out_png: *mut TsBuffer,
    out_sidecar: *mut TsBuffer,
) -> TsStatus {
    guard(|| {
        let schema = &schema.as_ref().ok_or_else(|| null("schema"))?.0;
        let params: CostmapParams = json_or_default(params_json, "params")?;
        let result = ops::costmap_outputs(bytes(mask_png, mask_len, "mask_png")?, schema, &params)?;
        if let Some(o) = out_png.as_mut() {
            *o = TsBuffer::from_vec(result.png);
        }
        if let Some(o) = out_sidecar.as_mut() {
            *o = TsBuffer::from_vec(to_canonical_json(&result.sidecar).into_bytes());
        }
        Ok(())
    })
}

/// Least-cost path over a costmap PNG. `request_json` carries `start`,
/// `goal` and optionally `clearance` and `costs`.
///
/// # Safety
/// Byte range readable, `request_json` NUL-terminated, `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn ts_plan_json(
    costmap_png: *const u8,
    costmap_len: usize,
    request_json: *const c_char,
    out_json: *mut TsBuffer,
) -> TsStatus {
    guard(|| {
        if request_json.is_null() {
            return Err(null("request_json"));
        }
        let req: PlanRequest = ops::parse_json("request", CStr::from_ptr(request_json).to_bytes())?;
        let plan = ops::plan_from_png(bytes(costmap_png, costmap_len, "costmap_png")?, &req)?;
        *out(out_json, "out_json")? = TsBuffer::from_vec(to_canonical_json(&plan).into_bytes());
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_buffer_free_is_a_no_op() {
        unsafe {
            ts_buffer_free(TsBuffer {
                data: std::ptr::null_mut(),
                len: 0,
            })
        };
    }
}
