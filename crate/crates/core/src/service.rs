//! HTTP front end. Every endpoint takes `multipart/form-data` and runs the
//! same byte-level operations as the command line.
//!
//! | Route | Parts | Response |
//! |---|---|---|
//! | `POST /v1/metrics` | `gt`, `pred`, optional `params` | metrics JSON |
//! | `POST /v1/loss` | `logits`, `mask`, optional `params` | loss JSON |
//! | `POST /v1/crf` | `probs`, `image`, optional `params` | TST1 tensor |
//! | `POST /v1/uncertainty` | `probs`, optional `params` | multipart `report` + `entropy` |
//! | `POST /v1/costmap` | `mask`, optional `params` | multipart `costmap` + `sidecar` |
//! | `POST /v1/plan` | `costmap`, `request` | plan JSON |
//! | `GET /v1/healthz` | | `{"status":"ok"}` |
//!
//! Failures return 400 (413 for oversized bodies) with the same
//! `{"error": {...}}` document the command line prints.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::canonical::to_canonical_json;
use crate::loss::LossConfig;
use crate::metrics::{ConfusionAccumulator, ExclusionSet, DEFAULT_TOP_K};
use crate::ops::{self, AppError, CostmapParams, PlanRequest, UncertaintyParams};
use crate::postprocess::{CrfBackend, CrfParams};
use crate::schema::ClassSchema;

pub const DEFAULT_MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub schema: ClassSchema,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            schema: ClassSchema::default(),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }
}

type Shared = Arc<ServiceConfig>;

pub fn router(config: ServiceConfig) -> Router {
    let limit = config.max_body_bytes;
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/metrics", post(metrics))
        .route("/v1/loss", post(loss))
        .route("/v1/crf", post(crf))
        .route("/v1/uncertainty", post(uncertainty))
        .route("/v1/costmap", post(costmap))
        .route("/v1/plan", post(plan))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(Arc::new(config))
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: &str, config: ServiceConfig) -> Result<(), AppError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| AppError::io(std::path::Path::new(addr), &e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| AppError::io(std::path::Path::new(addr), &e))
}

struct ApiError {
    status: StatusCode,
    error: AppError,
}

impl From<AppError> for ApiError {
    fn from(error: AppError) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            error,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            [(header::CONTENT_TYPE, "application/json")],
            self.error.to_json(),
        )
            .into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn json_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

/// Named parts of a multipart request.
struct Parts(HashMap<String, Vec<u8>>);

impl Parts {
    async fn collect(mut form: Multipart) -> Result<Self, ApiError> {
        let mut parts = HashMap::new();
        let fail = |e: axum::extract::multipart::MultipartError| ApiError {
            status: if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                StatusCode::PAYLOAD_TOO_LARGE
            } else {
                StatusCode::BAD_REQUEST
            },
            error: AppError::validation(
                if e.status() == StatusCode::PAYLOAD_TOO_LARGE { "PayloadTooLarge" } else { "Multipart" },
                e.body_text(),
            ),
        };
        while let Some(field) = form.next_field().await.map_err(fail)? {
            let name = field.name().unwrap_or_default().to_string();
            let bytes = field.bytes().await.map_err(fail)?;
            parts.insert(name, bytes.to_vec());
        }
        Ok(Parts(parts))
    }

    fn take(&mut self, name: &str) -> Result<Vec<u8>, AppError> {
        self.0
            .remove(name)
            .ok_or_else(|| AppError::validation("MissingPart", format!("multipart part `{name}` is required")))
    }

    fn params<T: Default + for<'de> Deserialize<'de>>(&mut self, name: &str) -> Result<T, AppError> {
        match self.0.remove(name) {
            None => Ok(T::default()),
            Some(bytes) => ops::parse_json(name, &bytes),
        }
    }
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, AppError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::validation("Internal", e.to_string()))?
        .map_err(ApiError::from)
}

/// Builds a `multipart/mixed` body with a content-derived boundary.
fn multipart_response(parts: &[(&str, &str, &[u8])]) -> Response {
    let mut hasher = Sha256::new();
    for (_, _, bytes) in parts {
        hasher.update(bytes);
    }
    let boundary = format!("terraseg-{}", &hex::encode(hasher.finalize())[..32]);
    let mut body = Vec::new();
    for (name, content_type, bytes) in parts {
        body.extend_from_slice(
            format!(
                "--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"\r\nContent-Type: {content_type}\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (
        [(header::CONTENT_TYPE, format!("multipart/mixed; boundary={boundary}"))],
        Body::from(body),
    )
        .into_response()
}

async fn healthz() -> Response {
    json_response(r#"{"status":"ok"}"#.to_string())
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MetricsParams {
    /// Each entry is one exclusion set of class names.
    exclude: Option<Vec<Vec<String>>>,
    top_k: usize,
}

impl Default for MetricsParams {
    fn default() -> Self {
        MetricsParams {
            exclude: None,
            top_k: DEFAULT_TOP_K,
        }
    }
}

async fn metrics(State(cfg): State<Shared>, form: Multipart) -> ApiResult {
    let mut parts = Parts::collect(form).await?;
    let gt = parts.take("gt")?;
    let pred = parts.take("pred")?;
    let params: MetricsParams = parts.params("params")?;
    let body = blocking(move || {
        let schema = &cfg.schema;
        let exclusions = match &params.exclude {
            None => ExclusionSet::defaults(schema),
            Some(sets) => sets
                .iter()
                .map(|names| ExclusionSet::from_names(schema, names))
                .collect::<Result<_, _>>()?,
        };
        let mut acc = ConfusionAccumulator::new(schema.len());
        ops::accumulate_pair(&mut acc, &gt, &pred, schema)?;
        let report = ops::metrics_report(&acc, schema, &exclusions, params.top_k)?;
        Ok(to_canonical_json(&report))
    })
    .await?;
    Ok(json_response(body))
}

async fn loss(State(cfg): State<Shared>, form: Multipart) -> ApiResult {
    let mut parts = Parts::collect(form).await?;
    let logits = parts.take("logits")?;
    let mask = parts.take("mask")?;
    let params: LossConfig = parts.params("params")?;
    let body = blocking(move || {
        let breakdown = ops::loss_breakdown(&logits, &mask, &cfg.schema, &params)?;
        Ok(to_canonical_json(&breakdown))
    })
    .await?;
    Ok(json_response(body))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct CrfRequest {
    #[serde(flatten)]
    params: CrfParams,
    backend: CrfBackend,
}

async fn crf(form: Multipart) -> ApiResult {
    let mut parts = Parts::collect(form).await?;
    let probs = parts.take("probs")?;
    let image = parts.take("image")?;
    let req: CrfRequest = parts.params("params")?;
    let bytes = blocking(move || ops::crf_bytes(&probs, &image, &req.params, req.backend)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn uncertainty(form: Multipart) -> ApiResult {
    let mut parts = Parts::collect(form).await?;
    let probs = parts.take("probs")?;
    let params: UncertaintyParams = parts.params("params")?;
    let out = blocking(move || ops::uncertainty_outputs(&probs, &params)).await?;
    let report = to_canonical_json(&out.report);
    Ok(multipart_response(&[
        ("report", "application/json", report.as_bytes()),
        ("entropy", "image/png", &out.entropy_png),
    ]))
}

async fn costmap(State(cfg): State<Shared>, form: Multipart) -> ApiResult {
    let mut parts = Parts::collect(form).await?;
    let mask = parts.take("mask")?;
    let params: CostmapParams = parts.params("params")?;
    let out = blocking(move || ops::costmap_outputs(&mask, &cfg.schema, &params)).await?;
    let sidecar = to_canonical_json(&out.sidecar);
    Ok(multipart_response(&[
        ("costmap", "image/png", &out.png),
        ("sidecar", "application/json", sidecar.as_bytes()),
    ]))
}

async fn plan(form: Multipart) -> ApiResult {
    let mut parts = Parts::collect(form).await?;
    let costmap = parts.take("costmap")?;
    let req: PlanRequest = ops::parse_json("request", &parts.take("request")?)?;
    let body = blocking(move || Ok(to_canonical_json(&ops::plan_from_png(&costmap, &req)?))).await?;
    Ok(json_response(body))
}
