//! HTTP API over the catalog, consumed by the portal and the CLI.

use super::Jse;
use crate::catalog::{
    CatalogError, DatasetRecord, FragmentSummary, JobRecord, JobRequest, JobRow, JobState, PlacementRecord, SubmitError,
};
use crate::event::Schema;
use crate::filter::FilterError;
use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::Arc;

pub fn router(jse: Arc<Jse>) -> Router {
    Router::new()
        .route("/jobs", get(list_jobs).post(submit_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/result", get(job_result))
        .route("/nodes", get(list_nodes).post(add_node))
        .route("/nodes/{name}", get(get_node))
        .route("/datasets", get(list_datasets).post(create_dataset))
        .route("/datasets/{id}/placements", axum::routing::post(add_placements))
        .with_state(jse)
}

/// JSON error body: `{"error": code, "message": text, ..extra}`.
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": code, "message": message.into() }),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        let msg = e.to_string();
        match e {
            CatalogError::Rejected(s) => submit_error(s),
            CatalogError::JobNotFound(_) | CatalogError::NodeNotFound(_) | CatalogError::DatasetNotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "not-found", msg)
            }
            CatalogError::InvalidMutation(_)
            | CatalogError::IllegalTransition { .. }
            | CatalogError::MissingDetail { .. } => ApiError::new(StatusCode::CONFLICT, "conflict", msg),
            CatalogError::Io(_) | CatalogError::CorruptSnapshot(_) | CatalogError::Crashed | CatalogError::Poisoned => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "catalog-unavailable", msg)
            }
        }
    }
}

fn submit_error(e: SubmitError) -> ApiError {
    let msg = e.to_string();
    match e {
        SubmitError::UnknownDataset(_) => ApiError::new(StatusCode::BAD_REQUEST, "unknown-dataset", msg),
        SubmitError::UnknownTarget(_) => ApiError::new(StatusCode::BAD_REQUEST, "unknown-target", msg),
        SubmitError::Filter(FilterError::Syntax(s)) => ApiError::new(StatusCode::BAD_REQUEST, "syntax-error", msg)
            .with("offset", json!(s.offset))
            .with(
                "expected",
                json!(s.expected.iter().map(|x| x.to_string()).collect::<Vec<_>>()),
            )
            .with("found", json!(s.found)),
        SubmitError::Filter(FilterError::Invalid(errors)) => {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid-filter", msg).with("errors", json!(errors))
        }
        SubmitError::NotCanonical(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid-filter", msg),
        SubmitError::Calibration(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid-calibration", msg),
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", e.to_string()))
}

fn parse_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", format!("invalid id {raw:?}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Submitted {
    pub job_id: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobView {
    pub job: JobRecord,
    pub row: JobRow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetView {
    #[serde(flatten)]
    pub dataset: DatasetRecord,
    pub placements: Vec<PlacementRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewDataset {
    #[serde(default)]
    pub dataset_id: Option<u64>,
    pub schema: Schema,
    pub fragments: Vec<FragmentSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewNode {
    pub address: String,
}

async fn list_jobs(State(jse): State<Arc<Jse>>) -> Json<Vec<JobRow>> {
    Json(jse.catalog.list_jobs().iter().map(JobRecord::row).collect())
}

async fn submit_job(State(jse): State<Arc<Jse>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: JobRequest = parse_body(&body)?;
    let job_id = jse.catalog.submit_job(req)?;
    jse.wake();
    Ok((StatusCode::CREATED, Json(Submitted { job_id })))
}

async fn get_job(State(jse): State<Arc<Jse>>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let job = jse.catalog.get_job(parse_id(&id)?)?;
    let row = job.row();
    Ok(Json(JobView { job, row }))
}

async fn job_result(State(jse): State<Arc<Jse>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = jse.catalog.get_job(parse_id(&id)?)?;
    let rel = match (&job.state, &job.result_path) {
        (JobState::Finished, Some(rel)) => rel.clone(),
        _ => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "not-ready",
                format!("job {} is {}", job.job_id, job.state),
            )
            .with("state", json!(job.state)))
        }
    };
    let bytes = tokio::fs::read(jse.catalog.resolve(&rel))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("{rel}: {e}")))?;
    Ok(Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, "application/octet-stream")
        .header(
            header::CONTENT_DISPOSITION,
            format!("attachment; filename=\"job-{}.geb\"", job.job_id),
        )
        .body(Body::from(bytes))
        .expect("static headers are valid"))
}

async fn list_nodes(State(jse): State<Arc<Jse>>) -> impl IntoResponse {
    Json(jse.catalog.list_nodes())
}

async fn get_node(State(jse): State<Arc<Jse>>, Path(name): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(jse.catalog.get_node(&name)?))
}

async fn add_node(State(jse): State<Arc<Jse>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: NewNode = parse_body(&body)?;
    let record = jse
        .add_node(&req.address)
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "node-unreachable", e))?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn list_datasets(State(jse): State<Arc<Jse>>) -> Json<Vec<DatasetView>> {
    Json(
        jse.catalog
            .list_datasets()
            .into_iter()
            .map(|dataset| {
                let placements = jse.catalog.placements(dataset.dataset_id);
                DatasetView { dataset, placements }
            })
            .collect(),
    )
}

async fn create_dataset(State(jse): State<Arc<Jse>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: NewDataset = parse_body(&body)?;
    let record = jse.catalog.create_dataset(req.dataset_id, req.schema, req.fragments)?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn add_placements(
    State(jse): State<Arc<Jse>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let dataset_id = parse_id(&id)?;
    let placements: Vec<PlacementRecord> = parse_body(&body)?;
    if let Some(p) = placements.iter().find(|p| p.dataset_id != dataset_id) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad-request",
            format!(
                "placement for dataset {} posted under dataset {dataset_id}",
                p.dataset_id
            ),
        ));
    }
    let mut added = 0usize;
    for p in placements {
        added += jse.catalog.record_placement(p)? as usize;
    }
    Ok(Json(json!({ "added": added })))
}
