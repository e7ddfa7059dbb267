//! Route handlers.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use partgroup::mesh::PartId;
use partgroup::obj::{write_obj, DEFAULT_MATERIAL};
use partgroup::retrieve::{Scored, SelectionRequest};
use partgroup::views::ViewRole;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::geometry::encode_geometry;
use crate::session::{Ready, Status};
use crate::AppState;

pub fn router(state: AppState) -> Router {
    let limit = state.config().max_upload;
    Router::new()
        .route("/meshes", post(create_mesh))
        .route("/meshes/{id}", get(mesh_status))
        .route("/meshes/{id}/parts", get(parts))
        .route("/meshes/{id}/geometry", get(geometry))
        .route("/meshes/{id}/parts/{pid}/views/{file}", get(view_image))
        .route("/meshes/{id}/query", post(query))
        .route("/meshes/{id}/assignments", get(assignments).post(assign))
        .route("/meshes/{id}/export.json", get(export_json))
        .route("/meshes/{id}/export.obj", get(export_obj))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    BadRequest(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, Json(json!({ "error": msg }))).into_response()
    }
}

impl From<partgroup::Error> for ApiError {
    fn from(e: partgroup::Error) -> Self {
        use partgroup::Error as E;
        match e {
            E::NotFound(_) => ApiError::NotFound(e.to_string()),
            E::Request(_) | E::Dimension { .. } => ApiError::BadRequest(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn session(state: &AppState, id: &str) -> ApiResult<Arc<crate::session::Session>> {
    state
        .session(id)
        .ok_or_else(|| ApiError::NotFound(format!("mesh {id}")))
}

fn ready(state: &AppState, id: &str) -> ApiResult<Arc<Ready>> {
    match session(state, id)?.status() {
        Status::Ready(r) => Ok(r),
        Status::Ingesting => Err(ApiError::Conflict(format!("mesh {id} is still ingesting"))),
        Status::Failed(reason) => Err(ApiError::Conflict(format!("mesh {id} failed: {reason}"))),
    }
}

fn part_id(ready: &Ready, raw: &str) -> ApiResult<PartId> {
    raw.parse::<PartId>()
        .ok()
        .filter(|&p| (p as usize) < ready.n_parts())
        .ok_or_else(|| ApiError::NotFound(format!("part {raw}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub mesh_id: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<usize>,
}

fn status_body(s: &crate::session::Session) -> StatusResponse {
    let status = s.status();
    let (reason, parts, exemplars) = match &status {
        Status::Ingesting => (None, None, None),
        Status::Failed(r) => (Some(r.clone()), None, None),
        Status::Ready(r) => (None, Some(r.n_parts()), Some(r.artifacts.groups.groups.len())),
    };
    StatusResponse {
        mesh_id: s.id.clone(),
        status: status.name().into(),
        reason,
        parts,
        exemplars,
    }
}

async fn create_mesh(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    if body.is_empty() {
        return Err(ApiError::BadRequest("empty upload".into()));
    }
    let (s, created) = state
        .create(&body)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let code = if created { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((code, Json(status_body(&s))).into_response())
}

async fn mesh_status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StatusResponse>> {
    let s = session(&state, &id)?;
    Ok(Json(status_body(&s)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartInfo {
    pub part_id: PartId,
    pub centroid: [f64; 3],
    pub extent: f64,
    pub material_id: u32,
    pub material: String,
    pub face_count: usize,
    pub vertex_count: usize,
    /// Index of the duplicate group.
    pub group: usize,
    pub exemplar: PartId,
    pub assigned: Option<String>,
}

async fn parts(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<PartInfo>>> {
    let r = ready(&state, &id)?;
    let assigned = r.assignments();
    let mesh = &r.artifacts.mesh;
    let out = r
        .artifacts
        .parts
        .iter()
        .map(|p| PartInfo {
            part_id: p.part_id,
            centroid: p.centroid.to_array(),
            extent: p.max_radial_extent,
            material_id: p.material_id,
            material: mesh.material_name(p.material_id).to_string(),
            face_count: p.face_ids.len(),
            vertex_count: p.vertex_count,
            group: r.group_of[p.part_id as usize],
            exemplar: r.exemplar_of[p.part_id as usize],
            assigned: assigned.get(&p.part_id).cloned(),
        })
        .collect();
    Ok(Json(out))
}

async fn geometry(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = ready(&state, &id)?;
    let body = encode_geometry(&r.artifacts.mesh, &r.face_part, r.n_parts());
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], body).into_response())
}

/// Serves the exemplar's image for any member of a duplicate group. The
/// `exemplar` header is `true` when the image belongs to a different part.
async fn view_image(
    State(state): State<AppState>,
    Path((id, pid, file)): Path<(String, String, String)>,
) -> ApiResult<Response> {
    let r = ready(&state, &id)?;
    let pid = part_id(&r, &pid)?;
    let role = file
        .strip_suffix(".png")
        .and_then(ViewRole::parse)
        .ok_or_else(|| ApiError::NotFound(format!("view {file}")))?;
    let exemplar = r.exemplar_of[pid as usize];
    let path = session(&state, &id)?
        .artifacts_dir()
        .join(partgroup::pipeline::VIEWS_DIR)
        .join(exemplar.to_string())
        .join(format!("{}.png", role.as_str()));
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::NotFound(format!("no {} view for part {pid}", role.as_str())))?;
    let mut resp = ([(header::CONTENT_TYPE, "image/png")], bytes).into_response();
    let h = resp.headers_mut();
    h.insert("exemplar", HeaderValue::from_static(if exemplar != pid { "true" } else { "false" }));
    h.insert("exemplar-part", HeaderValue::from(exemplar));
    Ok(resp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    #[serde(alias = "part_ids")]
    pub query_part_ids: Vec<PartId>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub selected: Vec<Scored>,
    pub lambda: f64,
}

async fn query(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<QueryRequest>,
) -> ApiResult<Json<QueryResponse>> {
    let r = ready(&state, &id)?;
    let selected = r.index.select_group(&SelectionRequest {
        query_part_ids: req.query_part_ids,
        lambda: req.lambda,
    })?;
    Ok(Json(QueryResponse {
        selected,
        lambda: req.lambda,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignRequest {
    pub part_ids: Vec<PartId>,
    pub material: String,
}

fn assignment_body(map: BTreeMap<PartId, String>) -> Json<BTreeMap<PartId, String>> {
    Json(map)
}

async fn assignments(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<BTreeMap<PartId, String>>> {
    Ok(assignment_body(ready(&state, &id)?.assignments()))
}

async fn assign(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<AssignRequest>,
) -> ApiResult<Json<BTreeMap<PartId, String>>> {
    let r = ready(&state, &id)?;
    if req.material.is_empty() || req.material.chars().any(char::is_whitespace) {
        return Err(ApiError::BadRequest(
            "material names must be nonempty and contain no whitespace".into(),
        ));
    }
    Ok(assignment_body(r.assign(&req.part_ids, &req.material)?))
}

async fn export_json(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<BTreeMap<PartId, String>>> {
    Ok(assignment_body(ready(&state, &id)?.assignments()))
}

/// Faces grouped into one `usemtl` block per assigned material; unassigned
/// parts fall under the default material.
async fn export_obj(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = ready(&state, &id)?;
    let map = r.assignments();
    let text = write_obj(
        &r.artifacts.mesh,
        |f| {
            map.get(&r.face_part[f])
                .map_or(DEFAULT_MATERIAL, String::as_str)
                .to_string()
        },
        true,
    );
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}
