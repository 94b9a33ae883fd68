//! HTTP front end for [`AnnotationService`].
//!
//! | route                          | response                               |
//! |--------------------------------|----------------------------------------|
//! | `GET /frames/next?annotator=`  | task JSON, or 204 when nothing is left |
//! | `GET /frames/{id}/image`       | image bytes                            |
//! | `POST /annotations`            | body: one pose as annotation-table CSV |
//! | `GET /agreement`               | agreement snapshot JSON                |
//! | `GET /progress`                | progress counts JSON                   |
//! | `GET /export`                  | annotation table CSV                   |
//!
//! Every handler takes the service lock, so requests are serialized through
//! the single log writer.

use super::{AnnotationService, AnnotationTask};
use crate::error::Error;
use crate::model::FrameMeta;
use crate::table::parse_annotations;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::sync::{Arc, Mutex};
use tokio::net::TcpListener;

pub type Shared = Arc<Mutex<AnnotationService>>;

fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::UnknownAnnotator(_) | Error::UnknownFrame(_) | Error::UnknownTask { .. } => StatusCode::NOT_FOUND,
        Error::MalformedRow { .. }
        | Error::IncompletePose { .. }
        | Error::OutOfBounds { .. }
        | Error::PoseRejected { .. }
        | Error::InvalidInput(_)
        | Error::Csv(_) => StatusCode::UNPROCESSABLE_ENTITY,
        Error::InsufficientFrames(_) => StatusCode::CONFLICT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// Error body: a message plus, where available, keypoint-level detail.
pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let detail = match &self.0 {
            Error::IncompletePose { missing, .. } => json!({ "missing": missing }),
            Error::OutOfBounds { keypoint, x, y, .. } => {
                json!({ "violations": [{ "kind": "out_of_bounds", "keypoint": keypoint, "x": x, "y": y }] })
            }
            Error::PoseRejected { violations, .. } => json!({ "violations": violations }),
            Error::MalformedRow { row, .. } => json!({ "row": row }),
            _ => serde_json::Value::Null,
        };
        (status_of(&self.0), Json(json!({ "error": self.0.to_string(), "detail": detail }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: String,
}

/// Task descriptor with the frame geometry the UI needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDescriptor {
    #[serde(flatten)]
    pub task: AnnotationTask,
    pub width: u32,
    pub height: u32,
    pub image_url: String,
}

fn lock(state: &Shared) -> std::sync::MutexGuard<'_, AnnotationService> {
    // A panic while holding the lock cannot leave the index inconsistent
    // with the log (records are applied after the append succeeds).
    state.lock().unwrap_or_else(|p| p.into_inner())
}

async fn next_frame(State(state): State<Shared>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let mut svc = lock(&state);
    match svc.assign_next_frame(&q.annotator)? {
        None => Ok(StatusCode::NO_CONTENT.into_response()),
        Some(task) => {
            let frame: &FrameMeta = svc.manifest().frame(&task.frame_id).expect("tasks reference manifest frames");
            let descriptor = TaskDescriptor {
                width: frame.width,
                height: frame.height,
                image_url: format!("/frames/{}/image", task.frame_id),
                task,
            };
            Ok(Json(descriptor).into_response())
        }
    }
}

async fn frame_image(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let path = lock(&state).image_path(&id).map_err(|e| match e {
        Error::InvalidInput(_) => Error::UnknownFrame(id.clone()),
        e => e,
    })?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| Error::UnknownFrame(id))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn submit(State(state): State<Shared>, body: Bytes) -> ApiResult<Json<AnnotationTask>> {
    let mut svc = lock(&state);
    let mut poses = parse_annotations(body.as_ref(), Some(svc.manifest()))?;
    if poses.len() != 1 {
        return Err(Error::InvalidInput(format!("expected exactly one pose, got {}", poses.len())).into());
    }
    Ok(Json(svc.submit_annotation(poses.remove(0))?))
}

async fn agreement(State(state): State<Shared>) -> ApiResult<Response> {
    let svc = lock(&state);
    match svc.agreement_snapshot() {
        Ok(snapshot) => Ok(Json(snapshot).into_response()),
        Err(e @ Error::InsufficientFrames(_)) => {
            let p = svc.progress();
            let body = json!({
                "error": e.to_string(),
                "complete_frames": p.interrater_complete,
                "partial_frames": p.interrater_partial,
            });
            Ok((StatusCode::CONFLICT, Json(body)).into_response())
        }
        Err(e) => Err(e.into()),
    }
}

async fn progress(State(state): State<Shared>) -> Json<super::Progress> {
    Json(lock(&state).progress())
}

async fn export(State(state): State<Shared>) -> Response {
    let csv = lock(&state).export_annotations();
    ([(header::CONTENT_TYPE, "text/csv")], csv).into_response()
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/frames/next", get(next_frame))
        .route("/frames/{id}/image", get(frame_image))
        .route("/annotations", post(submit))
        .route("/agreement", get(agreement))
        .route("/progress", get(progress))
        .route("/export", get(export))
        .with_state(state)
}

pub async fn serve(service: AnnotationService, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(Mutex::new(service)))).await
}
