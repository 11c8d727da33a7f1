use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{Request, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dforge_core::annotation;
use dforge_core::datamodel::{AnnotationRecord, RegionGrid};
use serde::Serialize;
use serde_json::Value;
use tower::ServiceExt;
use tower_http::services::{ServeDir, ServeFile};

use crate::error::{ApiError, FieldErrors};
use crate::state::{display_image, validate_submission, AppState};

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    let mut app = Router::new()
        .route("/api/classes", get(list_classes))
        .route("/api/classes/{class}", get(class_detail))
        .route(
            "/api/classes/{class}/images/{image}/heatmaps",
            get(image_heatmaps),
        )
        .route("/api/classes/{class}/annotation", post(post_annotation))
        .route("/api/annotations", get(export_annotations))
        .route("/static/images/{image}", get(static_image));
    if let Some(dir) = &state.static_dir {
        app = app.nest_service("/static", ServeDir::new(dir));
    }
    app.with_state(state)
}

#[derive(Debug, Serialize)]
struct ClassSummary {
    class: String,
    k: usize,
    lambda2: Option<f64>,
    annotated: bool,
    version: u64,
}

/// Classes in prioritization order: λ₂ ascending, ties by id.
async fn list_classes(State(st): State<Shared>) -> Result<Json<Vec<ClassSummary>>, ApiError> {
    let out = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let mut out = Vec::with_capacity(st.models.len());
        for (class_id, model) in &st.models {
            let record = st.annotation(class_id)?;
            out.push(ClassSummary {
                class: class_id.clone(),
                k: model.k,
                lambda2: model.lambda2(),
                annotated: record
                    .as_ref()
                    .is_some_and(|r| r.check_covers(model).is_ok()),
                version: record.map_or(0, |r| r.version),
            });
        }
        out.sort_by(|a, b| {
            let la = a.lambda2.unwrap_or(f64::INFINITY);
            let lb = b.lambda2.unwrap_or(f64::INFINITY);
            la.total_cmp(&lb).then_with(|| a.class.cmp(&b.class))
        });
        Ok(out)
    })
    .await??;
    Ok(Json(out))
}

#[derive(Debug, Serialize)]
struct ClusterInfo {
    index: usize,
    size: u64,
}

#[derive(Debug, Serialize)]
struct ClassDetail {
    class: String,
    k: usize,
    clusters: Vec<ClusterInfo>,
    sample_images: Vec<String>,
    eigenvalues: Vec<f64>,
}

async fn class_detail(
    State(st): State<Shared>,
    Path(class_id): Path<String>,
) -> Result<Json<ClassDetail>, ApiError> {
    let model = st.model(&class_id)?;
    Ok(Json(ClassDetail {
        class: class_id.clone(),
        k: model.k,
        clusters: model
            .sizes
            .iter()
            .enumerate()
            .map(|(index, &size)| ClusterInfo { index, size })
            .collect(),
        sample_images: st.sample_images(&class_id)?,
        eigenvalues: model.eigenvalues.clone(),
    }))
}

#[derive(Debug, Serialize)]
struct HeatmapPayload {
    /// `null` entries are suppressed cells; `null` overall when the image
    /// has no score map for the class.
    base_scores: Option<Vec<Vec<Option<f32>>>>,
    heatmaps: BTreeMap<usize, Vec<Vec<f64>>>,
    grid: RegionGrid,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_url: Option<String>,
}

fn to_rows<T: Copy, U>(values: &[T], cols: usize, f: impl Fn(T) -> U) -> Vec<Vec<U>> {
    values
        .chunks(cols)
        .map(|row| row.iter().map(|&v| f(v)).collect())
        .collect()
}

async fn image_heatmaps(
    State(st): State<Shared>,
    Path((class_id, image_id)): Path<(String, String)>,
) -> Result<Json<HeatmapPayload>, ApiError> {
    let model = st.model(&class_id)?;
    let entry = st
        .manifest
        .image(&image_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown image {image_id}")))?;
    let k = model.k;
    let has_scores = st.manifest.score_map_path(entry, &class_id).is_some();
    let has_image = entry.image.is_some();
    let payload = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let grid = st.manifest.grid;
        let entry = st.manifest.image(&image_id).expect("checked above");
        let base_scores = if has_scores {
            let sm = st.manifest.load_score_map(entry, &class_id)?;
            Some(to_rows(sm.scores(), grid.cols, |v: f32| {
                v.is_finite().then_some(v)
            }))
        } else {
            None
        };
        let mut heatmaps = BTreeMap::new();
        for i in 0..k {
            let h = st.heatmap(&class_id, &image_id, i)?;
            heatmaps.insert(i, to_rows(&h, grid.cols, |v| v));
        }
        Ok(HeatmapPayload {
            base_scores,
            heatmaps,
            grid,
            image_url: has_image.then(|| format!("/static/images/{image_id}")),
        })
    })
    .await??;
    Ok(Json(payload))
}

async fn post_annotation(
    State(st): State<Shared>,
    Path(class_id): Path<String>,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    let model = st.model(&class_id)?;
    let value: Value = serde_json::from_slice(&body).map_err(|e| {
        ApiError::Invalid(FieldErrors::from([(
            "body".to_string(),
            format!("invalid JSON: {e}"),
        )]))
    })?;
    let sub = validate_submission(&value, model).map_err(ApiError::Invalid)?;
    let lock = st.write_lock(&class_id).expect("one lock per model");
    let _guard = lock.lock().await;
    let st2 = st.clone();
    let class2 = class_id.clone();
    let record = tokio::task::spawn_blocking(move || st2.commit(&class2, sub)).await??;
    log::info!(
        "class={} annotator={} version={} labels={}",
        record.class_id,
        record.annotator,
        record.version,
        record
            .labels
            .iter()
            .map(|(i, l)| format!("{i}:{l}"))
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(StatusCode::NO_CONTENT)
}

async fn export_annotations(
    State(st): State<Shared>,
) -> Result<Json<Vec<AnnotationRecord>>, ApiError> {
    let records = tokio::task::spawn_blocking(move || annotation::read_all(&st.annotations_dir))
        .await??;
    Ok(Json(records.into_values().collect()))
}

async fn static_image(
    State(st): State<Shared>,
    Path(image_id): Path<String>,
    req: Request<Body>,
) -> Result<Response, ApiError> {
    let path = display_image(&st, &image_id)
        .ok_or_else(|| ApiError::NotFound(format!("no display image for {image_id}")))?;
    let res = ServeFile::new(path)
        .oneshot(req)
        .await
        .map_err(|e| ApiError::Task(e.to_string()))?;
    Ok(res.into_response())
}
