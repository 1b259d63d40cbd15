use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use exprforge_core::diff::{l1_map, render_grayscale, stats, DiffStats};
use exprforge_core::expression_db::Alias;
use exprforge_core::pipeline::{
    apply_region_transform, run_edit_with, validate_request, EditError, EditOptions, EditRequest, RegionTransform,
};
use exprforge_core::prompting::assemble_prompt;
use exprforge_core::retrieval::{retrieve, retrieve_via_llm, LlmError, QueryError, RetrievalQuery, ScoredTag};
use exprforge_core::{RasterImage, SelectionMask};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::jobs::{EditJob, JobState, Outcome, RequestSummary};
use crate::AppState;

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/tags", get(list_tags))
        .route("/api/retrieve", post(retrieve_tags))
        .route("/api/edits", post(submit_edit))
        .route("/api/edits/{id}", get(get_job))
        .route("/api/edits/{id}/{artifact}", get(get_artifact))
        .route("/api/diff", post(diff))
        .route("/api/settings", get(get_settings).put(put_settings))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

#[derive(Serialize)]
struct TagSummary<'a> {
    name: &'a str,
    definition: &'a str,
    aliases: &'a [Alias],
    transformation_free: bool,
    story_count: usize,
}

async fn list_tags(
    State(state): State<Arc<AppState>>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let flag = match query.get("transformation_free").map(String::as_str) {
        None | Some("") => None,
        Some("true") => Some(true),
        Some("false") => Some(false),
        Some(other) => {
            return Err(ApiError::bad_request(
                "bad_flag",
                format!("transformation_free must be true or false, got `{other}`"),
            ))
        }
    };
    let needle = query
        .get("q")
        .map(|q| q.trim().to_lowercase())
        .filter(|q| !q.is_empty());
    let hits: Vec<TagSummary> = state
        .db
        .tags()
        .iter()
        .filter(|t| flag.is_none_or(|f| t.transformation_free == f))
        .filter(|t| {
            needle.as_ref().is_none_or(|n| {
                t.name.to_lowercase().contains(n) || t.aliases.iter().any(|a| a.text.to_lowercase().contains(n))
            })
        })
        .map(|t| TagSummary {
            name: &t.name,
            definition: &t.definition,
            aliases: &t.aliases,
            transformation_free: t.transformation_free,
            story_count: t.stories.len(),
        })
        .collect();
    Ok(Json(hits).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveBody {
    text: String,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    use_llm: bool,
    /// When the LLM endpoint fails, answer lexically instead of with 502.
    #[serde(default = "yes")]
    allow_fallback: bool,
}

fn default_k() -> usize {
    5
}

fn yes() -> bool {
    true
}

#[derive(Serialize)]
struct RetrieveResponse {
    results: Vec<ScoredTag>,
    degraded: bool,
}

async fn retrieve_tags(
    State(state): State<Arc<AppState>>,
    body: Result<Json<RetrieveBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<RetrieveResponse>, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request("bad_body", e.body_text()))?;
    let query = RetrievalQuery::new(body.text, body.k).map_err(|e| match e {
        QueryError::EmptyText => ApiError::bad_request("empty_text", e.to_string()),
        other => ApiError::bad_request("bad_query", other.to_string()),
    })?;
    if !body.use_llm {
        let results = retrieve(&state.index, &query);
        return Ok(Json(RetrieveResponse {
            results,
            degraded: false,
        }));
    }
    let outcome = match state.llm.clone() {
        None => Err(LlmError::EndpointUnavailable("no LLM endpoint configured".into())),
        Some(llm) => {
            let (db, index, q) = (state.db.clone(), state.index.clone(), query.clone());
            tokio::task::spawn_blocking(move || retrieve_via_llm(&db, &index, &q, llm.as_ref()))
                .await
                .map_err(|e| ApiError::internal(e.to_string()))?
        }
    };
    match outcome {
        Ok(r) => Ok(Json(RetrieveResponse {
            results: r.results,
            degraded: r.degraded,
        })),
        Err(e) if body.allow_fallback => {
            tracing::warn!(error = %e, "LLM retrieval failed; answering lexically");
            Ok(Json(RetrieveResponse {
                results: retrieve(&state.index, &query),
                degraded: true,
            }))
        }
        Err(e @ LlmError::EndpointUnavailable(_)) => Err(ApiError::new(
            StatusCode::BAD_GATEWAY,
            "endpoint_unavailable",
            e.to_string(),
        )),
        Err(e) => Err(ApiError::new(
            StatusCode::BAD_GATEWAY,
            "malformed_response",
            e.to_string(),
        )),
    }
}

/// The JSON `params` part of an edit upload. Omitted fields come from the
/// service settings.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EditParams {
    /// Used verbatim. Mutually exclusive with `tags`.
    prompt: Option<String>,
    /// Joined with the settings prefix and suffix.
    tags: Vec<String>,
    negative_prompt: Option<String>,
    /// Merge patch over the default hyperparameters.
    params: Option<serde_json::Value>,
    /// Names from the settings LoRA registry.
    loras: Vec<String>,
    context_dots: Vec<(u32, u32)>,
    hint: Option<RegionTransform>,
}

fn edit_error(e: &EditError) -> ApiError {
    let code = match e {
        EditError::DimensionMismatch { .. } => "dimension_mismatch",
        EditError::EmptySelection => "empty_selection",
        EditError::ParamOutOfRange(_) => "param_out_of_range",
        EditError::Backend(_) => "backend",
        EditError::Timeout { .. } => "timeout",
    };
    ApiError::bad_request(code, e.to_string())
}

async fn read_parts(mut multipart: Multipart) -> Result<HashMap<String, Vec<u8>>, ApiError> {
    let mut parts = HashMap::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request("bad_multipart", e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request("bad_multipart", e.body_text()))?;
        parts.insert(name, bytes.to_vec());
    }
    Ok(parts)
}

fn required<'a>(parts: &'a HashMap<String, Vec<u8>>, name: &str) -> Result<&'a [u8], ApiError> {
    parts
        .get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| ApiError::bad_request("missing_part", format!("multipart field `{name}` is required")))
}

fn decode_image(bytes: &[u8], what: &str) -> Result<RasterImage, ApiError> {
    RasterImage::decode_png(bytes).map_err(|e| ApiError::bad_request("bad_image", format!("{what}: {e}")))
}

fn decode_mask(bytes: &[u8]) -> Result<SelectionMask, ApiError> {
    SelectionMask::decode_png(bytes).map_err(|e| ApiError::bad_request("bad_mask", format!("mask: {e}")))
}

#[derive(Serialize)]
struct Submitted {
    id: String,
    state: JobState,
}

async fn submit_edit(
    State(state): State<Arc<AppState>>,
    multipart: Multipart,
) -> Result<(StatusCode, Json<Submitted>), ApiError> {
    let accepted = Instant::now();
    let parts = read_parts(multipart).await?;
    let image_png = required(&parts, "image")?;
    let mask_png = required(&parts, "mask")?;
    let image = decode_image(image_png, "image")?;
    let mask = decode_mask(mask_png)?;
    let params: EditParams = match parts.get("params") {
        Some(raw) if !raw.is_empty() => {
            serde_json::from_slice(raw).map_err(|e| ApiError::bad_request("bad_params", e.to_string()))?
        }
        _ => EditParams::default(),
    };

    let settings = state.settings.get();
    let prompt = match (&params.prompt, params.tags.is_empty()) {
        (Some(_), false) => {
            return Err(ApiError::bad_request(
                "bad_params",
                "give either `prompt` or `tags`, not both",
            ))
        }
        (Some(p), true) => p.clone(),
        (None, _) => assemble_prompt(&settings.prompt, &params.tags),
    };
    let mut hyper = serde_json::to_value(&settings.params).expect("params serialize");
    if let Some(patch) = &params.params {
        crate::settings::merge_patch(&mut hyper, patch);
    }
    let hyper = serde_json::from_value(hyper).map_err(|e| ApiError::bad_request("bad_params", e.to_string()))?;
    let loras = params
        .loras
        .iter()
        .map(|name| {
            settings
                .lora(name)
                .cloned()
                .ok_or_else(|| ApiError::bad_request("unknown_lora", format!("no LoRA named `{name}` in settings")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut req = EditRequest {
        image,
        mask,
        prompt,
        negative_prompt: params
            .negative_prompt
            .unwrap_or_else(|| settings.negative_prompt.clone()),
        params: hyper,
        loras,
        context_dots: params.context_dots,
    };
    validate_request(&req).map_err(|e| edit_error(&e))?;
    if let Some(t) = &params.hint {
        req.image = apply_region_transform(&req.image, &req.mask, t).map_err(|e| edit_error(&e))?;
    }

    let backend = settings
        .backend
        .build()
        .map_err(|e| ApiError::internal(format!("backend unavailable: {e}")))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let job = EditJob {
        id: id.clone(),
        state: JobState::Queued,
        request: RequestSummary {
            width: req.image.width(),
            height: req.image.height(),
            selected_pixels: req.mask.count(),
            prompt: req.prompt.clone(),
            negative_prompt: req.negative_prompt.clone(),
            params: req.params.clone(),
            loras: req.loras.iter().map(|l| l.name.clone()).collect(),
            backend: backend.descriptor().id,
        },
        latency_ms: None,
        seed: None,
        error: None,
    };
    state
        .jobs
        .create(job, &[("original.png", image_png), ("mask.png", mask_png)])
        .map_err(|e| ApiError::internal(e.to_string()))?;

    let options = EditOptions {
        timeout: settings.backend.edit_timeout(),
        ..EditOptions::default()
    };
    let gate = settings.backend.single_flight().then(|| state.gate.clone());
    let jobs = state.jobs.clone();
    let job_id = id.clone();
    tokio::spawn(async move {
        let _permit = match gate {
            Some(g) => Some(g.acquire_owned().await.expect("gate is never closed")),
            None => None,
        };
        if let Err(e) = jobs.start(&job_id) {
            tracing::warn!(job = %job_id, error = %e, "could not start job");
            return;
        }
        let ran = tokio::task::spawn_blocking(move || run_edit_with(&req, backend.as_ref(), &options)).await;
        let latency_ms = accepted.elapsed().as_millis() as u64;
        let outcome = match ran {
            Ok(Ok(result)) => {
                let written = result
                    .layer
                    .pixels
                    .save_png(jobs.artifact(&job_id, "layer.png"))
                    .and_then(|_| {
                        result
                            .composited_preview
                            .save_png(jobs.artifact(&job_id, "composite.png"))
                    });
                match written {
                    Ok(()) => Outcome::Done {
                        latency_ms,
                        seed: result.layer.metadata.seed,
                    },
                    Err(e) => Outcome::Failed(format!("writing results: {e}")),
                }
            }
            Ok(Err(e)) => Outcome::Failed(e.to_string()),
            Err(e) => Outcome::Failed(format!("edit task panicked: {e}")),
        };
        if let Err(e) = jobs.finish(&job_id, outcome) {
            tracing::warn!(job = %job_id, error = %e, "could not finish job");
        }
    });

    Ok((
        StatusCode::ACCEPTED,
        Json(Submitted {
            id,
            state: JobState::Queued,
        }),
    ))
}

fn unknown_job(id: &str) -> ApiError {
    ApiError::new(
        StatusCode::GONE,
        "unknown_job",
        format!("no job `{id}` (never existed or evicted)"),
    )
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<EditJob>, ApiError> {
    state.jobs.get(&id).map(Json).ok_or_else(|| unknown_job(&id))
}

async fn get_artifact(
    State(state): State<Arc<AppState>>,
    Path((id, artifact)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    if !matches!(artifact.as_str(), "layer.png" | "composite.png") {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no artifact `{artifact}`"),
        ));
    }
    let job = state.jobs.get(&id).ok_or_else(|| unknown_job(&id))?;
    match job.state {
        JobState::Done => {}
        JobState::Failed => {
            return Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "backend",
                job.error.unwrap_or_default(),
            ))
        }
        _ => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "not_ready",
                format!("job is {:?}", job.state),
            ))
        }
    }
    let bytes = tokio::fs::read(state.jobs.artifact(&id, &artifact))
        .await
        .map_err(|_| unknown_job(&id))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Serialize)]
struct DiffResponse {
    threshold: u16,
    stats: DiffStats,
    /// Base64 PNG of the grayscale heatmap.
    heatmap_png: String,
}

async fn diff(State(state): State<Arc<AppState>>, multipart: Multipart) -> Result<Json<DiffResponse>, ApiError> {
    let parts = read_parts(multipart).await?;
    let original = decode_image(required(&parts, "original")?, "original")?;
    let edited = decode_image(required(&parts, "edited")?, "edited")?;
    let mask = parts.get("mask").map(|b| decode_mask(b)).transpose()?;
    let threshold = match parts.get("threshold") {
        Some(raw) => std::str::from_utf8(raw)
            .ok()
            .and_then(|s| s.trim().parse::<u16>().ok())
            .ok_or_else(|| ApiError::bad_request("bad_threshold", "threshold must be an integer"))?,
        None => state.settings.get().diff_threshold,
    };
    let bad = |e: exprforge_core::diff::DiffError| ApiError::bad_request("bad_diff", e.to_string());
    let map = l1_map(&original, &edited).map_err(bad)?;
    let stats = stats(&map, mask.as_ref()).map_err(bad)?;
    let heat = render_grayscale(&map, threshold).map_err(bad)?;
    let png = heat.encode_png().map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(DiffResponse {
        threshold,
        stats,
        heatmap_png: STANDARD.encode(png),
    }))
}

async fn get_settings(State(state): State<Arc<AppState>>) -> Json<crate::Settings> {
    Json((*state.settings.get()).clone())
}

async fn put_settings(
    State(state): State<Arc<AppState>>,
    body: Result<Json<serde_json::Value>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<crate::Settings>, ApiError> {
    let Json(patch) = body.map_err(|e| ApiError::bad_request("bad_body", e.body_text()))?;
    match state.settings.update(&patch) {
        Ok(s) => Ok(Json((*s).clone())),
        Err(crate::settings::SettingsError::Invalid(m)) => Err(ApiError::bad_request("invalid_settings", m)),
        Err(e) => Err(ApiError::internal(e.to_string())),
    }
}
