use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::MultipartError;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use restorekit_core::orchestrator::{Event, EventKind, OverrideAction, OverrideOutcome, SessionConfig, Status, StoreError};
use restorekit_core::domain::DistortionInstance;
use restorekit_core::{ContentHash, ImageState, Provenance};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use super::api::{next_step, AdvanceResponse, ApiError, ApiSession};
use super::{Gateway, Slot};
use crate::eventstore::SessionMeta;
use crate::png_io;

type Shared = State<Arc<Gateway>>;

pub fn router(gw: Arc<Gateway>) -> Router {
    let limit = gw.max_upload;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create).get(list))
        .route("/v1/sessions/{id}", get(show))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/sessions/{id}/override", post(human_override))
        .route("/v1/sessions/{id}/advance", post(advance))
        .route("/v1/sessions/{id}/abort", post(abort))
        .route("/v1/images/{hash}", get(image))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(gw)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal("internal", e))?
}

fn find(gw: &Gateway, id: &str) -> Result<Arc<Slot>, ApiError> {
    gw.slot(id).ok_or_else(|| ApiError::not_found("session"))
}

async fn health(State(gw): Shared) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "profile": gw.profile, "fingerprint": gw.fingerprint }))
}

async fn list(State(gw): Shared) -> Result<Json<Vec<ApiSession>>, ApiError> {
    Ok(Json(blocking(move || Ok(gw.projections())).await?))
}

async fn show(State(gw): Shared, Path(id): Path<String>) -> Result<Json<ApiSession>, ApiError> {
    let slot = find(&gw, &id)?;
    Ok(Json(slot.project()))
}

#[derive(Default)]
struct Upload {
    image: Option<Bytes>,
    prompt: Option<String>,
    config: Option<String>,
    clean: Option<Bytes>,
    stack: Option<String>,
    auto_advance: Option<String>,
}

fn multipart_error(e: MultipartError) -> ApiError {
    let status = e.status();
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(status, "payload_too_large", e.body_text())
    } else {
        ApiError::new(status, "invalid_multipart", e.body_text())
    }
}

async fn read_upload(mut mp: Multipart) -> Result<Upload, ApiError> {
    let mut up = Upload::default();
    while let Some(field) = mp.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(multipart_error)?;
        let text = || {
            String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::bad_request("invalid_field", format!("`{name}` is not UTF-8")))
        };
        match name.as_str() {
            "image" => up.image = Some(bytes.clone()),
            "clean" => up.clean = Some(bytes.clone()),
            "prompt" => up.prompt = Some(text()?),
            "config" => up.config = Some(text()?),
            "stack" => up.stack = Some(text()?),
            "auto_advance" => up.auto_advance = Some(text()?),
            other => return Err(ApiError::bad_request("unknown_field", format!("unexpected multipart field `{other}`"))),
        }
    }
    Ok(up)
}

/// Server defaults with the keys given in `overrides` replaced.
fn session_config(defaults: SessionConfig, overrides: Option<&str>) -> Result<SessionConfig, ApiError> {
    let invalid = |m: String| ApiError::bad_request("invalid_config", m);
    let mut base = serde_json::to_value(defaults).expect("session config serializes");
    if let Some(text) = overrides.filter(|t| !t.trim().is_empty()) {
        let over: serde_json::Value = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let serde_json::Value::Object(over) = over else {
            return Err(invalid("config must be a JSON object".into()));
        };
        let fields = base.as_object_mut().expect("session config is an object");
        for (k, v) in over {
            if !fields.contains_key(&k) {
                return Err(invalid(format!("unknown config key `{k}`")));
            }
            fields.insert(k, v);
        }
    }
    let cfg: SessionConfig = serde_json::from_value(base).map_err(|e| invalid(e.to_string()))?;
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

fn build_image(gw: &Gateway, up: &Upload) -> Result<ImageState, ApiError> {
    let invalid = |m: String| ApiError::bad_request("invalid_image", m);
    let bytes = up.image.as_ref().ok_or_else(|| invalid("missing `image` field".into()))?;
    let raster = png_io::decode(bytes).map_err(|e| invalid(e.to_string()))?;
    match (&up.clean, &up.stack) {
        (None, None) => ImageState::new(raster).map_err(|e| invalid(e.to_string())),
        (Some(clean), Some(stack)) => {
            let mismatch = |m: String| ApiError::bad_request("provenance_mismatch", m);
            let clean = png_io::decode(clean).map_err(|e| invalid(format!("clean: {e}")))?;
            let stack: Vec<DistortionInstance> = serde_json::from_str(stack).map_err(|e| mismatch(format!("stack: {e}")))?;
            let image = ImageState::with_provenance(raster, Provenance::new(Arc::new(clean), stack))
                .map_err(|e| invalid(e.to_string()))?;
            match gw.degrader.replay_matches(&image) {
                Ok(true) => Ok(image),
                Ok(false) => Err(mismatch("the image is not the clean reference rendered through the stack".into())),
                Err(e) => Err(mismatch(e.to_string())),
            }
        }
        _ => Err(ApiError::bad_request("provenance_mismatch", "`clean` and `stack` come together")),
    }
}

async fn create(State(gw): Shared, mp: Multipart) -> Result<Response, ApiError> {
    let up = read_upload(mp).await?;
    let prompt = up.prompt.clone().unwrap_or_default();
    if prompt.trim().is_empty() {
        return Err(ApiError::bad_request("empty_prompt", "prompt must not be empty"));
    }
    let gw2 = gw.clone();
    let slot = blocking(move || {
        let gw = gw2;
        let image = build_image(&gw, &up)?;
        let config = session_config(gw.defaults, up.config.as_deref())?;
        let auto_advance = match up.auto_advance.as_deref() {
            None => gw.auto_advance,
            Some(s) => parse_bool(s).ok_or_else(|| ApiError::bad_request("invalid_field", "auto_advance is true or false"))?,
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let log = gw.engine.start(id, &image, &prompt, config)?;
        let meta = SessionMeta { profile: gw.profile.clone(), fingerprint: gw.fingerprint.clone(), auto_advance };
        gw.insert(log, meta)
    })
    .await?;
    let body = slot.project();
    gw.drive(slot);
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Deserialize)]
struct OverrideBody {
    action: Option<String>,
}

async fn human_override(State(gw): Shared, Path(id): Path<String>, body: Bytes) -> Result<Json<ApiSession>, ApiError> {
    let slot = find(&gw, &id)?;
    let unknown = |m: String| ApiError::bad_request("unknown_action", m);
    let parsed: OverrideBody = serde_json::from_slice(&body).map_err(|e| unknown(e.to_string()))?;
    let action: OverrideAction = parsed.action.as_deref().unwrap_or("").parse().map_err(unknown)?;
    let (gw2, slot2) = (gw.clone(), slot.clone());
    let (outcome, session) = blocking(move || gw2.mutate(&slot2, |engine, log| engine.human_override(log, action))).await?;
    if outcome == OverrideOutcome::Rejected {
        return Err(ApiError::new(StatusCode::CONFLICT, "override_cap", "no continue overrides left for this session"));
    }
    if session.status == Status::Running {
        gw.drive(slot);
    }
    Ok(Json(session))
}

#[derive(Deserialize, Default)]
struct AdvanceBody {
    step: Option<u32>,
}

/// Runs one transition. With `{"step": n}` it only runs when `n` is the
/// session's `next_step`; a repeated request gets `applied: false`.
async fn advance(State(gw): Shared, Path(id): Path<String>, body: Bytes) -> Result<Json<AdvanceResponse>, ApiError> {
    let slot = find(&gw, &id)?;
    let parsed: AdvanceBody = if body.iter().all(u8::is_ascii_whitespace) {
        AdvanceBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("invalid_body", e.to_string()))?
    };
    let (applied, session) = blocking(move || {
        gw.mutate(&slot, |engine, log| {
            if let Some(step) = parsed.step {
                if log.session.status == Status::Running && step != next_step(&log.session) {
                    return Ok(false);
                }
            }
            engine.advance(log).map(|()| true)
        })
    })
    .await?;
    Ok(Json(AdvanceResponse { applied, session }))
}

async fn abort(State(gw): Shared, Path(id): Path<String>) -> Result<Json<ApiSession>, ApiError> {
    let slot = find(&gw, &id)?;
    let ((), session) = blocking(move || gw.mutate(&slot, |engine, log| engine.abort(log))).await?;
    Ok(Json(session))
}

async fn image(State(gw): Shared, Path(hash): Path<String>) -> Result<Response, ApiError> {
    let id: ContentHash = hash.parse().map_err(|_| ApiError::not_found("image"))?;
    let bytes = blocking(move || {
        gw.blobs.get_bytes(&id).map_err(|e| match e {
            StoreError::NotFound(_) => ApiError::not_found("image"),
            StoreError::Corrupt { .. } => ApiError::internal("blob_corrupt", e),
            other => ApiError::internal("store_error", other),
        })
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

fn event_type(e: &Event) -> String {
    serde_json::to_value(&e.kind)
        .ok()
        .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(String::from))
        .unwrap_or_else(|| "event".into())
}

struct Follow {
    slot: Arc<Slot>,
    queue: VecDeque<Event>,
    rx: tokio::sync::broadcast::Receiver<Event>,
    last_seq: u64,
    done: bool,
}

/// Replays the log, then follows live appends. The stream ends after the
/// `finished` event.
async fn events(State(gw): Shared, Path(id): Path<String>) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let slot = find(&gw, &id)?;
    let (history, rx) = slot.subscribe();
    let state = Follow { slot, queue: history.into(), rx, last_seq: 0, done: false };
    let stream = futures::stream::unfold(state, |mut st| async move {
        loop {
            if st.done {
                return None;
            }
            if let Some(e) = st.queue.pop_front() {
                if e.seq <= st.last_seq {
                    continue;
                }
                st.last_seq = e.seq;
                st.done = matches!(e.kind, EventKind::Finished { .. });
                let sse = SseEvent::default()
                    .id(e.seq.to_string())
                    .event(event_type(&e))
                    .json_data(&e)
                    .expect("events serialize");
                return Some((Ok(sse), st));
            }
            match st.rx.recv().await {
                Ok(e) => st.queue.push_back(e),
                Err(RecvError::Lagged(_)) => {
                    let log = st.slot.lock();
                    st.queue.extend(log.events.iter().filter(|e| e.seq > st.last_seq).cloned());
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
