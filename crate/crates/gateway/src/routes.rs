use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use privsense_core::dataset::ImuWindow;
use privsense_core::policy::{PolicyError, PrivacyPolicy};
use privsense_core::sanitizer::{Action, SanitizationResult};
use privsense_core::wire::{RankingJson, SanitizationJson, WindowJson};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{AppState, Engine, API_KEY_HEADER};

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/policy", get(get_policy).put(put_policy))
        .route("/classify", post(classify))
        .route("/sanitize", post(sanitize))
        .route("/metrics", get(metrics))
        .route("/activities", get(activities))
        .route("/stream", get(crate::stream::upgrade))
        .layer(middleware::from_fn_with_state(state.clone(), require_key));
    Router::new().nest("/api/v1", api).with_state(state)
}

pub(crate) fn error(status: StatusCode, kind: &str, message: impl Into<String>, policy_version: Option<u64>) -> Response {
    (
        status,
        Json(json!({ "error": kind, "message": message.into(), "policy_version": policy_version })),
    )
        .into_response()
}

async fn require_key(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(key) = state.api_key() {
        let given = req.headers().get(API_KEY_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(key) {
            return error(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong API key", None);
        }
    }
    next.run(req).await
}

pub(crate) fn ready(state: &AppState) -> Result<Arc<Engine>, Response> {
    state
        .engine()
        .ok_or_else(|| error(StatusCode::SERVICE_UNAVAILABLE, "not_ready", "model is still loading", None))
}

/// Accepts `{"window": {...}}` or a bare window object.
#[derive(Deserialize)]
#[serde(untagged)]
enum WindowBody {
    Wrapped { window: WindowJson },
    Bare(WindowJson),
}

pub(crate) enum WindowError {
    Malformed(String),
    Shape(String),
}

impl WindowError {
    pub(crate) fn message(&self) -> &str {
        match self {
            WindowError::Malformed(m) | WindowError::Shape(m) => m,
        }
    }
}

pub(crate) fn to_window(engine: &Engine, json: &WindowJson) -> Result<ImuWindow, WindowError> {
    json.to_window(engine.sanitizer.classifier().window_shape())
        .map_err(WindowError::Shape)
}

fn parse_window(engine: &Engine, body: &[u8]) -> Result<ImuWindow, WindowError> {
    let parsed: WindowBody = serde_json::from_slice(body).map_err(|e| WindowError::Malformed(e.to_string()))?;
    let json = match parsed {
        WindowBody::Wrapped { window } | WindowBody::Bare(window) => window,
    };
    to_window(engine, &json)
}

fn window_error(engine: &Engine, e: WindowError) -> Response {
    let v = Some(engine.store.version());
    match e {
        WindowError::Malformed(m) => error(StatusCode::BAD_REQUEST, "malformed", m, v),
        WindowError::Shape(m) => {
            let (l, c) = engine.sanitizer.classifier().window_shape();
            (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(json!({
                    "error": "shape_mismatch",
                    "message": m,
                    "expected": { "length": l, "channels": c },
                    "policy_version": v,
                })),
            )
                .into_response()
        }
    }
}

async fn get_policy(State(state): State<AppState>) -> Response {
    match ready(&state) {
        Ok(engine) => Json(engine.store.snapshot().as_ref().clone()).into_response(),
        Err(r) => r,
    }
}

async fn put_policy(State(state): State<AppState>, body: Bytes) -> Response {
    let engine = match ready(&state) {
        Ok(e) => e,
        Err(r) => return r,
    };
    let current = engine.store.version();
    let reject = |issues: Value| {
        (
            StatusCode::BAD_REQUEST,
            Json(json!({ "error": "invalid_policy", "issues": issues, "policy_version": current })),
        )
            .into_response()
    };
    let text = String::from_utf8_lossy(&body);
    let policy = match PrivacyPolicy::parse(&text) {
        Ok(p) => p,
        Err(e) => {
            let kind = match e {
                PolicyError::Schema(_) => "schema",
                _ => "malformed",
            };
            return reject(json!([{ "kind": kind, "message": e.to_string() }]));
        }
    };
    let gaps = engine.library_gaps(&policy.gray);
    if !gaps.is_empty() {
        let issues: Vec<Value> = gaps
            .iter()
            .map(|c| json!({ "kind": "missing_exemplars", "class": c }))
            .collect();
        return reject(Value::Array(issues));
    }
    match engine.store.update(policy) {
        Ok(entry) => {
            if let Err(e) = state.persist(&entry) {
                log::error!("policy version {} installed but not persisted: {e}", entry.version);
            }
            log::info!("policy updated to version {}", entry.version);
            Json(json!({ "version": entry.version, "policy_version": entry.version })).into_response()
        }
        Err(PolicyError::Invalid(issues)) => reject(serde_json::to_value(issues).expect("issues serialize")),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), Some(current)),
    }
}

async fn classify(State(state): State<AppState>, body: Bytes) -> Response {
    let engine = match ready(&state) {
        Ok(e) => e,
        Err(r) => return r,
    };
    let window = match parse_window(&engine, &body) {
        Ok(w) => w,
        Err(e) => return window_error(&engine, e),
    };
    let version = engine.store.version();
    let classifier = engine.sanitizer.classifier().clone();
    let ranked = tokio::task::spawn_blocking(move || classifier.rank(&window, classifier.class_names())).await;
    match ranked {
        Ok(Ok(r)) => Json(RankingJson::new(&r, version)).into_response(),
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, "shape_mismatch", e.to_string(), Some(version)),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), Some(version)),
    }
}

/// Sanitizes under the snapshot current at call time and records metrics.
pub(crate) async fn sanitize_window(state: &AppState, engine: Arc<Engine>, window: ImuWindow) -> Result<SanitizationResult, String> {
    let seed = state.next_seed();
    let policy = engine.store.snapshot();
    tokio::task::spawn_blocking(move || {
        let result = engine.sanitizer.sanitize(&window, &policy, seed).map_err(|e| e.to_string())?;
        engine.metrics.record(match result.action {
            Action::Replaced => result.replacement_class.as_deref(),
            Action::Passthrough => None,
        });
        Ok(result)
    })
    .await
    .map_err(|e| e.to_string())?
}

async fn sanitize(State(state): State<AppState>, body: Bytes) -> Response {
    let engine = match ready(&state) {
        Ok(e) => e,
        Err(r) => return r,
    };
    let window = match parse_window(&engine, &body) {
        Ok(w) => w,
        Err(e) => return window_error(&engine, e),
    };
    match sanitize_window(&state, engine.clone(), window).await {
        Ok(r) => Json(SanitizationJson::from(&r)).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e, Some(engine.store.version())),
    }
}

async fn metrics(State(state): State<AppState>) -> Response {
    match ready(&state) {
        Ok(engine) => Json(engine.metrics.snapshot(engine.store.version(), state.uptime_s())).into_response(),
        Err(r) => r,
    }
}

async fn activities(State(state): State<AppState>) -> Response {
    let engine = match ready(&state) {
        Ok(e) => e,
        Err(r) => return r,
    };
    let policy = engine.store.snapshot();
    let list: Vec<Value> = engine
        .sanitizer
        .classifier()
        .class_names()
        .iter()
        .enumerate()
        .map(|(i, name)| json!({ "index": i, "name": name, "category": policy.categorize(name) }))
        .collect();
    Json(json!({ "activities": list, "policy_version": policy.version })).into_response()
}
