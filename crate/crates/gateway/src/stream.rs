//! `/stream` sessions: one reply per client frame, in arrival order, each
//! sanitized under the policy snapshot taken when the frame arrived.

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use privsense_core::wire::{SanitizationJson, WindowJson};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::routes::{ready, sanitize_window, to_window};
use crate::AppState;

/// Consecutive malformed frames after which the session is closed.
pub const MAX_CONSECUTIVE_MALFORMED: usize = 3;
/// WebSocket close code "policy violation".
const CLOSE_POLICY: u16 = 1008;

#[derive(Deserialize)]
struct ClientFrame {
    seq: u64,
    window: WindowJson,
}

pub(crate) async fn upgrade(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    if let Err(r) = ready(&state) {
        return r;
    }
    ws.on_upgrade(move |socket| session(socket, state))
}

fn error_frame(seq: Option<u64>, message: &str, policy_version: u64) -> Value {
    json!({ "seq": seq, "error": message, "policy_version": policy_version })
}

async fn reply(state: &AppState, text: &str) -> Result<Value, Value> {
    let engine = ready(state).map_err(|_| error_frame(None, "model is still loading", 0))?;
    let version = engine.store.version();
    let value: Value = serde_json::from_str(text).map_err(|e| error_frame(None, &format!("invalid JSON: {e}"), version))?;
    let seq = value.get("seq").and_then(Value::as_u64);
    let frame: ClientFrame = serde_json::from_value(value).map_err(|e| error_frame(seq, &format!("invalid frame: {e}"), version))?;
    let window = to_window(&engine, &frame.window).map_err(|e| error_frame(Some(frame.seq), e.message(), version))?;
    let result = sanitize_window(state, engine.clone(), window)
        .await
        .map_err(|e| error_frame(Some(frame.seq), &e, version))?;
    let mut out = serde_json::to_value(SanitizationJson::from(&result)).expect("result serializes");
    out["seq"] = json!(frame.seq);
    Ok(out)
}

async fn session(mut socket: WebSocket, state: AppState) {
    let mut malformed = 0;
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            Message::Close(_) => break,
            _ => continue,
        };
        let out = match reply(&state, &text).await {
            Ok(v) => {
                malformed = 0;
                v
            }
            Err(v) => {
                malformed += 1;
                v
            }
        };
        if socket.send(Message::Text(out.to_string().into())).await.is_err() {
            return;
        }
        if malformed >= MAX_CONSECUTIVE_MALFORMED {
            log::warn!("closing stream after {malformed} consecutive malformed frames");
            let close = CloseFrame {
                code: CLOSE_POLICY,
                reason: "too many malformed frames".into(),
            };
            let _ = socket.send(Message::Close(Some(close))).await;
            return;
        }
    }
}
