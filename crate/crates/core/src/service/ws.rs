//! `/api/events`: a snapshot, then live envelopes.

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use super::AppState;
use crate::hub::HubEvent;

/// Kind of the first envelope on every connection; its body is a store snapshot.
pub const SNAPSHOT_KIND: &str = "snapshot";
/// Close code for a subscriber that fell too far behind (policy violation).
const LAGGED_CODE: u16 = 1008;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    pub kind: String,
    pub body: serde_json::Value,
}

impl EventEnvelope {
    fn from_event(seq: u64, event: &HubEvent) -> Self {
        let mut v = serde_json::to_value(event).expect("events serialize");
        let kind = v["kind"].as_str().expect("tagged").to_owned();
        let body = v.get_mut("body").map(serde_json::Value::take).unwrap_or_default();
        Self { seq, kind, body }
    }
}

pub(super) async fn events(ws: WebSocketUpgrade, State(s): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| stream(socket, s))
}

async fn send(socket: &mut WebSocket, env: &EventEnvelope) -> bool {
    let text = serde_json::to_string(env).expect("envelopes serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn stream(mut socket: WebSocket, s: AppState) {
    let (snapshot, mut rx) = s.hub.subscribe();
    let mut seq = 0;
    let first =
        EventEnvelope { seq, kind: SNAPSHOT_KIND.into(), body: serde_json::to_value(snapshot).expect("snapshot") };
    if !send(&mut socket, &first).await {
        return;
    }
    let mut ping = tokio::time::interval(s.config.ws_ping_interval);
    ping.tick().await;
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Ok(ev) => {
                    seq += 1;
                    if !send(&mut socket, &EventEnvelope::from_event(seq, &ev)).await {
                        return;
                    }
                }
                Err(RecvError::Lagged(missed)) => {
                    tracing::info!(missed, "closing lagged event subscriber");
                    let frame = CloseFrame { code: LAGGED_CODE, reason: "lagged".into() };
                    let _ = socket.send(Message::Close(Some(frame))).await;
                    return;
                }
                Err(RecvError::Closed) => return,
            },
            _ = ping.tick() => {
                if socket.send(Message::Ping(Vec::new().into())).await.is_err() {
                    return;
                }
            }
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
