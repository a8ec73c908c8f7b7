//! HTTP and WebSocket API over a [`Hub`].
//!
//! | Method | Path | Success | Errors |
//! |---|---|---|---|
//! | GET | `/api/devices` | 200 JSON array of summaries | 400 bad query |
//! | GET | `/api/devices/{id}` | 200 JSON detail | 404 |
//! | POST | `/api/devices/{id}/enumerate` | 202 | 404, 409, 503, 502 |
//! | GET | `/api/proximity` | 200 JSON array | 400 bad query |
//! | GET | `/api/export/rssi.csv` | 200 `text/csv` | 400 bad query |
//! | GET | `/api/export/capture.pcap` | 200 pcap | 500 |
//! | GET | `/api/agents` | 200 JSON array | |
//! | GET | `/api/events` | WebSocket upgrade | |

mod ws;

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;
use tower_http::services::ServeDir;

use crate::gatt::GattError;
use crate::hub::Hub;
use crate::identity::{DeviceFilter, DeviceId};
use crate::proximity::{proximity_snapshot, PathLossConfig};

pub use ws::{EventEnvelope, SNAPSHOT_KIND};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_HISTORY: usize = 100;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    BindFailed { addr: String, source: std::io::Error },
    #[error("service stopped: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub proximity: PathLossConfig,
    /// Built UI assets, served for any path outside `/api`.
    pub ui_dir: Option<PathBuf>,
    pub ws_ping_interval: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { proximity: PathLossConfig::default(), ui_dir: None, ws_ping_interval: Duration::from_secs(15) }
    }
}

#[derive(Clone)]
struct AppState {
    hub: Arc<Hub>,
    config: Arc<ServiceConfig>,
}

pub fn router(hub: Arc<Hub>, config: ServiceConfig) -> Router {
    let ui_dir = config.ui_dir.clone();
    let state = AppState { hub, config: Arc::new(config) };
    let api = Router::new()
        .route("/api/devices", get(list_devices))
        .route("/api/devices/{id}", get(device_detail))
        .route("/api/devices/{id}/enumerate", post(enumerate))
        .route("/api/proximity", get(proximity))
        .route("/api/export/rssi.csv", get(export_rssi))
        .route("/api/export/capture.pcap", get(export_pcap))
        .route("/api/agents", get(agents))
        .route("/api/events", get(ws::events))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|source| ServiceError::BindFailed { addr: addr.to_owned(), source })
}

/// Serves until `cancel` fires.
pub async fn serve(
    listener: TcpListener,
    hub: Arc<Hub>,
    config: ServiceConfig,
    cancel: CancellationToken,
) -> Result<(), ServiceError> {
    let app = router(hub, config);
    axum::serve(listener, app.into_make_service_with_connect_info::<SocketAddr>())
        .with_graceful_shutdown(async move { cancel.cancelled().await })
        .await?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

/// Query parameters shared by `/api/devices` and `/api/proximity`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterQuery {
    pub manufacturer: Option<String>,
    pub min_rssi: Option<i8>,
    /// Seconds since the device was last heard.
    pub active_within_s: Option<u64>,
    /// Case-insensitive name substring.
    pub name: Option<String>,
}

impl From<FilterQuery> for DeviceFilter {
    fn from(q: FilterQuery) -> Self {
        DeviceFilter {
            manufacturer: q.manufacturer,
            min_rssi: q.min_rssi,
            active_within_us: q.active_within_s.map(|s| s.saturating_mul(1_000_000)),
            name_substring: q.name,
        }
    }
}

async fn list_devices(State(s): State<AppState>, Query(q): Query<FilterQuery>) -> Response {
    let filter = DeviceFilter::from(q);
    let now = s.hub.now_us();
    Json(s.hub.read(|store| store.query(&filter, now))).into_response()
}

#[derive(Debug, Deserialize)]
struct DetailQuery {
    history: Option<usize>,
}

async fn device_detail(State(s): State<AppState>, Path(id): Path<u64>, Query(q): Query<DetailQuery>) -> Response {
    let limit = q.history.unwrap_or(DEFAULT_HISTORY);
    match s.hub.read(|store| store.device(DeviceId(id)).map(|d| d.detail(limit))) {
        Some(detail) => Json(detail).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no device {id}")),
    }
}

async fn enumerate(State(s): State<AppState>, Path(id): Path<u64>) -> Response {
    let result = s.hub.enumerate(DeviceId(id));
    match result {
        Ok(()) => {
            let status = s.hub.read(|store| store.device(DeviceId(id)).map(|d| d.enumeration.clone()));
            (StatusCode::ACCEPTED, Json(status)).into_response()
        }
        Err(e) => {
            let code = match e {
                GattError::UnknownDevice(_) => StatusCode::NOT_FOUND,
                GattError::AlreadyPending(_) => StatusCode::CONFLICT,
                GattError::NoAgentOnline => StatusCode::SERVICE_UNAVAILABLE,
                GattError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
                GattError::Rejected(_) => StatusCode::BAD_GATEWAY,
            };
            error(code, e.to_string())
        }
    }
}

async fn proximity(State(s): State<AppState>, Query(q): Query<FilterQuery>) -> Response {
    let filter = DeviceFilter::from(q);
    let now = s.hub.now_us();
    Json(s.hub.read(|store| proximity_snapshot(store, &filter, &s.config.proximity, now))).into_response()
}

/// `devices` is a comma-separated id list; `from_us`/`to_us` bound a
/// half-open timestamp range.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RssiExportQuery {
    pub devices: Option<String>,
    pub from_us: Option<u64>,
    pub to_us: Option<u64>,
}

async fn export_rssi(State(s): State<AppState>, Query(q): Query<RssiExportQuery>) -> Response {
    let ids = match q.devices.as_deref() {
        None => None,
        Some(list) => match list.split(',').map(|t| t.trim().parse().map(DeviceId)).collect::<Result<BTreeSet<_>, _>>()
        {
            Ok(ids) => Some(ids),
            Err(_) => return error(StatusCode::BAD_REQUEST, format!("bad device list {list:?}")),
        },
    };
    let range = match (q.from_us, q.to_us) {
        (None, None) => None,
        (from, to) => Some(from.unwrap_or(0)..to.unwrap_or(u64::MAX)),
    };
    let body = s.hub.read(|store| store.export_rssi_csv(ids.as_ref(), range));
    ([(header::CONTENT_TYPE, "text/csv")], body).into_response()
}

async fn export_pcap(State(s): State<AppState>) -> Response {
    let mut body = Vec::new();
    match s.hub.read(|store| store.export_pcap(&mut body)) {
        Ok(_) => ([(header::CONTENT_TYPE, "application/vnd.tcpdump.pcap")], body).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn agents(State(s): State<AppState>) -> Response {
    Json(s.hub.agents()).into_response()
}
