//! TCP server that remote scanner agents dial into.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncWriteExt, BufReader, BufWriter};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::mpsc;
use tokio::time::Instant;
use tokio_util::sync::CancellationToken;
use tokio_util::task::TaskTracker;

use super::wall_clock_us;
use super::wire::{self, Line, LineReader, WireMessage, CAP_GATT, PROTO_VERSION};
use crate::gatt::GattService;
use crate::identity::{MacAddr, RawAdvertisement};

/// Default TCP port for agent connections.
pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub heartbeat_interval: Duration,
    /// Silent intervals tolerated before an agent is marked offline.
    pub missed_heartbeats: u32,
    pub max_line_len: usize,
    pub server_name: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval: Duration::from_secs(5),
            missed_heartbeats: 3,
            max_line_len: wire::MAX_LINE_LEN,
            server_name: "btlemap".into(),
        }
    }
}

impl ServerConfig {
    fn offline_after(&self) -> Duration {
        self.heartbeat_interval * self.missed_heartbeats
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    BindFailed { addr: String, source: std::io::Error },
    #[error("no agent is online")]
    NoAgentOnline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStatus {
    pub name: String,
    pub remote_addr: String,
    pub online: bool,
    pub capabilities: Vec<String>,
    /// Wall-clock microseconds since the Unix epoch.
    pub connected_at_us: u64,
    pub last_seen_us: u64,
    pub advertisements: u64,
    pub malformed_lines: u64,
}

/// Receives everything agents deliver. Called from connection tasks; one
/// agent's calls arrive in its send order.
pub trait AgentHandler: Send + Sync + 'static {
    fn advertisement(&self, agent: &str, adv: RawAdvertisement);
    fn gatt_result(&self, _agent: &str, _mac: MacAddr, _services: Vec<GattService>) {}
    fn agent_error(&self, _agent: &str, _code: &str, _message: &str) {}
    fn agent_status(&self, _status: &AgentStatus) {}
}

struct Connection {
    id: u64,
    tx: mpsc::UnboundedSender<WireMessage>,
    last_seen: Instant,
    close: CancellationToken,
}

struct AgentSlot {
    status: AgentStatus,
    conn: Option<Connection>,
}

struct Shared {
    config: ServerConfig,
    handler: Arc<dyn AgentHandler>,
    agents: Mutex<BTreeMap<String, AgentSlot>>,
    malformed: AtomicU64,
    next_conn: AtomicU64,
}

pub struct AgentServer {
    local_addr: SocketAddr,
    shared: Arc<Shared>,
    cancel: CancellationToken,
    tasks: TaskTracker,
}

impl AgentServer {
    pub async fn bind(
        addr: impl ToSocketAddrs + std::fmt::Debug,
        handler: Arc<dyn AgentHandler>,
        config: ServerConfig,
    ) -> Result<Self, ServerError> {
        let shown = format!("{addr:?}");
        let listener =
            TcpListener::bind(addr).await.map_err(|source| ServerError::BindFailed { addr: shown.clone(), source })?;
        let local_addr = listener.local_addr().map_err(|source| ServerError::BindFailed { addr: shown, source })?;
        let shared = Arc::new(Shared {
            config,
            handler,
            agents: Mutex::new(BTreeMap::new()),
            malformed: AtomicU64::new(0),
            next_conn: AtomicU64::new(1),
        });
        let cancel = CancellationToken::new();
        let tasks = TaskTracker::new();
        tasks.spawn(accept_loop(listener, shared.clone(), cancel.clone(), tasks.clone()));
        tasks.spawn(liveness_sweep(shared.clone(), cancel.clone()));
        tracing::info!(%local_addr, "agent server listening");
        Ok(Self { local_addr, shared, cancel, tasks })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Total invalid lines received across all connections.
    pub fn malformed_lines(&self) -> u64 {
        self.shared.malformed.load(Ordering::SeqCst)
    }

    pub fn agents(&self) -> Vec<AgentStatus> {
        self.shared.agents.lock().unwrap().values().map(|s| s.status.clone()).collect()
    }

    pub fn online_agents(&self) -> usize {
        self.shared.agents.lock().unwrap().values().filter(|s| s.status.online).count()
    }

    /// Sends an EnumerateRequest. Prefers `preferred` when it is online,
    /// then any GATT-capable agent, then any online agent. Returns the
    /// chosen agent's name.
    pub fn send_enumerate(&self, preferred: Option<&str>, mac: MacAddr) -> Result<String, ServerError> {
        let agents = self.shared.agents.lock().unwrap();
        let online = || agents.iter().filter(|(_, s)| s.status.online && s.conn.is_some());
        let chosen = preferred
            .and_then(|p| online().find(|(n, _)| n.as_str() == p))
            .or_else(|| online().find(|(_, s)| s.status.capabilities.iter().any(|c| c == CAP_GATT)))
            .or_else(|| online().next())
            .ok_or(ServerError::NoAgentOnline)?;
        let conn = chosen.1.conn.as_ref().expect("filtered on conn");
        conn.tx.send(WireMessage::EnumerateRequest { mac }).map_err(|_| ServerError::NoAgentOnline)?;
        Ok(chosen.0.clone())
    }

    /// Stops accepting, finishes the line each connection is handling and
    /// closes every connection.
    pub async fn shutdown(&self) {
        self.cancel.cancel();
        self.tasks.close();
        self.tasks.wait().await;
    }
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>, cancel: CancellationToken, tasks: TaskTracker) {
    loop {
        tokio::select! {
            _ = cancel.cancelled() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    tasks.spawn(handle_connection(stream, peer, shared.clone(), cancel.child_token()));
                }
                Err(e) => {
                    tracing::warn!(error = %e, "accept failed");
                    tokio::time::sleep(Duration::from_millis(50)).await;
                }
            },
        }
    }
}

async fn liveness_sweep(shared: Arc<Shared>, cancel: CancellationToken) {
    let period = (shared.config.heartbeat_interval / 5).clamp(Duration::from_millis(10), Duration::from_secs(1));
    let mut tick = tokio::time::interval(period);
    loop {
        tokio::select! {
            _ = cancel.cancelled() => break,
            _ = tick.tick() => {}
        }
        let mut expired = Vec::new();
        {
            let mut agents = shared.agents.lock().unwrap();
            for slot in agents.values_mut() {
                let silent = slot.conn.as_ref().is_some_and(|c| c.last_seen.elapsed() > shared.config.offline_after());
                if silent {
                    let conn = slot.conn.take().expect("checked");
                    conn.close.cancel();
                    slot.status.online = false;
                    expired.push(slot.status.clone());
                }
            }
        }
        for status in expired {
            tracing::info!(agent = %status.name, "agent missed heartbeats; marked offline");
            shared.handler.agent_status(&status);
        }
    }
}

impl Shared {
    fn count_malformed(&self, agent: Option<&str>) {
        self.malformed.fetch_add(1, Ordering::SeqCst);
        if let Some(name) = agent {
            if let Some(slot) = self.agents.lock().unwrap().get_mut(name) {
                slot.status.malformed_lines += 1;
            }
        }
    }

    /// Records traffic. Returns false when this connection no longer owns the slot.
    fn touch(&self, name: &str, conn_id: u64, adv: bool) -> bool {
        let mut agents = self.agents.lock().unwrap();
        let Some(slot) = agents.get_mut(name) else { return false };
        let Some(conn) = slot.conn.as_mut().filter(|c| c.id == conn_id) else { return false };
        conn.last_seen = Instant::now();
        slot.status.last_seen_us = wall_clock_us();
        if adv {
            slot.status.advertisements += 1;
        }
        true
    }

    fn register(&self, status: AgentStatus, conn: Connection) {
        let mut agents = self.agents.lock().unwrap();
        let slot =
            agents.entry(status.name.clone()).or_insert_with(|| AgentSlot { status: status.clone(), conn: None });
        if let Some(old) = slot.conn.take() {
            old.close.cancel();
        }
        let totals = (slot.status.advertisements, slot.status.malformed_lines);
        slot.status = AgentStatus { advertisements: totals.0, malformed_lines: totals.1, ..status };
        slot.conn = Some(conn);
        let snapshot = slot.status.clone();
        drop(agents);
        self.handler.agent_status(&snapshot);
    }

    fn unregister(&self, name: &str, conn_id: u64) {
        let mut agents = self.agents.lock().unwrap();
        let Some(slot) = agents.get_mut(name) else { return };
        if slot.conn.as_ref().is_some_and(|c| c.id == conn_id) {
            slot.conn = None;
            slot.status.online = false;
            let snapshot = slot.status.clone();
            drop(agents);
            self.handler.agent_status(&snapshot);
        }
    }
}

async fn handle_connection(stream: TcpStream, peer: SocketAddr, shared: Arc<Shared>, cancel: CancellationToken) {
    let _ = stream.set_nodelay(true);
    let (rd, wr) = stream.into_split();
    let max = shared.config.max_line_len;
    let mut reader = LineReader::new(BufReader::new(rd), max);
    let (tx, rx) = mpsc::unbounded_channel();
    let writer = tokio::spawn(write_loop(wr, rx, cancel.clone(), shared.config.heartbeat_interval));

    let hello = tokio::select! {
        _ = cancel.cancelled() => None,
        r = tokio::time::timeout(shared.config.offline_after(), reader.next_line()) => match r {
            Ok(Ok(Some(line))) => Some(line),
            _ => None,
        },
    };
    let Some(first) = hello else {
        drop(tx);
        let _ = writer.await;
        return;
    };
    let parsed = match first {
        Line::Complete(bytes) => WireMessage::parse(&bytes),
        Line::TooLong => Err("line too long".into()),
    };
    let (name, capabilities) = match parsed {
        Ok(WireMessage::Hello { proto_version, .. }) if proto_version != PROTO_VERSION => {
            shared.count_malformed(None);
            let _ = tx.send(WireMessage::error(
                wire::ERR_UNSUPPORTED_VERSION,
                format!("proto_version {proto_version} is not supported; this server speaks {PROTO_VERSION}"),
            ));
            drop(tx);
            let _ = writer.await;
            return;
        }
        Ok(WireMessage::Hello { agent, capabilities, .. }) if !agent.is_empty() => (agent, capabilities),
        other => {
            shared.count_malformed(None);
            let detail = match other {
                Ok(_) => "first message must be hello".to_owned(),
                Err(e) => format!("first message must be hello: {e}"),
            };
            let _ = tx.send(WireMessage::error(wire::ERR_EXPECTED_HELLO, detail));
            drop(tx);
            let _ = writer.await;
            return;
        }
    };

    let conn_id = shared.next_conn.fetch_add(1, Ordering::SeqCst);
    let now = wall_clock_us();
    shared.register(
        AgentStatus {
            name: name.clone(),
            remote_addr: peer.to_string(),
            online: true,
            capabilities,
            connected_at_us: now,
            last_seen_us: now,
            advertisements: 0,
            malformed_lines: 0,
        },
        Connection { id: conn_id, tx: tx.clone(), last_seen: Instant::now(), close: cancel.clone() },
    );
    tracing::info!(agent = %name, %peer, "agent connected");
    let _ = tx.send(WireMessage::Hello {
        agent: shared.config.server_name.clone(),
        proto_version: PROTO_VERSION,
        capabilities: vec![],
    });

    loop {
        let line = tokio::select! {
            _ = cancel.cancelled() => break,
            r = reader.next_line() => match r {
                Ok(Some(line)) => line,
                Ok(None) => break,
                Err(e) => {
                    tracing::debug!(agent = %name, error = %e, "read failed");
                    break;
                }
            },
        };
        if !shared.touch(&name, conn_id, false) {
            break;
        }
        let reject = |reason: String| {
            shared.count_malformed(Some(&name));
            let _ = tx.send(WireMessage::error(wire::ERR_MALFORMED, reason));
        };
        let bytes = match line {
            Line::Complete(b) => b,
            Line::TooLong => {
                reject(format!("line exceeds {max} bytes"));
                continue;
            }
        };
        match WireMessage::parse(&bytes) {
            Err(e) => reject(e),
            Ok(WireMessage::Adv(wa)) => {
                let adv = wa.into_raw(&name);
                match adv.validate() {
                    Ok(()) => {
                        shared.touch(&name, conn_id, true);
                        shared.handler.advertisement(&name, adv);
                    }
                    Err(e) => reject(e.to_string()),
                }
            }
            Ok(WireMessage::GattResult { mac, services }) => shared.handler.gatt_result(&name, mac, services),
            Ok(WireMessage::Error { code, message }) => shared.handler.agent_error(&name, &code, &message),
            Ok(WireMessage::Heartbeat { .. }) => {}
            Ok(WireMessage::Hello { .. }) => reject("duplicate hello".into()),
            Ok(WireMessage::EnumerateRequest { .. }) => reject("enumerate_request is server-to-agent only".into()),
        }
    }
    tracing::info!(agent = %name, "agent disconnected");
    shared.unregister(&name, conn_id);
    drop(tx);
    let _ = writer.await;
}

async fn write_loop(
    wr: OwnedWriteHalf,
    mut rx: mpsc::UnboundedReceiver<WireMessage>,
    cancel: CancellationToken,
    heartbeat: Duration,
) {
    let mut out = BufWriter::new(wr);
    let mut tick = tokio::time::interval_at(Instant::now() + heartbeat, heartbeat);
    loop {
        let msg = tokio::select! {
            m = rx.recv() => match m {
                Some(m) => m,
                None => break,
            },
            _ = tick.tick() => WireMessage::Heartbeat { ts: wall_clock_us() },
            _ = cancel.cancelled() => {
                while let Ok(m) = rx.try_recv() {
                    let _ = out.write_all(m.to_line().as_bytes()).await;
                }
                break;
            }
        };
        if out.write_all(msg.to_line().as_bytes()).await.is_err() {
            return;
        }
        if rx.is_empty() && out.flush().await.is_err() {
            return;
        }
    }
    let _ = out.flush().await;
    let _ = out.shutdown().await;
}

#[cfg(test)]
mod tests {
    use super::*;
    use tokio::io::AsyncBufReadExt;

    #[derive(Default)]
    struct Recorder {
        advs: Mutex<Vec<(String, RawAdvertisement)>>,
        statuses: Mutex<Vec<AgentStatus>>,
    }

    impl AgentHandler for Recorder {
        fn advertisement(&self, agent: &str, adv: RawAdvertisement) {
            self.advs.lock().unwrap().push((agent.to_owned(), adv));
        }
        fn agent_status(&self, status: &AgentStatus) {
            self.statuses.lock().unwrap().push(status.clone());
        }
    }

    async fn server(config: ServerConfig) -> (AgentServer, Arc<Recorder>) {
        let rec = Arc::new(Recorder::default());
        (AgentServer::bind("127.0.0.1:0", rec.clone(), config).await.unwrap(), rec)
    }

    async fn read_msg(r: &mut BufReader<tokio::net::tcp::OwnedReadHalf>) -> Option<WireMessage> {
        let mut line = String::new();
        if r.read_line(&mut line).await.ok()? == 0 {
            return None;
        }
        Some(WireMessage::parse(line.trim_end().as_bytes()).unwrap())
    }

    const HELLO: &str = "{\"type\":\"hello\",\"agent\":\"pi\",\"proto_version\":1}\n";

    #[tokio::test]
    async fn rejects_missing_hello() {
        let (srv, _) = server(ServerConfig::default()).await;
        let s = TcpStream::connect(srv.local_addr()).await.unwrap();
        let (rd, mut wr) = s.into_split();
        wr.write_all(b"{\"type\":\"heartbeat\",\"ts\":1}\n").await.unwrap();
        let mut rd = BufReader::new(rd);
        let Some(WireMessage::Error { code, .. }) = read_msg(&mut rd).await else { panic!() };
        assert_eq!(code, wire::ERR_EXPECTED_HELLO);
        assert_eq!(read_msg(&mut rd).await, None);
        assert_eq!(srv.malformed_lines(), 1);
        srv.shutdown().await;
    }

    #[tokio::test]
    async fn rejects_wrong_version() {
        let (srv, _) = server(ServerConfig::default()).await;
        let s = TcpStream::connect(srv.local_addr()).await.unwrap();
        let (rd, mut wr) = s.into_split();
        wr.write_all(b"{\"type\":\"hello\",\"agent\":\"pi\",\"proto_version\":2}\n").await.unwrap();
        let mut rd = BufReader::new(rd);
        let Some(WireMessage::Error { code, .. }) = read_msg(&mut rd).await else { panic!() };
        assert_eq!(code, wire::ERR_UNSUPPORTED_VERSION);
        srv.shutdown().await;
    }

    #[tokio::test]
    async fn forwards_and_counts() {
        let (srv, rec) = server(ServerConfig::default()).await;
        let s = TcpStream::connect(srv.local_addr()).await.unwrap();
        let (rd, mut wr) = s.into_split();
        let mut rd = BufReader::new(rd);
        wr.write_all(HELLO.as_bytes()).await.unwrap();
        assert!(matches!(read_msg(&mut rd).await, Some(WireMessage::Hello { .. })));
        let adv = r#"{"type":"adv","timestamp_us":5,"mac":"C0:01:02:03:04:05","pdu_type":"ADV_IND","channel":37,"rssi":-60,"payload":"020106"}"#;
        wr.write_all(format!("{adv}\nnot json\n\n{{\"type\":\"adv\",\"rssi\":1}}\n{adv}\n").as_bytes()).await.unwrap();
        for _ in 0..3 {
            assert!(matches!(read_msg(&mut rd).await, Some(WireMessage::Error { .. })));
        }
        assert_eq!(srv.malformed_lines(), 3);
        for _ in 0..100 {
            if rec.advs.lock().unwrap().len() == 2 {
                break;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        let advs = rec.advs.lock().unwrap().clone();
        assert_eq!(advs.len(), 2);
        assert_eq!(advs[0].0, "pi");
        assert_eq!(advs[0].1.source_id, "pi");
        assert_eq!(srv.agents()[0].advertisements, 2);
        drop(wr);
        srv.shutdown().await;
        assert!(!rec.statuses.lock().unwrap().last().unwrap().online);
    }

    #[tokio::test]
    async fn silent_agent_goes_offline() {
        let config = ServerConfig { heartbeat_interval: Duration::from_millis(100), ..Default::default() };
        let (srv, _) = server(config).await;
        let s = TcpStream::connect(srv.local_addr()).await.unwrap();
        let (rd, mut wr) = s.into_split();
        let mut rd = BufReader::new(rd);
        wr.write_all(HELLO.as_bytes()).await.unwrap();
        read_msg(&mut rd).await;
        assert_eq!(srv.online_agents(), 1);
        tokio::time::sleep(Duration::from_millis(500)).await;
        assert_eq!(srv.online_agents(), 0);
        assert!(matches!(srv.send_enumerate(None, MacAddr([0; 6])), Err(ServerError::NoAgentOnline)));
        srv.shutdown().await;
    }
}
