//! Remote scanner agent: reads a backend and streams it to a server.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;
use tokio::io::{AsyncWriteExt, BufReader, BufWriter};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::time::Instant;
use tokio_util::sync::CancellationToken;

use super::mdns;
use super::pcap::read_pcap;
use super::replay::{delivery_order, Speed};
use super::simulate::{generate, Scenario, SimulatedPeripherals};
use super::wire::{
    self, Line, LineReader, WireAdvertisement, WireMessage, CAP_ADVERTISEMENTS, CAP_GATT, PROTO_VERSION,
};
use crate::identity::{MacAddr, RawAdvertisement};

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Pcap(PathBuf),
    Simulated(PathBuf),
    /// Live capture from the host radio. Not implemented.
    Radio,
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub name: String,
    pub backend: Backend,
    /// Explicit server; otherwise found via mDNS.
    pub server: Option<String>,
    pub speed: Speed,
    pub heartbeat_interval: Duration,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
    pub browse_timeout: Duration,
    /// Return once every advertisement has been sent instead of idling
    /// on the connection to answer enumeration requests.
    pub exit_when_done: bool,
}

impl AgentConfig {
    pub fn new(name: impl Into<String>, backend: Backend) -> Self {
        Self {
            name: name.into(),
            backend,
            server: None,
            speed: Speed::Factor(1.0),
            heartbeat_interval: Duration::from_secs(5),
            backoff_initial: Duration::from_secs(1),
            backoff_max: Duration::from_secs(60),
            browse_timeout: Duration::from_secs(3),
            exit_when_done: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("backend '{0}' is not supported by this build")]
    UnsupportedBackend(String),
    #[error("loading backend: {0}")]
    Backend(String),
    #[error("server rejected the agent: {code}: {message}")]
    Rejected { code: String, message: String },
    #[error("agent stopped")]
    Cancelled,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentReport {
    pub sent: usize,
    pub connections: usize,
    pub enumerations_answered: usize,
}

struct Feed {
    advs: Vec<RawAdvertisement>,
    peripherals: Option<(Vec<usize>, SimulatedPeripherals)>,
}

impl Feed {
    fn load(backend: &Backend, name: &str) -> Result<Self, AgentError> {
        match backend {
            Backend::Radio => Err(AgentError::UnsupportedBackend("radio".into())),
            Backend::Pcap(path) => {
                let file =
                    std::fs::File::open(path).map_err(|e| AgentError::Backend(format!("{}: {e}", path.display())))?;
                let capture = read_pcap(std::io::BufReader::new(file), name)
                    .map_err(|e| AgentError::Backend(format!("{}: {e}", path.display())))?;
                if let Some(e) = &capture.truncated {
                    tracing::warn!(error = %e, "capture truncated; streaming the readable prefix");
                }
                Ok(Self { advs: delivery_order(capture.advertisements), peripherals: None })
            }
            Backend::Simulated(path) => {
                let scenario =
                    Scenario::load(path).map_err(|e| AgentError::Backend(format!("{}: {e}", path.display())))?;
                let sims = generate(&scenario).map_err(|e| AgentError::Backend(e.to_string()))?;
                let peripherals = SimulatedPeripherals::new(&scenario);
                let indices = sims.iter().map(|s| s.device_index).collect();
                let advs = sims.into_iter().map(|s| s.adv).collect();
                Ok(Self { advs, peripherals: Some((indices, peripherals)) })
            }
        }
    }

    fn capabilities(&self) -> Vec<String> {
        let mut caps = vec![CAP_ADVERTISEMENTS.to_owned()];
        if self.peripherals.is_some() {
            caps.push(CAP_GATT.to_owned());
        }
        caps
    }

    fn mark_sent(&mut self, i: usize) {
        if let Some((indices, peripherals)) = &mut self.peripherals {
            peripherals.note(self.advs[i].mac, indices[i]);
        }
    }

    fn answer(&self, mac: MacAddr) -> WireMessage {
        match &self.peripherals {
            None => WireMessage::error(wire::ERR_ENUMERATE_UNSUPPORTED, "pcap backend cannot connect to devices"),
            Some((_, p)) => match p.services_for(mac) {
                Some(services) => WireMessage::GattResult { mac, services: services.to_vec() },
                None => WireMessage::error(wire::ERR_UNKNOWN_DEVICE, format!("no simulated peripheral uses {mac}")),
            },
        }
    }
}

enum SessionEnd {
    Done,
    Disconnected(String),
}

/// Runs until the feed is exhausted (with `exit_when_done`) or `cancel` fires.
pub async fn run_agent(config: AgentConfig, cancel: CancellationToken) -> Result<AgentReport, AgentError> {
    config.speed.validate().map_err(|e| AgentError::Backend(e.to_string()))?;
    let mut feed = Feed::load(&config.backend, &config.name)?;
    let mut report = AgentReport::default();
    let mut backoff = config.backoff_initial;
    loop {
        if cancel.is_cancelled() {
            return Err(AgentError::Cancelled);
        }
        let stream = match connect(&config).await {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(error = %e, retry_in = ?backoff, "no server reachable");
                tokio::select! {
                    _ = cancel.cancelled() => return Err(AgentError::Cancelled),
                    _ = tokio::time::sleep(backoff) => {}
                }
                backoff = (backoff * 2).min(config.backoff_max);
                continue;
            }
        };
        report.connections += 1;
        match session(stream, &config, &mut feed, &mut report, &mut backoff, &cancel).await? {
            SessionEnd::Done => return Ok(report),
            SessionEnd::Disconnected(why) => {
                tracing::warn!(reason = %why, resume_at = report.sent, retry_in = ?backoff, "disconnected");
                tokio::select! {
                    _ = cancel.cancelled() => return Err(AgentError::Cancelled),
                    _ = tokio::time::sleep(backoff) => {}
                }
                backoff = (backoff * 2).min(config.backoff_max);
            }
        }
    }
}

async fn connect(config: &AgentConfig) -> Result<TcpStream, String> {
    let candidates: Vec<SocketAddr> = match &config.server {
        Some(addr) => tokio::net::lookup_host(addr.as_str()).await.map_err(|e| format!("{addr}: {e}"))?.collect(),
        None => {
            let wait = config.browse_timeout;
            let found = tokio::task::spawn_blocking(move || mdns::browse(wait))
                .await
                .map_err(|e| e.to_string())?
                .map_err(|e| e.to_string())?;
            found.iter().flat_map(|s| s.socket_addrs()).collect()
        }
    };
    if candidates.is_empty() {
        return Err("no server found via mDNS".into());
    }
    let mut last = String::new();
    for addr in candidates {
        match tokio::time::timeout(Duration::from_secs(5), TcpStream::connect(addr)).await {
            Ok(Ok(s)) => {
                let _ = s.set_nodelay(true);
                tracing::info!(%addr, "connected");
                return Ok(s);
            }
            Ok(Err(e)) => last = format!("{addr}: {e}"),
            Err(_) => last = format!("{addr}: connect timed out"),
        }
    }
    Err(last)
}

async fn send(out: &mut BufWriter<OwnedWriteHalf>, msg: &WireMessage) -> std::io::Result<()> {
    out.write_all(msg.to_line().as_bytes()).await?;
    out.flush().await
}

async fn session(
    stream: TcpStream,
    config: &AgentConfig,
    feed: &mut Feed,
    report: &mut AgentReport,
    backoff: &mut Duration,
    cancel: &CancellationToken,
) -> Result<SessionEnd, AgentError> {
    let (rd, wr) = stream.into_split();
    let mut reader = LineReader::new(BufReader::new(rd), wire::MAX_LINE_LEN);
    let mut out = BufWriter::new(wr);
    let hello = WireMessage::Hello {
        agent: config.name.clone(),
        proto_version: PROTO_VERSION,
        capabilities: feed.capabilities(),
    };
    if let Err(e) = send(&mut out, &hello).await {
        return Ok(SessionEnd::Disconnected(e.to_string()));
    }
    match next_message(&mut reader, config.heartbeat_interval * 3).await {
        Ok(WireMessage::Hello { .. }) => {}
        Ok(WireMessage::Error { code, message }) => return Err(AgentError::Rejected { code, message }),
        Ok(other) => return Ok(SessionEnd::Disconnected(format!("unexpected handshake reply {other:?}"))),
        Err(e) => return Ok(SessionEnd::Disconnected(e)),
    }
    *backoff = config.backoff_initial;

    let server_timeout = config.heartbeat_interval * 3;
    let mut last_heard = Instant::now();
    let mut heartbeat = tokio::time::interval_at(Instant::now() + config.heartbeat_interval, config.heartbeat_interval);
    // Pacing restarts at the resume point so a reconnect does not burst.
    let anchor = (Instant::now(), feed.advs.get(report.sent).map_or(0, |a| a.timestamp_us));
    loop {
        let due = feed.advs.get(report.sent).map(|a| {
            let offset = config.speed.delay(a.timestamp_us.saturating_sub(anchor.1));
            offset.map_or_else(Instant::now, |d| anchor.0 + d)
        });
        if due.is_none() && config.exit_when_done {
            let _ = out.flush().await;
            let _ = out.shutdown().await;
            // Let the server read to EOF before the socket goes away.
            let _ = tokio::time::timeout(Duration::from_secs(5), drain(&mut reader)).await;
            return Ok(SessionEnd::Done);
        }
        let send_next = async {
            match due {
                Some(at) => tokio::time::sleep_until(at).await,
                None => std::future::pending().await,
            }
        };
        tokio::select! {
            biased;
            _ = cancel.cancelled() => {
                let _ = out.shutdown().await;
                return Err(AgentError::Cancelled);
            }
            line = reader.next_line() => {
                let bytes = match line {
                    Ok(Some(Line::Complete(b))) => b,
                    Ok(Some(Line::TooLong)) => continue,
                    Ok(None) => return Ok(SessionEnd::Disconnected("server closed the connection".into())),
                    Err(e) => return Ok(SessionEnd::Disconnected(e.to_string())),
                };
                last_heard = Instant::now();
                match WireMessage::parse(&bytes) {
                    Ok(WireMessage::EnumerateRequest { mac }) => {
                        let reply = feed.answer(mac);
                        if let Err(e) = send(&mut out, &reply).await {
                            return Ok(SessionEnd::Disconnected(e.to_string()));
                        }
                        report.enumerations_answered += 1;
                    }
                    Ok(WireMessage::Error { code, message }) => tracing::warn!(%code, %message, "server reported an error"),
                    Ok(_) => {}
                    Err(e) => tracing::debug!(error = %e, "ignoring unparseable server line"),
                }
            }
            _ = heartbeat.tick() => {
                if last_heard.elapsed() > server_timeout {
                    return Ok(SessionEnd::Disconnected("server went silent".into()));
                }
                let ts = super::wall_clock_us();
                if let Err(e) = send(&mut out, &WireMessage::Heartbeat { ts }).await {
                    return Ok(SessionEnd::Disconnected(e.to_string()));
                }
            }
            _ = send_next => {
                let i = report.sent;
                let msg = WireMessage::Adv(WireAdvertisement::from(&feed.advs[i]));
                if let Err(e) = out.write_all(msg.to_line().as_bytes()).await {
                    return Ok(SessionEnd::Disconnected(e.to_string()));
                }
                feed.mark_sent(i);
                report.sent += 1;
                let next_due_now = feed.advs.get(report.sent).is_some_and(|a| {
                    config.speed.delay(a.timestamp_us.saturating_sub(anchor.1)).is_none_or(|d| anchor.0 + d <= Instant::now())
                });
                if !next_due_now {
                    if let Err(e) = out.flush().await {
                        return Ok(SessionEnd::Disconnected(e.to_string()));
                    }
                }
            }
        }
    }
}

async fn next_message(
    reader: &mut LineReader<BufReader<OwnedReadHalf>>,
    wait: Duration,
) -> Result<WireMessage, String> {
    match tokio::time::timeout(wait, reader.next_line()).await {
        Err(_) => Err("no handshake reply".into()),
        Ok(Err(e)) => Err(e.to_string()),
        Ok(Ok(None)) => Err("server closed the connection".into()),
        Ok(Ok(Some(Line::TooLong))) => Err("oversized handshake reply".into()),
        Ok(Ok(Some(Line::Complete(b)))) => WireMessage::parse(&b),
    }
}

async fn drain(reader: &mut LineReader<BufReader<OwnedReadHalf>>) {
    while let Ok(Some(_)) = reader.next_line().await {}
}
