//! Command-line entry points.
//!
//! Exit codes: 0 success, 2 usage error, 1 anything that failed at runtime.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, LineWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use thiserror::Error;
use tokio_util::sync::CancellationToken;

use crate::dissector::dissect;
use crate::hub::{replay_session, ClockMode, EnumerationTransport, Hub, SimulatedTransport};
use crate::identity::{AdvertisementView, DeviceId, DeviceStore};
use crate::proximity::PathLossConfig;
use crate::service::{self, ServiceConfig, DEFAULT_ADDR};
use crate::sources::agent::{run_agent, AgentConfig, AgentError, Backend};
use crate::sources::mdns;
use crate::sources::pcap::{read_pcap, PcapError};
use crate::sources::replay::{replay, replay_advertisements, ReplayError, Speed};
use crate::sources::server::{AgentServer, ServerConfig, ServerError, DEFAULT_PORT};
use crate::sources::simulate::{generate, Scenario, ScenarioError, SimulatedPeripherals};

/// Where `replay`, `simulate` and `listen` record, and where `export` reads.
pub const DEFAULT_SESSION: &str = ".btlemap/session.jsonl";
/// Served when `--ui-dir` is not given and this directory exists.
pub const DEFAULT_UI_DIR: &str = "ui/dist";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("session: {0}")]
    Session(String),
    #[error(transparent)]
    Pcap(#[from] PcapError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Service(#[from] service::ServiceError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Replay(ReplayError::InvalidSpeed(_)) => 2,
            _ => 1,
        }
    }
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::File { path: path.to_owned(), source }
}

#[derive(Debug, Parser)]
#[command(name = "btlemap", version, about = "Scan, dissect and map Bluetooth LE advertisers")]
pub struct Cli {
    /// TOML file whose keys mirror the long flags; flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the dissection tree of a hex payload or of every advertisement in a pcap.
    Dissect(DissectArgs),
    /// Feed a pcap into the store.
    Replay(ReplayArgs),
    /// Feed a generated scenario into the store.
    Simulate(SimulateArgs),
    /// Accept remote scanner agents.
    Listen(ListenArgs),
    /// Serve the HTTP/WebSocket API and UI, optionally over a recorded session.
    Serve(ServeArgs),
    /// Write RSSI CSV or a pcap from a recorded session.
    Export(ExportArgs),
    /// Run a scanner agent that streams to a server.
    Agent(AgentArgs),
}

#[derive(Debug, Args)]
pub struct DissectArgs {
    /// Hex payload, or path to a pcap file.
    pub input: String,
    /// Emit JSON instead of an indented tree.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PacingArgs {
    /// Playback speed factor (2 = twice real time).
    #[arg(long, conflicts_with = "max_speed")]
    pub speed: Option<f64>,
    /// Deliver as fast as possible.
    #[arg(long)]
    pub max_speed: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HttpArgs {
    /// HTTP listen address.
    #[arg(long, env = "BTLEMAP_ADDR")]
    pub addr: Option<String>,
    /// Directory of built UI assets.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SessionArgs {
    /// Do not start the HTTP service; print a summary when the source ends.
    #[arg(long)]
    pub headless: bool,
    /// Session recording path.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Time base for last-seen and staleness: capture timestamps or the wall clock.
    #[arg(long, value_enum)]
    pub clock: Option<ClockArg>,
    #[command(flatten)]
    pub http: HttpArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockArg {
    Capture,
    Wall,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// BLE link-layer capture (linktype 256).
    pub pcap: PathBuf,
    #[command(flatten)]
    pub pacing: PacingArgs,
    #[command(flatten)]
    pub session: SessionArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    pub scenario: PathBuf,
    /// Override the scenario duration, in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[command(flatten)]
    pub pacing: PacingArgs,
    #[command(flatten)]
    pub session: SessionArgs,
}

#[derive(Debug, Args)]
pub struct ListenArgs {
    /// Agent TCP port.
    #[arg(long)]
    pub port: Option<u16>,
    /// Skip the mDNS announcement.
    #[arg(long)]
    pub no_mdns: bool,
    /// Stop after this many seconds (default: until interrupted).
    #[arg(long)]
    pub duration: Option<f64>,
    #[command(flatten)]
    pub session: SessionArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Load a recorded session before serving.
    #[arg(long)]
    pub session: Option<PathBuf>,
    #[command(flatten)]
    pub http: HttpArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportKind {
    Rssi,
    Pcap,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub kind: ExportKind,
    pub path: PathBuf,
    /// Session recording to export from.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Comma-separated device ids (RSSI only).
    #[arg(long, value_delimiter = ',')]
    pub devices: Vec<u64>,
    /// Inclusive lower timestamp bound (RSSI only).
    #[arg(long)]
    pub from_us: Option<u64>,
    /// Exclusive upper timestamp bound (RSSI only).
    #[arg(long)]
    pub to_us: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Pcap,
    Sim,
    Radio,
}

#[derive(Debug, Args)]
pub struct AgentArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Capture or scenario file for the pcap and sim backends.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Server `host:port`; discovered via mDNS when absent.
    #[arg(long)]
    pub server: Option<String>,
    /// Agent name reported in the handshake [default: agent].
    #[arg(long)]
    pub name: Option<String>,
    /// Disconnect once the backend is exhausted.
    #[arg(long)]
    pub exit_when_done: bool,
    #[command(flatten)]
    pub pacing: PacingArgs,
}

/// Optional config file. Keys are the long flag names with `_` for `-`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub addr: Option<String>,
    pub ui_dir: Option<PathBuf>,
    pub headless: Option<bool>,
    pub session: Option<PathBuf>,
    pub clock: Option<ClockArg>,
    pub speed: Option<f64>,
    pub max_speed: Option<bool>,
    pub duration: Option<f64>,
    pub port: Option<u16>,
    pub no_mdns: Option<bool>,
    pub backend: Option<BackendArg>,
    pub input: Option<PathBuf>,
    pub server: Option<String>,
    pub name: Option<String>,
    pub exit_when_done: Option<bool>,
    pub proximity: Option<PathLossConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(file_err(path))?;
        let config: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(p) = &config.proximity {
            p.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        }
        Ok(config)
    }
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("btlemap: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("Try 'btlemap --help' for more information.");
            }
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Command::Dissect(a) = &cli.command {
        return run_dissect(a);
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Session(format!("starting runtime: {e}")))?;
    rt.block_on(async move {
        match cli.command {
            Command::Dissect(_) => unreachable!(),
            Command::Replay(a) => run_replay(a, &file).await,
            Command::Simulate(a) => run_simulate(a, &file).await,
            Command::Listen(a) => run_listen(a, &file).await,
            Command::Serve(a) => run_serve(a, &file).await,
            Command::Export(a) => run_export(a, &file),
            Command::Agent(a) => run_agent_cmd(a, &file).await,
        }
    })
}

/// Decodes a payload given on the command line. Whitespace and `:` are
/// ignored, as is a leading `0x`.
pub fn parse_hex_payload(input: &str) -> Result<Vec<u8>, CliError> {
    let cleaned: String = input.chars().filter(|c| !c.is_whitespace() && *c != ':').collect();
    let digits = cleaned.strip_prefix("0x").or_else(|| cleaned.strip_prefix("0X")).unwrap_or(&cleaned);
    if digits.len() % 2 == 1 {
        return Err(CliError::Usage(format!("hex payload has an odd number of digits ({})", digits.len())));
    }
    hex::decode(digits).map_err(|e| CliError::Usage(format!("'{input}' is neither a file nor a hex payload: {e}")))
}

fn run_dissect(a: &DissectArgs) -> Result<(), CliError> {
    let path = Path::new(&a.input);
    let mut out = std::io::stdout().lock();
    if path.is_file() {
        let f = File::open(path).map_err(file_err(path))?;
        let capture = read_pcap(BufReader::new(f), "file")?;
        if let Some(e) = &capture.truncated {
            eprintln!("btlemap: warning: {e}");
        }
        let views: Vec<AdvertisementView> = capture
            .advertisements
            .into_iter()
            .map(|adv| {
                let dissection = dissect(&adv.payload);
                AdvertisementView { advertisement: adv, dissection }
            })
            .collect();
        if a.json {
            serde_json::to_writer_pretty(&mut out, &views).expect("views serialize");
            writeln!(out).ok();
        } else {
            for (i, v) in views.iter().enumerate() {
                let adv = &v.advertisement;
                let channel = adv.channel.map(|c| c.to_string()).unwrap_or_else(|| "?".into());
                writeln!(
                    out,
                    "#{i} t={}us {} {} ch={channel} rssi={}dBm",
                    adv.timestamp_us,
                    adv.mac,
                    serde_json::to_value(adv.pdu_type).expect("pdu").as_str().unwrap_or_default(),
                    adv.rssi
                )
                .ok();
                write!(out, "{}", v.dissection.render_text()).ok();
            }
        }
        return Ok(());
    }
    let payload = parse_hex_payload(&a.input)?;
    let tree = dissect(&payload);
    if a.json {
        serde_json::to_writer_pretty(&mut out, &tree).expect("trees serialize");
        writeln!(out).ok();
    } else {
        write!(out, "{}", tree.render_text()).ok();
    }
    Ok(())
}

fn speed(p: &PacingArgs, file: &FileConfig) -> Result<Speed, CliError> {
    let s = if p.max_speed || (p.speed.is_none() && file.max_speed == Some(true)) {
        Speed::Unbounded
    } else {
        Speed::Factor(p.speed.or(file.speed).unwrap_or(1.0))
    };
    s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(s)
}

fn proximity_config(file: &FileConfig) -> Result<PathLossConfig, CliError> {
    let c = file.proximity.clone().unwrap_or_default();
    c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(c)
}

fn ctrl_c_token() -> CancellationToken {
    let token = CancellationToken::new();
    let t = token.clone();
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            eprintln!("btlemap: interrupted, draining");
            t.cancel();
        }
    });
    token
}

/// A hub recording to the session file, plus the HTTP service unless headless.
struct Session {
    hub: Arc<Hub>,
    path: PathBuf,
    headless: bool,
    http: Option<tokio::task::JoinHandle<Result<(), service::ServiceError>>>,
    cancel: CancellationToken,
}

impl Session {
    async fn start(a: &SessionArgs, file: &FileConfig, cancel: CancellationToken) -> Result<Self, CliError> {
        let clock = match a.clock.or(file.clock) {
            Some(ClockArg::Wall) => ClockMode::Wall,
            _ => ClockMode::Capture,
        };
        let hub = Hub::new(DeviceStore::default(), clock);
        let path = a.session.clone().or(file.session.clone()).unwrap_or_else(|| DEFAULT_SESSION.into());
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(file_err(dir))?;
        }
        let f = File::create(&path).map_err(file_err(&path))?;
        hub.record_to(Box::new(LineWriter::new(f)));
        let headless = a.headless || file.headless == Some(true);
        let http = if headless { None } else { Some(start_http(&a.http, file, hub.clone(), cancel.clone()).await?) };
        Ok(Self { hub, path, headless, http, cancel })
    }

    /// Headless: print the summary now. Otherwise keep serving until interrupted.
    async fn finish(self) -> Result<(), CliError> {
        self.hub.flush_recording().map_err(file_err(&self.path))?;
        if let Some(http) = self.http {
            eprintln!("btlemap: source finished; serving until interrupted");
            self.cancel.cancelled().await;
            http.await.expect("http task").map_err(CliError::from)?;
            self.hub.flush_recording().map_err(file_err(&self.path))?;
        }
        if self.headless {
            let (ads, devices, hash) = self.hub.read(|s| (s.total_ingested(), s.len(), s.partition_hash()));
            println!("advertisements: {ads}");
            println!("devices: {devices}");
            println!("partition: {hash}");
            println!("session: {}", self.path.display());
        }
        Ok(())
    }
}

async fn start_http(
    a: &HttpArgs,
    file: &FileConfig,
    hub: Arc<Hub>,
    cancel: CancellationToken,
) -> Result<tokio::task::JoinHandle<Result<(), service::ServiceError>>, CliError> {
    let addr = a.addr.clone().or(file.addr.clone()).unwrap_or_else(|| DEFAULT_ADDR.into());
    let ui_dir =
        a.ui_dir.clone().or(file.ui_dir.clone()).or_else(|| Some(PathBuf::from(DEFAULT_UI_DIR)).filter(|p| p.is_dir()));
    let config = ServiceConfig { proximity: proximity_config(file)?, ui_dir, ..ServiceConfig::default() };
    let listener = service::bind(&addr).await?;
    let local = listener.local_addr().map_err(|e| CliError::Service(e.into()))?;
    eprintln!("btlemap: serving http://{local}");
    Ok(tokio::spawn(service::serve(listener, hub, config, cancel)))
}

fn drained<T>(r: Result<T, ReplayError>) -> Result<(), CliError> {
    match r {
        Ok(_) | Err(ReplayError::Cancelled { .. }) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

async fn run_replay(a: ReplayArgs, file: &FileConfig) -> Result<(), CliError> {
    let speed = speed(&a.pacing, file)?;
    let f = File::open(&a.pcap).map_err(file_err(&a.pcap))?;
    let source = a.pcap.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "pcap".into());
    let capture = read_pcap(BufReader::new(f), &source)?;
    if let Some(e) = &capture.truncated {
        eprintln!("btlemap: warning: {e}; replaying the records before it");
    }
    if capture.skipped > 0 {
        eprintln!("btlemap: skipped {} non-advertising records", capture.skipped);
    }
    let cancel = ctrl_c_token();
    let session = Session::start(&a.session, file, cancel.clone()).await?;
    let hub = session.hub.clone();
    let ingest = move |adv| {
        if let Err(e) = hub.ingest(adv) {
            tracing::warn!(error = %e, "dropped advertisement");
        }
    };
    drained(replay_advertisements(capture.advertisements, speed, ingest, &cancel).await)?;
    session.finish().await
}

async fn run_simulate(a: SimulateArgs, file: &FileConfig) -> Result<(), CliError> {
    let speed = speed(&a.pacing, file)?;
    let mut scenario = Scenario::load(&a.scenario)?;
    if let Some(d) = a.duration.or(file.duration) {
        scenario.duration_s = d;
    }
    let advs = generate(&scenario)?;
    let peripherals = Arc::new(SimulatedTransport(Mutex::new(SimulatedPeripherals::new(&scenario))));
    let cancel = ctrl_c_token();
    let session = Session::start(&a.session, file, cancel.clone()).await?;
    let transport: Arc<dyn EnumerationTransport> = peripherals.clone();
    session.hub.set_transport(Arc::downgrade(&transport));
    let hub = session.hub.clone();
    let sink = move |s: crate::sources::simulate::SimulatedAdvertisement| {
        peripherals.0.lock().unwrap().note(s.adv.mac, s.device_index);
        if let Err(e) = hub.ingest(s.adv) {
            tracing::warn!(error = %e, "dropped advertisement");
        }
    };
    drained(replay(advs, |s| s.adv.timestamp_us, speed, sink, &cancel).await)?;
    let r = session.finish().await;
    drop(transport);
    r
}

async fn run_listen(a: ListenArgs, file: &FileConfig) -> Result<(), CliError> {
    let port = a.port.or(file.port).unwrap_or(DEFAULT_PORT);
    let cancel = ctrl_c_token();
    let session = Session::start(&a.session, file, cancel.clone()).await?;
    let handler: Arc<Hub> = session.hub.clone();
    let server = Arc::new(AgentServer::bind(("0.0.0.0", port), handler, ServerConfig::default()).await?);
    let transport: Arc<dyn EnumerationTransport> = server.clone();
    session.hub.set_transport(Arc::downgrade(&transport));
    let bound = server.local_addr().port();
    eprintln!("btlemap: accepting agents on port {bound}");
    let announcement = if a.no_mdns || file.no_mdns == Some(true) {
        None
    } else {
        match mdns::announce(&format!("btlemap-{bound}"), bound) {
            Ok(ann) => Some(ann),
            Err(e) => {
                eprintln!("btlemap: warning: {e}");
                None
            }
        }
    };
    match a.duration.or(file.duration) {
        Some(secs) if secs >= 0.0 && secs.is_finite() => {
            tokio::select! {
                _ = cancel.cancelled() => {}
                _ = tokio::time::sleep(Duration::from_secs_f64(secs)) => {}
            }
        }
        Some(secs) => return Err(CliError::Usage(format!("--duration must be non-negative, got {secs}"))),
        None => cancel.cancelled().await,
    }
    if let Some(ann) = announcement {
        ann.withdraw();
    }
    server.shutdown().await;
    drop(transport);
    // The source has ended; an HTTP service would stop right away, so
    // only the summary remains.
    cancel.cancel();
    session.finish().await
}

fn load_store(path: &Path) -> Result<DeviceStore, CliError> {
    let f = File::open(path).map_err(file_err(path))?;
    let mut store = DeviceStore::default();
    replay_session(BufReader::new(f), &mut store).map_err(|e| CliError::Session(format!("{}: {e}", path.display())))?;
    Ok(store)
}

async fn run_serve(a: ServeArgs, file: &FileConfig) -> Result<(), CliError> {
    let store = match a.session.as_ref() {
        Some(p) => load_store(p)?,
        None => DeviceStore::default(),
    };
    let hub = Hub::new(store, ClockMode::Capture);
    let cancel = ctrl_c_token();
    let http = start_http(&a.http, file, hub, cancel).await?;
    http.await.expect("http task")?;
    Ok(())
}

fn run_export(a: ExportArgs, file: &FileConfig) -> Result<(), CliError> {
    let session = a.session.clone().or(file.session.clone()).unwrap_or_else(|| DEFAULT_SESSION.into());
    let store = load_store(&session)?;
    let out = File::create(&a.path).map_err(file_err(&a.path))?;
    let mut out = BufWriter::new(out);
    match a.kind {
        ExportKind::Rssi => {
            let ids = (!a.devices.is_empty()).then(|| a.devices.iter().copied().map(DeviceId).collect());
            let range = match (a.from_us, a.to_us) {
                (None, None) => None,
                (from, to) => Some(from.unwrap_or(0)..to.unwrap_or(u64::MAX)),
            };
            out.write_all(&store.export_rssi_csv(ids.as_ref(), range)).map_err(file_err(&a.path))?;
        }
        ExportKind::Pcap => {
            if !a.devices.is_empty() || a.from_us.is_some() || a.to_us.is_some() {
                return Err(CliError::Usage("--devices/--from-us/--to-us apply to rssi exports only".into()));
            }
            let n = store.export_pcap(&mut out)?;
            eprintln!("btlemap: wrote {n} advertisements");
        }
    }
    out.flush().map_err(file_err(&a.path))?;
    Ok(())
}

async fn run_agent_cmd(a: AgentArgs, file: &FileConfig) -> Result<(), CliError> {
    let kind = a.backend.or(file.backend).ok_or_else(|| CliError::Usage("--backend is required".into()))?;
    let input = a.input.clone().or(file.input.clone());
    let need_input = || input.clone().ok_or_else(|| CliError::Usage("--input is required for this backend".into()));
    let backend = match kind {
        BackendArg::Pcap => Backend::Pcap(need_input()?),
        BackendArg::Sim => Backend::Simulated(need_input()?),
        BackendArg::Radio => Backend::Radio,
    };
    let mut config = AgentConfig::new(a.name.clone().or(file.name.clone()).unwrap_or_else(|| "agent".into()), backend);
    config.server = a.server.clone().or(file.server.clone());
    config.speed = speed(&a.pacing, file)?;
    config.exit_when_done = a.exit_when_done || file.exit_when_done == Some(true);
    let cancel = ctrl_c_token();
    match run_agent(config, cancel).await {
        Ok(r) => {
            println!("sent: {}", r.sent);
            println!("connections: {}", r.connections);
            println!("enumerations answered: {}", r.enumerations_answered);
            Ok(())
        }
        Err(AgentError::Cancelled) => Ok(()),
        Err(e) => Err(e.into()),
    }
}
