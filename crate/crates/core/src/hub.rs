//! Shared session state: the device store behind one lock, an ordered event
//! feed, agent status and GATT enumeration bookkeeping.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::gatt::{GattError, GattService, ENUMERATION_TIMEOUT_SECS};
use crate::identity::{
    DeviceId, DeviceStore, DeviceSummary, EnumerationStatus, IdentityError, MacAddr, RawAdvertisement, RssiSample,
    StoreEvent, StoreSnapshot,
};
use crate::sources::server::{AgentHandler, AgentStatus};
use crate::sources::simulate::SimulatedPeripherals;
use crate::sources::wall_clock_us;

/// Events buffered per subscriber before it is considered lagged.
pub const SUBSCRIBER_BUFFER: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum HubEvent {
    DeviceAppeared(DeviceSummary),
    DeviceUpdated(DeviceSummary),
    RssiSample(RssiSample),
    GattResult { device_id: DeviceId, services: Vec<GattService> },
    AgentStatus(AgentStatus),
}

/// What "now" means for recency and staleness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// The latest advertisement timestamp seen. Right for captures and
    /// simulations whose timestamps are not wall-clock.
    #[default]
    Capture,
    Wall,
}

/// One line of a recorded session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum SessionRecord {
    Adv(RawAdvertisement),
    Gatt { mac: MacAddr, at_us: u64, services: Vec<GattService> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dispatch {
    /// Request sent to the named agent; the result arrives later.
    Sent { agent: String },
    /// Answered synchronously (in-process simulated peripherals).
    Immediate(Vec<GattService>),
}

/// Carries enumeration requests to something that can connect to devices.
pub trait EnumerationTransport: Send + Sync + 'static {
    fn dispatch(&self, preferred_agent: Option<&str>, mac: MacAddr) -> Result<Dispatch, GattError>;
}

impl EnumerationTransport for crate::sources::server::AgentServer {
    fn dispatch(&self, preferred_agent: Option<&str>, mac: MacAddr) -> Result<Dispatch, GattError> {
        self.send_enumerate(preferred_agent, mac)
            .map(|agent| Dispatch::Sent { agent })
            .map_err(|_| GattError::NoAgentOnline)
    }
}

/// Answers from scenario GATT definitions without any network hop.
pub struct SimulatedTransport(pub Mutex<SimulatedPeripherals>);

impl EnumerationTransport for SimulatedTransport {
    fn dispatch(&self, _: Option<&str>, mac: MacAddr) -> Result<Dispatch, GattError> {
        let peripherals = self.0.lock().unwrap();
        match peripherals.services_for(mac) {
            Some(services) => Ok(Dispatch::Immediate(services.to_vec())),
            None => Err(GattError::Rejected(format!("no simulated peripheral uses {mac}"))),
        }
    }
}

struct PendingEnumeration {
    device_id: DeviceId,
    agent: String,
    ticket: u64,
}

#[derive(Default)]
struct Enumerations {
    by_mac: HashMap<MacAddr, PendingEnumeration>,
    /// Per agent, MACs in request order; agent errors carry no MAC and
    /// resolve the oldest.
    per_agent: HashMap<String, VecDeque<MacAddr>>,
    next_ticket: u64,
}

impl Enumerations {
    fn remove(&mut self, mac: MacAddr) -> Option<PendingEnumeration> {
        let p = self.by_mac.remove(&mac)?;
        if let Some(q) = self.per_agent.get_mut(&p.agent) {
            q.retain(|m| *m != mac);
        }
        Some(p)
    }
}

pub struct Hub {
    store: Mutex<DeviceStore>,
    events: broadcast::Sender<Arc<HubEvent>>,
    clock: ClockMode,
    agents: Mutex<BTreeMap<String, AgentStatus>>,
    transport: RwLock<Option<Weak<dyn EnumerationTransport>>>,
    enumerations: Mutex<Enumerations>,
    enumeration_timeout: Duration,
    recorder: Mutex<Option<Box<dyn Write + Send>>>,
}

impl Hub {
    pub fn new(store: DeviceStore, clock: ClockMode) -> Arc<Self> {
        Self::with_enumeration_timeout(store, clock, Duration::from_secs(ENUMERATION_TIMEOUT_SECS))
    }

    pub fn with_enumeration_timeout(store: DeviceStore, clock: ClockMode, timeout: Duration) -> Arc<Self> {
        let (events, _) = broadcast::channel(SUBSCRIBER_BUFFER);
        Arc::new(Self {
            store: Mutex::new(store),
            events,
            clock,
            agents: Mutex::new(BTreeMap::new()),
            transport: RwLock::new(None),
            enumerations: Mutex::new(Enumerations::default()),
            enumeration_timeout: timeout,
            recorder: Mutex::new(None),
        })
    }

    /// The transport is held weakly so a server that owns this hub as its
    /// handler does not form a cycle.
    pub fn set_transport(&self, transport: Weak<dyn EnumerationTransport>) {
        *self.transport.write().unwrap() = Some(transport);
    }

    /// Appends every accepted advertisement and GATT result as JSON lines.
    pub fn record_to(&self, out: Box<dyn Write + Send>) {
        *self.recorder.lock().unwrap() = Some(out);
    }

    pub fn flush_recording(&self) -> std::io::Result<()> {
        match self.recorder.lock().unwrap().as_mut() {
            Some(w) => w.flush(),
            None => Ok(()),
        }
    }

    fn record(&self, rec: &SessionRecord) {
        if let Some(w) = self.recorder.lock().unwrap().as_mut() {
            let line = serde_json::to_string(rec).expect("session records serialize");
            if let Err(e) = writeln!(w, "{line}") {
                tracing::warn!(error = %e, "session recording failed");
            }
        }
    }

    pub fn now_us(&self) -> u64 {
        self.now_locked(&self.store.lock().unwrap())
    }

    pub fn clock(&self) -> ClockMode {
        self.clock
    }

    /// Runs `f` under the store lock.
    pub fn read<T>(&self, f: impl FnOnce(&DeviceStore) -> T) -> T {
        f(&self.store.lock().unwrap())
    }

    /// Current store contents plus a receiver positioned right after them.
    pub fn subscribe(&self) -> (StoreSnapshot, broadcast::Receiver<Arc<HubEvent>>) {
        let store = self.store.lock().unwrap();
        let rx = self.events.subscribe();
        let now = self.now_locked(&store);
        (store.snapshot(now), rx)
    }

    fn now_locked(&self, store: &DeviceStore) -> u64 {
        match self.clock {
            ClockMode::Wall => wall_clock_us(),
            ClockMode::Capture => store.latest_timestamp().unwrap_or(0),
        }
    }

    fn publish(&self, store: &DeviceStore, events: Vec<StoreEvent>) {
        for e in events {
            let ev = match e {
                StoreEvent::DeviceAppeared(id) => HubEvent::DeviceAppeared(store.device(id).expect("exists").summary()),
                StoreEvent::DeviceUpdated(id) => HubEvent::DeviceUpdated(store.device(id).expect("exists").summary()),
                StoreEvent::RssiSampleAdded(s) => HubEvent::RssiSample(s),
                StoreEvent::GattResult(id) => HubEvent::GattResult {
                    device_id: id,
                    services: store.device(id).expect("exists").gatt_services.clone(),
                },
            };
            // No receivers is fine.
            let _ = self.events.send(Arc::new(ev));
        }
    }

    pub fn ingest(&self, adv: RawAdvertisement) -> Result<DeviceId, IdentityError> {
        let mut store = self.store.lock().unwrap();
        let rec = SessionRecord::Adv(adv.clone());
        let (id, events) = store.ingest(adv)?;
        self.publish(&store, events);
        drop(store);
        self.record(&rec);
        Ok(id)
    }

    /// Starts an enumeration. Results arrive through [`Hub::apply_gatt_result`].
    pub fn enumerate(self: &Arc<Self>, id: DeviceId) -> Result<(), GattError> {
        let (mac, preferred) = {
            let store = self.store.lock().unwrap();
            let d = store.device(id).ok_or(GattError::UnknownDevice(id.0))?;
            if matches!(d.enumeration, EnumerationStatus::Pending { .. }) {
                return Err(GattError::AlreadyPending(id.0));
            }
            (d.current_mac(), d.last_source.clone())
        };
        let transport =
            self.transport.read().unwrap().as_ref().and_then(Weak::upgrade).ok_or(GattError::NoAgentOnline)?;
        match transport.dispatch(Some(&preferred), mac)? {
            Dispatch::Immediate(services) => {
                self.apply_for_device(id, mac, services);
                Ok(())
            }
            Dispatch::Sent { agent } => {
                let ticket = {
                    let mut en = self.enumerations.lock().unwrap();
                    en.next_ticket += 1;
                    let ticket = en.next_ticket;
                    en.by_mac.insert(mac, PendingEnumeration { device_id: id, agent: agent.clone(), ticket });
                    en.per_agent.entry(agent).or_default().push_back(mac);
                    ticket
                };
                let mut store = self.store.lock().unwrap();
                let since_us = self.now_locked(&store);
                if let Some(ev) = store.set_enumeration(id, EnumerationStatus::Pending { since_us }) {
                    self.publish(&store, vec![ev]);
                }
                drop(store);
                self.arm_timeout(mac, ticket);
                Ok(())
            }
        }
    }

    fn arm_timeout(self: &Arc<Self>, mac: MacAddr, ticket: u64) {
        let Ok(rt) = tokio::runtime::Handle::try_current() else { return };
        let hub = Arc::downgrade(self);
        let wait = self.enumeration_timeout;
        rt.spawn(async move {
            tokio::time::sleep(wait).await;
            let Some(hub) = hub.upgrade() else { return };
            let expired = {
                let mut en = hub.enumerations.lock().unwrap();
                match en.by_mac.get(&mac) {
                    Some(p) if p.ticket == ticket => en.remove(mac),
                    _ => None,
                }
            };
            if let Some(p) = expired {
                hub.fail(p.device_id, GattError::Timeout(wait.as_secs()).to_string());
            }
        });
    }

    fn fail(&self, id: DeviceId, reason: String) {
        let mut store = self.store.lock().unwrap();
        let at_us = self.now_locked(&store);
        if let Some(ev) = store.set_enumeration(id, EnumerationStatus::Failed { at_us, reason }) {
            self.publish(&store, vec![ev]);
        }
    }

    fn apply_for_device(&self, id: DeviceId, mac: MacAddr, services: Vec<GattService>) {
        let mut store = self.store.lock().unwrap();
        let at_us = self.now_locked(&store);
        if let Some(events) = store.apply_gatt(id, services.clone(), at_us) {
            self.publish(&store, events);
            drop(store);
            self.record(&SessionRecord::Gatt { mac, at_us, services });
        }
    }

    /// A GATT result for `mac`: the pending request's device if any,
    /// otherwise whichever device the MAC currently belongs to.
    pub fn apply_gatt_result(&self, mac: MacAddr, services: Vec<GattService>) -> Option<DeviceId> {
        let pending = self.enumerations.lock().unwrap().remove(mac);
        let id = pending.map(|p| p.device_id).or_else(|| self.store.lock().unwrap().device_by_mac(mac))?;
        self.apply_for_device(id, mac, services);
        Some(id)
    }

    pub fn agents(&self) -> Vec<AgentStatus> {
        self.agents.lock().unwrap().values().cloned().collect()
    }
}

impl AgentHandler for Hub {
    fn advertisement(&self, agent: &str, adv: RawAdvertisement) {
        if let Err(e) = self.ingest(adv) {
            tracing::debug!(%agent, error = %e, "dropped advertisement");
        }
    }

    fn gatt_result(&self, _agent: &str, mac: MacAddr, services: Vec<GattService>) {
        self.apply_gatt_result(mac, services);
    }

    fn agent_error(&self, agent: &str, code: &str, message: &str) {
        let failed = {
            let mut en = self.enumerations.lock().unwrap();
            let oldest = en.per_agent.get_mut(agent).and_then(VecDeque::pop_front);
            oldest.and_then(|mac| en.remove(mac))
        };
        match failed {
            Some(p) => self.fail(p.device_id, GattError::Rejected(format!("{code}: {message}")).to_string()),
            None => tracing::warn!(%agent, %code, %message, "agent reported an error"),
        }
    }

    fn agent_status(&self, status: &AgentStatus) {
        self.agents.lock().unwrap().insert(status.name.clone(), status.clone());
        let _ = self.events.send(Arc::new(HubEvent::AgentStatus(status.clone())));
    }
}

/// Reads a recorded session back into a store, in recorded order.
pub fn replay_session(reader: impl std::io::BufRead, store: &mut DeviceStore) -> Result<usize, String> {
    let mut n = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SessionRecord>(&line).map_err(|e| format!("line {}: {e}", i + 1))? {
            SessionRecord::Adv(adv) => {
                store.ingest(adv).map_err(|e| format!("line {}: {e}", i + 1))?;
                n += 1;
            }
            SessionRecord::Gatt { mac, at_us, services } => {
                if let Some(id) = store.device_by_mac(mac) {
                    store.apply_gatt(id, services, at_us);
                }
            }
        }
    }
    Ok(n)
}
