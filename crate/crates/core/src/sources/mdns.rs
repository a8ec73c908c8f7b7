//! DNS-SD announcement of the agent server and discovery of it by agents.

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::time::{Duration, Instant};

use mdns_sd::{ServiceDaemon, ServiceEvent, ServiceInfo};
use thiserror::Error;

use super::wire::PROTO_VERSION;

pub const SERVICE_TYPE: &str = "_btlemap._tcp.local.";
pub const TXT_PROTO_KEY: &str = "proto";

#[derive(Debug, Error)]
pub enum MdnsError {
    /// Multicast DNS could not be started. Callers should log and carry on.
    #[error("multicast DNS unavailable: {0}")]
    MulticastUnavailable(String),
    #[error("invalid service instance: {0}")]
    InvalidInstance(String),
}

/// A live announcement. Withdrawn (with goodbye packets) on
/// [`Announcement::withdraw`] or drop.
pub struct Announcement {
    daemon: Option<ServiceDaemon>,
    fullname: String,
    port: u16,
}

fn host_label(instance: &str) -> String {
    let label: String =
        instance.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect();
    let label = label.trim_matches('-');
    if label.is_empty() {
        "btlemap".into()
    } else {
        label.chars().take(63).collect()
    }
}

/// Publishes `instance` as a `_btlemap._tcp` service on `port` with TXT `proto=1`.
pub fn announce(instance: &str, port: u16) -> Result<Announcement, MdnsError> {
    if instance.is_empty() || instance.len() > 63 {
        return Err(MdnsError::InvalidInstance(format!("'{instance}' must be 1 to 63 bytes")));
    }
    let daemon = ServiceDaemon::new().map_err(|e| MdnsError::MulticastUnavailable(e.to_string()))?;
    let host = format!("{}.local.", host_label(instance));
    let proto = PROTO_VERSION.to_string();
    let info = ServiceInfo::new(SERVICE_TYPE, instance, &host, (), port, &[(TXT_PROTO_KEY, proto.as_str())][..])
        .map_err(|e| MdnsError::InvalidInstance(e.to_string()))?
        .enable_addr_auto();
    let fullname = info.get_fullname().to_owned();
    if let Err(e) = daemon.register(info) {
        let _ = daemon.shutdown();
        return Err(MdnsError::MulticastUnavailable(e.to_string()));
    }
    tracing::info!(%fullname, port, "announced via mDNS");
    Ok(Announcement { daemon: Some(daemon), fullname, port })
}

impl Announcement {
    pub fn fullname(&self) -> &str {
        &self.fullname
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    /// Unregisters and waits briefly for the goodbye to go out.
    pub fn withdraw(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let Some(daemon) = self.daemon.take() else { return };
        if let Ok(rx) = daemon.unregister(&self.fullname) {
            let _ = rx.recv_timeout(Duration::from_secs(2));
        }
        if let Ok(rx) = daemon.shutdown() {
            let _ = rx.recv_timeout(Duration::from_secs(2));
        }
        tracing::info!(fullname = %self.fullname, "mDNS announcement withdrawn");
    }
}

impl Drop for Announcement {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveredServer {
    pub fullname: String,
    pub port: u16,
    pub addresses: Vec<IpAddr>,
    pub proto: Option<String>,
}

impl DiscoveredServer {
    /// Socket addresses to try, IPv4 first.
    pub fn socket_addrs(&self) -> Vec<SocketAddr> {
        let mut addrs: Vec<SocketAddr> = self.addresses.iter().map(|ip| SocketAddr::new(*ip, self.port)).collect();
        addrs.sort_by_key(|a| (!a.is_ipv4(), *a));
        addrs
    }
}

/// Browses for `wait` and returns every server speaking our protocol
/// version. Blocking; run it off the async executor.
pub fn browse(wait: Duration) -> Result<Vec<DiscoveredServer>, MdnsError> {
    let daemon = ServiceDaemon::new().map_err(|e| MdnsError::MulticastUnavailable(e.to_string()))?;
    let rx = daemon.browse(SERVICE_TYPE).map_err(|e| MdnsError::MulticastUnavailable(e.to_string()))?;
    let deadline = Instant::now() + wait;
    let mut found = BTreeMap::new();
    while let Some(left) = deadline.checked_duration_since(Instant::now()) {
        match rx.recv_timeout(left) {
            Ok(ServiceEvent::ServiceResolved(info)) => {
                let proto = info.get_property_val_str(TXT_PROTO_KEY).map(str::to_owned);
                let mut addresses: Vec<IpAddr> = info.get_addresses().iter().map(|a| a.to_ip_addr()).collect();
                addresses.sort();
                found.insert(
                    info.get_fullname().to_owned(),
                    DiscoveredServer {
                        fullname: info.get_fullname().to_owned(),
                        port: info.get_port(),
                        addresses,
                        proto,
                    },
                );
            }
            Ok(ServiceEvent::ServiceRemoved(_, fullname)) => {
                found.remove(&fullname);
            }
            Ok(_) => {}
            Err(_) => break,
        }
    }
    let _ = daemon.stop_browse(SERVICE_TYPE);
    let _ = daemon.shutdown();
    let want = PROTO_VERSION.to_string();
    Ok(found.into_values().filter(|s| s.proto.as_deref() == Some(want.as_str())).collect())
}
