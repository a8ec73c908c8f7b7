//! Advertisement inputs: pcap files, timed replay, the scenario simulator
//! and remote scanner agents.

pub mod agent;
pub mod crc;
pub mod mdns;
pub mod pcap;
pub mod replay;
pub mod server;
pub mod simulate;
pub mod wire;

use std::time::{SystemTime, UNIX_EPOCH};

/// Wall-clock microseconds since the Unix epoch.
pub fn wall_clock_us() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_micros() as u64)
}
