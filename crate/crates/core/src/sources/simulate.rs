//! Scripted, seeded advertisement generator.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dissector::MAX_PAYLOAD_LEN;
use crate::gatt::GattService;
use crate::identity::{
    hex_bytes, AddressType, MacAddr, PduType, RawAdvertisement, ADVERTISING_CHANNELS, RSSI_MAX, RSSI_MIN,
};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Waypoint {
    pub t_s: f64,
    pub distance_m: f64,
}

impl From<(f64, f64)> for Waypoint {
    fn from((t_s, distance_m): (f64, f64)) -> Self {
        Self { t_s, distance_m }
    }
}

impl From<Waypoint> for (f64, f64) {
    fn from(w: Waypoint) -> Self {
        (w.t_s, w.distance_m)
    }
}

fn default_version() -> u32 {
    SCENARIO_VERSION
}

fn default_exponent() -> f64 {
    2.0
}

fn default_source() -> String {
    "sim".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_version")]
    pub version: u32,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub noise_sigma_db: f64,
    #[serde(default = "default_exponent")]
    pub path_loss_exponent: f64,
    /// Timestamp of t = 0.
    #[serde(default)]
    pub start_time_us: u64,
    #[serde(default = "default_source")]
    pub source_id: String,
    pub devices: Vec<ScenarioDevice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDevice {
    pub name: String,
    pub initial_mac: MacAddr,
    #[serde(default)]
    pub address_type: AddressType,
    #[serde(default)]
    pub mac_rotation_period_s: Option<f64>,
    pub adv_interval_ms: f64,
    #[serde(with = "hex_bytes")]
    pub payload_template: Vec<u8>,
    pub tx_power_dbm: f64,
    pub path: Vec<Waypoint>,
    #[serde(default = "default_pdu")]
    pub pdu_type: PduType,
    /// Services a simulated peripheral reports when enumerated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gatt: Vec<GattService>,
}

fn default_pdu() -> PduType {
    PduType::AdvInd
}

/// A generated advertisement plus the ground truth behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedAdvertisement {
    pub adv: RawAdvertisement,
    pub device_index: usize,
    pub true_distance_m: f64,
    /// RSSI before rounding to whole dBm.
    pub rssi_exact: f64,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(json)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::InvalidScenario(msg));
        if self.version != SCENARIO_VERSION {
            return bad(format!("version {} is not supported", self.version));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s must be non-negative, got {}", self.duration_s));
        }
        if !(self.noise_sigma_db >= 0.0 && self.noise_sigma_db.is_finite()) {
            return bad(format!("noise_sigma_db must be non-negative, got {}", self.noise_sigma_db));
        }
        if !(self.path_loss_exponent > 0.0 && self.path_loss_exponent.is_finite()) {
            return bad(format!("path_loss_exponent must be positive, got {}", self.path_loss_exponent));
        }
        for d in &self.devices {
            if !(d.adv_interval_ms > 0.0 && d.adv_interval_ms.is_finite()) {
                return bad(format!("device '{}': adv_interval_ms must be positive", d.name));
            }
            if d.payload_template.len() > MAX_PAYLOAD_LEN {
                return bad(format!("device '{}': payload_template exceeds {MAX_PAYLOAD_LEN} bytes", d.name));
            }
            if d.mac_rotation_period_s.is_some_and(|p| !(p > 0.0 && p.is_finite())) {
                return bad(format!("device '{}': mac_rotation_period_s must be positive", d.name));
            }
            if d.path.is_empty() {
                return bad(format!("device '{}': path needs at least one waypoint", d.name));
            }
            if d.path.windows(2).any(|w| w[0].t_s > w[1].t_s) {
                return bad(format!("device '{}': waypoints must be sorted by t_s", d.name));
            }
            if d.path.iter().any(|w| !(w.distance_m > 0.0 && w.distance_m.is_finite())) {
                return bad(format!("device '{}': waypoint distances must be positive", d.name));
            }
        }
        Ok(())
    }
}

impl ScenarioDevice {
    /// Distance at `t_s`, linear between waypoints and held constant outside them.
    pub fn distance_at(&self, t_s: f64) -> f64 {
        let first = self.path[0];
        if t_s <= first.t_s {
            return first.distance_m;
        }
        for w in self.path.windows(2) {
            let (a, b) = (w[0], w[1]);
            if t_s <= b.t_s {
                if b.t_s == a.t_s {
                    return b.distance_m;
                }
                let f = (t_s - a.t_s) / (b.t_s - a.t_s);
                return a.distance_m + f * (b.distance_m - a.distance_m);
            }
        }
        self.path[self.path.len() - 1].distance_m
    }
}

/// A fresh random static address (two most significant bits set).
pub fn random_static_mac(rng: &mut impl Rng) -> MacAddr {
    let mut b: [u8; 6] = rng.random();
    b[0] |= 0xC0;
    MacAddr(b)
}

/// Every advertisement of the scenario, in timestamp order (ties by device index).
pub fn generate(scenario: &Scenario) -> Result<Vec<SimulatedAdvertisement>, ScenarioError> {
    scenario.validate()?;
    let duration_us = (scenario.duration_s * 1e6).round() as u64;
    let noise = Normal::new(0.0, scenario.noise_sigma_db)
        .map_err(|e| ScenarioError::InvalidScenario(format!("noise_sigma_db: {e}")))?;
    let n = scenario.path_loss_exponent;
    let mut out = Vec::new();
    for (index, device) in scenario.devices.iter().enumerate() {
        // One independent stream per device keeps devices from perturbing each other.
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(index as u64);
        let interval_us = (device.adv_interval_ms * 1000.0).round().max(1.0) as u64;
        let rotation_us = device.mac_rotation_period_s.map(|p| (p * 1e6).round().max(1.0) as u64);
        let mut mac = device.initial_mac;
        let mut epoch = 0;
        let mut k = 0u64;
        while k * interval_us < duration_us {
            let t_us = k * interval_us;
            if let Some(period) = rotation_us {
                while epoch < t_us / period {
                    mac = random_static_mac(&mut rng);
                    epoch += 1;
                }
            }
            let distance = device.distance_at(t_us as f64 / 1e6);
            let mut rssi_exact = device.tx_power_dbm - 10.0 * n * distance.log10();
            if scenario.noise_sigma_db > 0.0 {
                rssi_exact += noise.sample(&mut rng);
            }
            let rssi = rssi_exact.round().clamp(f64::from(RSSI_MIN), f64::from(RSSI_MAX)) as i8;
            out.push(SimulatedAdvertisement {
                adv: RawAdvertisement {
                    timestamp_us: scenario.start_time_us + t_us,
                    source_id: scenario.source_id.clone(),
                    mac,
                    address_type: if rotation_us.is_some() { AddressType::Random } else { device.address_type },
                    pdu_type: device.pdu_type,
                    channel: Some(ADVERTISING_CHANNELS[(k % 3) as usize]),
                    rssi,
                    payload: device.payload_template.clone(),
                },
                device_index: index,
                true_distance_m: distance,
                rssi_exact,
            });
            k += 1;
        }
    }
    out.sort_by_key(|s| (s.adv.timestamp_us, s.device_index));
    Ok(out)
}

/// Answers enumeration requests from the scenario's GATT definitions,
/// keyed by any address a device has used so far.
#[derive(Debug, Default)]
pub struct SimulatedPeripherals {
    by_mac: HashMap<MacAddr, usize>,
    services: Vec<Vec<GattService>>,
}

impl SimulatedPeripherals {
    pub fn new(scenario: &Scenario) -> Self {
        Self { by_mac: HashMap::new(), services: scenario.devices.iter().map(|d| d.gatt.clone()).collect() }
    }

    /// Records that device `device_index` advertised as `mac`.
    pub fn note(&mut self, mac: MacAddr, device_index: usize) {
        self.by_mac.insert(mac, device_index);
    }

    pub fn services_for(&self, mac: MacAddr) -> Option<&[GattService]> {
        self.by_mac.get(&mac).map(|&i| self.services[i].as_slice())
    }
}
