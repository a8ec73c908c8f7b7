//! Relative ranging from RSSI and the circular proximity layout.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{DeviceFilter, DeviceId, DeviceRecord, DeviceStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossConfig {
    pub exponent_n: f64,
    pub default_tx_power: i8,
    pub ewma_alpha: f64,
    pub max_display_distance_m: f64,
    /// Devices without a sample this recent are stale.
    pub recency_window_us: u64,
}

impl Default for PathLossConfig {
    fn default() -> Self {
        Self {
            exponent_n: 2.0,
            default_tx_power: -59,
            ewma_alpha: 0.3,
            max_display_distance_m: 50.0,
            recency_window_us: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("path-loss exponent must be positive, got {0}")]
    Exponent(f64),
    #[error("EWMA alpha must be in (0, 1], got {0}")]
    Alpha(f64),
    #[error("maximum display distance must be positive, got {0}")]
    MaxDistance(f64),
}

impl PathLossConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.exponent_n > 0.0 && self.exponent_n.is_finite()) {
            return Err(ConfigError::Exponent(self.exponent_n));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(ConfigError::Alpha(self.ewma_alpha));
        }
        if !(self.max_display_distance_m > 0.0 && self.max_display_distance_m.is_finite()) {
            return Err(ConfigError::MaxDistance(self.max_display_distance_m));
        }
        Ok(())
    }
}

/// Log-distance path loss: `10^((tx - rssi) / (10 n))` meters.
pub fn estimate_distance(rssi: f64, tx_power: f64, exponent_n: f64) -> f64 {
    10f64.powf((tx_power - rssi) / (10.0 * exponent_n))
}

pub fn smooth_rssi(previous: Option<f64>, sample: f64, alpha: f64) -> f64 {
    match previous {
        None => sample,
        Some(p) => alpha * sample + (1.0 - alpha) * p,
    }
}

/// Stable pseudo-random angle in [0, 2π) derived from the id alone.
pub fn assign_angle(device_id: DeviceId) -> f64 {
    // SplitMix64 finalizer; the top 53 bits give a uniform fraction.
    let mut z = device_id.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let fraction = (z >> 11) as f64 / (1u64 << 53) as f64;
    let angle = fraction * TAU;
    if angle < TAU {
        angle
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityEntry {
    pub device_id: DeviceId,
    pub distance_m: f64,
    pub angle_rad: f64,
    pub smoothed_rssi: f64,
    pub stale: bool,
    /// Beyond the display radius; `distance_m` was clamped to the rim.
    pub clamped: bool,
}

/// EWMA over the device's retained RSSI history.
pub fn smoothed_rssi(record: &DeviceRecord, alpha: f64) -> Option<f64> {
    record.rssi_track.iter().fold(None, |acc, s| Some(smooth_rssi(acc, f64::from(s.rssi), alpha)))
}

pub fn entry_for(record: &DeviceRecord, config: &PathLossConfig, now_us: u64) -> Option<ProximityEntry> {
    let smoothed = smoothed_rssi(record, config.ewma_alpha)?;
    let tx = f64::from(record.tx_power.unwrap_or(config.default_tx_power));
    let raw = estimate_distance(smoothed, tx, config.exponent_n);
    let clamped = raw > config.max_display_distance_m;
    Some(ProximityEntry {
        device_id: record.device_id,
        distance_m: if clamped { config.max_display_distance_m } else { raw },
        angle_rad: assign_angle(record.device_id),
        smoothed_rssi: smoothed,
        stale: now_us.saturating_sub(record.last_seen) > config.recency_window_us,
        clamped,
    })
}

/// One entry per device passing `filter`, in device id order.
pub fn proximity_snapshot(
    store: &DeviceStore,
    filter: &DeviceFilter,
    config: &PathLossConfig,
    now_us: u64,
) -> Vec<ProximityEntry> {
    store.devices().filter(|d| filter.matches(d, now_us)).filter_map(|d| entry_for(d, config, now_us)).collect()
}
