use serde::{Deserialize, Serialize};

use super::store::DeviceRecord;

/// Conjunction of optional criteria. The empty filter matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceFilter {
    /// Case-insensitive equality against the record's manufacturer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufacturer: Option<String>,
    /// Compared against the last RSSI; devices without one never match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_rssi: Option<i8>,
    /// Maximum age of the latest advertisement, in microseconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_within_us: Option<u64>,
    /// Case-insensitive substring of the device name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_substring: Option<String>,
}

impl DeviceFilter {
    pub fn matches(&self, record: &DeviceRecord, now_us: u64) -> bool {
        if let Some(m) = &self.manufacturer {
            if !record.manufacturer.as_deref().is_some_and(|r| r.eq_ignore_ascii_case(m)) {
                return false;
            }
        }
        if let Some(min) = self.min_rssi {
            if !record.last_rssi.is_some_and(|r| r >= min) {
                return false;
            }
        }
        if let Some(window) = self.active_within_us {
            if now_us.saturating_sub(record.last_seen) > window {
                return false;
            }
        }
        if let Some(sub) = &self.name_substring {
            let sub = sub.to_lowercase();
            if !record.name().is_some_and(|n| n.to_lowercase().contains(&sub)) {
                return false;
            }
        }
        true
    }
}
