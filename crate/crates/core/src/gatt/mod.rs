//! GATT enumeration results and rule-based fingerprinting.

mod fingerprint;
mod uuid;

pub use fingerprint::{Conditions, Fingerprint, FingerprintInput, Fingerprinter, Rule, RuleFile, RuleSets, RulesError};
pub use uuid::{BleUuid, ParseUuidError};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const GAP_SERVICE: u16 = 0x1800;
pub const DEVICE_NAME_CHARACTERISTIC: u16 = 0x2A00;

/// Default time an enumeration may stay outstanding.
pub const ENUMERATION_TIMEOUT_SECS: u64 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GattError {
    #[error("no scanner agent is online")]
    NoAgentOnline,
    #[error("enumeration did not complete within {0} s")]
    Timeout(u64),
    #[error("unknown device {0}")]
    UnknownDevice(u64),
    #[error("device {0} has an enumeration in flight")]
    AlreadyPending(u64),
    #[error("agent rejected the request: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Properties {
    pub read: bool,
    pub write: bool,
    pub notify: bool,
    pub indicate: bool,
}

impl Properties {
    pub const READ: Properties = Properties { read: true, write: false, notify: false, indicate: false };

    fn names(self) -> Vec<&'static str> {
        [(self.read, "read"), (self.write, "write"), (self.notify, "notify"), (self.indicate, "indicate")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect()
    }
}

impl Serialize for Properties {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Properties {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        let mut p = Properties::default();
        for n in names {
            match n.as_str() {
                "read" => p.read = true,
                "write" => p.write = true,
                "notify" => p.notify = true,
                "indicate" => p.indicate = true,
                other => return Err(serde::de::Error::custom(format!("unknown property '{other}'"))),
            }
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Characteristic {
    pub uuid: BleUuid,
    #[serde(default)]
    pub properties: Properties,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_hex")]
    pub value: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GattService {
    pub uuid: BleUuid,
    #[serde(default)]
    pub characteristics: Vec<Characteristic>,
}

impl GattService {
    pub fn new(uuid: impl Into<BleUuid>) -> Self {
        Self { uuid: uuid.into(), characteristics: Vec::new() }
    }

    pub fn with_characteristic(
        mut self,
        uuid: impl Into<BleUuid>,
        properties: Properties,
        value: Option<&[u8]>,
    ) -> Self {
        self.characteristics.push(Characteristic { uuid: uuid.into(), properties, value: value.map(<[u8]>::to_vec) });
        self
    }
}

/// The Device Name characteristic value, wherever it appears.
pub fn device_name(services: &[GattService]) -> Option<String> {
    let target = BleUuid::from_u16(DEVICE_NAME_CHARACTERISTIC);
    services
        .iter()
        .flat_map(|s| &s.characteristics)
        .find(|c| c.uuid == target)
        .and_then(|c| c.value.as_deref())
        .map(|v| String::from_utf8_lossy(v).trim_end_matches('\0').to_owned())
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_str(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?.map(|h| hex::decode(h).map_err(serde::de::Error::custom)).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn device_name_from_gap() {
        let services = vec![
            GattService::new(0x180Fu16),
            GattService::new(GAP_SERVICE).with_characteristic(
                DEVICE_NAME_CHARACTERISTIC,
                Properties::READ,
                Some(b"Kitchen Speaker"),
            ),
        ];
        assert_eq!(device_name(&services).as_deref(), Some("Kitchen Speaker"));
        assert_eq!(device_name(&[]), None);
    }

    #[test]
    fn service_json() {
        let s = GattService::new(0x180Fu16).with_characteristic(
            0x2A19u16,
            Properties { read: true, notify: true, ..Default::default() },
            Some(&[0x64]),
        );
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["uuid"], "0000180f-0000-1000-8000-00805f9b34fb");
        assert_eq!(json["characteristics"][0]["properties"], serde_json::json!(["read", "notify"]));
        assert_eq!(json["characteristics"][0]["value"], "64");
        let back: GattService = serde_json::from_value(json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_unknown_property() {
        let r: Result<Properties, _> = serde_json::from_str(r#"["read","teleport"]"#);
        assert!(r.is_err());
    }
}
