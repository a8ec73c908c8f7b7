use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::IdentityError;
use crate::dissector::MAX_PAYLOAD_LEN;

pub const RSSI_MIN: i8 = -127;
pub const RSSI_MAX: i8 = 20;
pub const ADVERTISING_CHANNELS: [u8; 3] = [37, 38, 39];

/// A 48-bit device address, most significant byte first.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    /// Random static addresses carry `0b11` in the two top bits.
    pub fn is_random_static(self) -> bool {
        self.0[0] & 0xC0 == 0xC0
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}", b[0], b[1], b[2], b[3], b[4], b[5])
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for MacAddr {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(IdentityError::BadMac(s.to_owned()));
        }
        let mut out = [0u8; 6];
        for (o, p) in out.iter_mut().zip(parts) {
            if p.len() != 2 {
                return Err(IdentityError::BadMac(s.to_owned()));
            }
            *o = u8::from_str_radix(p, 16).map_err(|_| IdentityError::BadMac(s.to_owned()))?;
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AddressType {
    Public,
    #[default]
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PduType {
    #[default]
    #[serde(rename = "ADV_IND")]
    AdvInd,
    #[serde(rename = "ADV_DIRECT_IND")]
    AdvDirectInd,
    #[serde(rename = "ADV_NONCONN_IND")]
    AdvNonconnInd,
    #[serde(rename = "ADV_SCAN_IND")]
    AdvScanInd,
    #[serde(rename = "SCAN_RSP")]
    ScanRsp,
}

impl PduType {
    /// The link-layer PDU type code.
    pub fn code(self) -> u8 {
        match self {
            PduType::AdvInd => 0x0,
            PduType::AdvDirectInd => 0x1,
            PduType::AdvNonconnInd => 0x2,
            PduType::ScanRsp => 0x4,
            PduType::AdvScanInd => 0x6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x0 => PduType::AdvInd,
            0x1 => PduType::AdvDirectInd,
            0x2 => PduType::AdvNonconnInd,
            0x4 => PduType::ScanRsp,
            0x6 => PduType::AdvScanInd,
            _ => return None,
        })
    }
}

/// One captured advertising PDU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAdvertisement {
    /// Microseconds since the Unix epoch.
    pub timestamp_us: u64,
    pub source_id: String,
    pub mac: MacAddr,
    #[serde(default)]
    pub address_type: AddressType,
    #[serde(default)]
    pub pdu_type: PduType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<u8>,
    pub rssi: i8,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

impl RawAdvertisement {
    pub fn validate(&self) -> Result<(), IdentityError> {
        if !(RSSI_MIN..=RSSI_MAX).contains(&self.rssi) {
            return Err(IdentityError::InvalidAdvertisement(format!(
                "rssi {} outside [{RSSI_MIN}, {RSSI_MAX}]",
                self.rssi
            )));
        }
        if self.payload.len() > MAX_PAYLOAD_LEN {
            return Err(IdentityError::InvalidAdvertisement(format!(
                "payload of {} bytes exceeds {MAX_PAYLOAD_LEN}",
                self.payload.len()
            )));
        }
        if let Some(ch) = self.channel {
            if !ADVERTISING_CHANNELS.contains(&ch) {
                return Err(IdentityError::InvalidAdvertisement(format!("channel {ch} is not 37, 38 or 39")));
            }
        }
        Ok(())
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}
