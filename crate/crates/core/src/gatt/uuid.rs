use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const BASE: u128 = 0x0000_0000_0000_1000_8000_0080_5F9B_34FB;
const SHORT_MASK: u128 = !(0xFFFF_FFFFu128 << 96);

/// A Bluetooth UUID, stored in its 128-bit canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BleUuid(pub u128);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid Bluetooth UUID '{0}'")]
pub struct ParseUuidError(String);

impl BleUuid {
    pub const fn from_u16(short: u16) -> Self {
        Self(BASE | ((short as u128) << 96))
    }

    pub const fn from_u32(short: u32) -> Self {
        Self(BASE | ((short as u128) << 96))
    }

    /// The 16-bit alias, if this UUID is one.
    pub fn as_u16(self) -> Option<u16> {
        (self.0 & SHORT_MASK == BASE && self.0 >> 112 == 0).then_some((self.0 >> 96) as u16)
    }

    /// Parses a little-endian on-air UUID of 2, 4, or 16 bytes.
    pub fn from_le_bytes(b: &[u8]) -> Option<Self> {
        match b.len() {
            2 => Some(Self::from_u16(u16::from_le_bytes([b[0], b[1]]))),
            4 => Some(Self::from_u32(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))),
            16 => {
                let mut a = [0u8; 16];
                a.copy_from_slice(b);
                Some(Self(u128::from_le_bytes(a)))
            }
            _ => None,
        }
    }
}

impl From<u16> for BleUuid {
    fn from(v: u16) -> Self {
        Self::from_u16(v)
    }
}

impl fmt::Display for BleUuid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = format!("{:032x}", self.0);
        write!(f, "{}-{}-{}-{}-{}", &h[..8], &h[8..12], &h[12..16], &h[16..20], &h[20..])
    }
}

impl FromStr for BleUuid {
    type Err = ParseUuidError;

    /// Accepts `180F`, `0x180F`, `0000180F`, or the full hyphenated form.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseUuidError(s.to_owned());
        let t = s.trim();
        let t = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
        let digits: String = t.chars().filter(|c| *c != '-').collect();
        if !digits.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(err());
        }
        match digits.len() {
            4 => u16::from_str_radix(&digits, 16).map(Self::from_u16).map_err(|_| err()),
            8 if !t.contains('-') => u32::from_str_radix(&digits, 16).map(Self::from_u32).map_err(|_| err()),
            32 => u128::from_str_radix(&digits, 16).map(Self).map_err(|_| err()),
            _ => Err(err()),
        }
    }
}

impl Serialize for BleUuid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BleUuid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
