//! Apple Continuity sub-dissection.
//!
//! The Manufacturer Specific Data of Apple devices carries, after the
//! `4C 00` company identifier, a sequence of `[type][length][payload]`
//! messages. Field layouts for the decoded types are listed in
//! `docs/continuity-layouts.md`; this module is the only place they are
//! encoded.

use std::fmt;

use thiserror::Error;

pub const AIRDROP: u8 = 0x05;
pub const PROXIMITY_PAIRING: u8 = 0x07;
pub const HANDOFF: u8 = 0x0C;
pub const NEARBY: u8 = 0x10;

pub const AIRDROP_LEN: usize = 18;
pub const PROXIMITY_PAIRING_LEN: usize = 9;
pub const HANDOFF_LEN: usize = 4;
pub const NEARBY_LEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContinuityError {
    #[error("message at offset {offset} declares {declared} bytes but only {available} remain")]
    TruncatedMessage { offset: usize, declared: usize, available: usize },
}

/// One Continuity message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppleContinuityMessage {
    pub message_type: u8,
    /// Offset of the type byte within the sub-dissected remainder.
    pub offset: usize,
    pub payload: Vec<u8>,
    pub body: ContinuityBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContinuityBody {
    AirDrop(AirDrop),
    ProximityPairing(ProximityPairing),
    Handoff(Handoff),
    Nearby(Nearby),
    /// Unknown type, or a known type shorter than its fixed layout.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AirDrop {
    pub version: u8,
    pub apple_id_hash: [u8; 2],
    pub phone_hash: [u8; 2],
    pub email_hash: [u8; 2],
    pub email2_hash: [u8; 2],
}

/// A battery nibble: 0..=10 are tens of percent, 0xF means unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatteryLevel(pub u8);

impl BatteryLevel {
    pub fn percent(self) -> Option<u8> {
        (self.0 <= 10).then_some(self.0 * 10)
    }
}

impl fmt::Display for BatteryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.percent() {
            Some(p) => write!(f, "{p}%"),
            None => f.write_str("unknown"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProximityPairing {
    pub prefix: u8,
    pub model: u16,
    pub status: u8,
    pub left_battery: BatteryLevel,
    pub right_battery: BatteryLevel,
    pub case_battery: BatteryLevel,
    pub left_charging: bool,
    pub right_charging: bool,
    pub case_charging: bool,
    pub lid_open_counter: u8,
    pub color: u8,
    pub encrypted: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handoff {
    pub clipboard: u8,
    pub sequence_number: u16,
    pub auth_tag: u8,
    pub encrypted: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nearby {
    pub status_flags: u8,
    pub action_code: u8,
    pub data_flags: u8,
    pub auth_tag: Vec<u8>,
}

/// A decoded field, positioned relative to the message payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContinuityField {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContinuityParse {
    pub messages: Vec<AppleContinuityMessage>,
    pub error: Option<ContinuityError>,
}

/// Parses the bytes following the Apple company identifier.
pub fn dissect_apple(remainder: &[u8]) -> ContinuityParse {
    let mut parse = ContinuityParse::default();
    let mut offset = 0;
    while offset < remainder.len() {
        let available = remainder.len() - offset - 1;
        if available == 0 {
            parse.error = Some(ContinuityError::TruncatedMessage { offset, declared: 0, available: 0 });
            break;
        }
        let message_type = remainder[offset];
        let declared = remainder[offset + 1] as usize;
        if declared > available - 1 {
            parse.error = Some(ContinuityError::TruncatedMessage { offset, declared, available: available - 1 });
            break;
        }
        let payload = remainder[offset + 2..offset + 2 + declared].to_vec();
        let body = decode_body(message_type, &payload);
        parse.messages.push(AppleContinuityMessage { message_type, offset, payload, body });
        offset += 2 + declared;
    }
    parse
}

fn decode_body(message_type: u8, p: &[u8]) -> ContinuityBody {
    match message_type {
        AIRDROP if p.len() >= AIRDROP_LEN => ContinuityBody::AirDrop(AirDrop {
            version: p[8],
            apple_id_hash: [p[9], p[10]],
            phone_hash: [p[11], p[12]],
            email_hash: [p[13], p[14]],
            email2_hash: [p[15], p[16]],
        }),
        PROXIMITY_PAIRING if p.len() >= PROXIMITY_PAIRING_LEN => ContinuityBody::ProximityPairing(ProximityPairing {
            prefix: p[0],
            model: u16::from_be_bytes([p[1], p[2]]),
            status: p[3],
            right_battery: BatteryLevel(p[4] >> 4),
            left_battery: BatteryLevel(p[4] & 0x0F),
            left_charging: p[5] & 0x10 != 0,
            right_charging: p[5] & 0x20 != 0,
            case_charging: p[5] & 0x40 != 0,
            case_battery: BatteryLevel(p[5] & 0x0F),
            lid_open_counter: p[6],
            color: p[7],
            encrypted: p[9..].to_vec(),
        }),
        HANDOFF if p.len() >= HANDOFF_LEN => ContinuityBody::Handoff(Handoff {
            clipboard: p[0],
            sequence_number: u16::from_le_bytes([p[1], p[2]]),
            auth_tag: p[3],
            encrypted: p[4..].to_vec(),
        }),
        NEARBY if p.len() >= NEARBY_LEN => ContinuityBody::Nearby(Nearby {
            status_flags: p[0] >> 4,
            action_code: p[0] & 0x0F,
            data_flags: p[1],
            auth_tag: p[2..].to_vec(),
        }),
        _ => ContinuityBody::Raw,
    }
}

impl AppleContinuityMessage {
    pub fn type_name(&self) -> Option<&'static str> {
        message_type_name(self.message_type)
    }

    /// Decoded fields in layout order. Empty for raw messages.
    pub fn decoded_fields(&self) -> Vec<ContinuityField> {
        let mut fields = Vec::new();
        let mut push = |name, offset, len, value: String| fields.push(ContinuityField { name, offset, len, value });
        match &self.body {
            ContinuityBody::AirDrop(a) => {
                push("version", 8, 1, a.version.to_string());
                push("apple_id_hash", 9, 2, hex::encode(a.apple_id_hash));
                push("phone_hash", 11, 2, hex::encode(a.phone_hash));
                push("email_hash", 13, 2, hex::encode(a.email_hash));
                push("email2_hash", 15, 2, hex::encode(a.email2_hash));
            }
            ContinuityBody::ProximityPairing(pp) => {
                push("prefix", 0, 1, format!("0x{:02x}", pp.prefix));
                push("model", 1, 2, model_display(pp.model));
                push("status", 3, 1, format!("0x{:02x}", pp.status));
                push("right_battery", 4, 1, pp.right_battery.to_string());
                push("left_battery", 4, 1, pp.left_battery.to_string());
                push("charging", 5, 1, charging_display(pp));
                push("case_battery", 5, 1, pp.case_battery.to_string());
                push("lid_open_counter", 6, 1, pp.lid_open_counter.to_string());
                push("color", 7, 1, format!("0x{:02x}", pp.color));
                if !pp.encrypted.is_empty() {
                    push("encrypted_payload", 9, pp.encrypted.len(), hex::encode(&pp.encrypted));
                }
            }
            ContinuityBody::Handoff(h) => {
                push("clipboard", 0, 1, format!("0x{:02x}", h.clipboard));
                push("sequence_number", 1, 2, h.sequence_number.to_string());
                push("auth_tag", 3, 1, format!("0x{:02x}", h.auth_tag));
                if !h.encrypted.is_empty() {
                    push("encrypted_payload", 4, h.encrypted.len(), hex::encode(&h.encrypted));
                }
            }
            ContinuityBody::Nearby(n) => {
                push("status_flags", 0, 1, format!("0x{:x}", n.status_flags));
                push("action_code", 0, 1, action_display(n.action_code));
                push("data_flags", 1, 1, format!("0x{:02x}", n.data_flags));
                if !n.auth_tag.is_empty() {
                    push("auth_tag", 2, n.auth_tag.len(), hex::encode(&n.auth_tag));
                }
            }
            ContinuityBody::Raw => {}
        }
        fields
    }
}

pub fn message_type_name(message_type: u8) -> Option<&'static str> {
    Some(match message_type {
        0x02 => "iBeacon",
        AIRDROP => "AirDrop",
        PROXIMITY_PAIRING => "Proximity Pairing",
        0x09 => "AirPlay Target",
        0x0B => "Watch Connection",
        HANDOFF => "Handoff",
        0x0D => "Tethering Target",
        0x0F => "Nearby Action",
        NEARBY => "Nearby Info",
        0x12 => "Find My",
        _ => return None,
    })
}

pub fn model_name(model: u16) -> Option<&'static str> {
    Some(match model {
        0x0220 => "AirPods",
        0x0F20 => "AirPods (2nd generation)",
        0x1320 => "AirPods (3rd generation)",
        0x0E20 => "AirPods Pro",
        0x1420 => "AirPods Pro (2nd generation)",
        0x0A20 => "AirPods Max",
        0x0320 => "Powerbeats3",
        0x0B20 => "Powerbeats Pro",
        0x0520 => "BeatsX",
        0x0620 => "Beats Solo3",
        0x0920 => "Beats Studio3",
        0x1020 => "Beats Flex",
        _ => return None,
    })
}

fn model_display(model: u16) -> String {
    match model_name(model) {
        Some(name) => format!("0x{model:04x} ({name})"),
        None => format!("0x{model:04x}"),
    }
}

fn charging_display(pp: &ProximityPairing) -> String {
    let parts: Vec<&str> = [(pp.left_charging, "left"), (pp.right_charging, "right"), (pp.case_charging, "case")]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
    if parts.is_empty() {
        "none".to_owned()
    } else {
        parts.join(", ")
    }
}

fn action_display(code: u8) -> String {
    let name = match code {
        0x00 => "activity level unknown",
        0x01 => "activity reporting disabled",
        0x03 => "idle user",
        0x05 => "audio playing, screen locked",
        0x07 => "active user",
        0x09 => "screen on with video",
        0x0A => "watch on wrist and unlocked",
        0x0B => "recent user interaction",
        0x0D => "user is driving",
        0x0E => "phone or FaceTime call",
        _ => return format!("0x{code:x}"),
    };
    format!("0x{code:x} ({name})")
}
