//! Advertisement payload dissection.
//!
//! An advertising payload is a run of AD structures, each framed as
//! `[length][type][value; length - 1]`. Parsing is lossless: the structures
//! plus the trailer (zero padding or a truncated final structure) re-serialize
//! to the original bytes.

pub mod apple;
pub mod company;
mod tree;

pub use tree::{dissect, DissectionNode};

use thiserror::Error;

/// Largest legacy advertising payload.
pub const MAX_PAYLOAD_LEN: usize = 31;
/// Largest value an AD structure can carry inside a legacy payload.
pub const MAX_AD_VALUE_LEN: usize = MAX_PAYLOAD_LEN - 2;

pub const AD_FLAGS: u8 = 0x01;
pub const AD_INCOMPLETE_UUID16: u8 = 0x02;
pub const AD_COMPLETE_UUID16: u8 = 0x03;
pub const AD_INCOMPLETE_UUID32: u8 = 0x04;
pub const AD_COMPLETE_UUID32: u8 = 0x05;
pub const AD_INCOMPLETE_UUID128: u8 = 0x06;
pub const AD_COMPLETE_UUID128: u8 = 0x07;
pub const AD_SHORTENED_LOCAL_NAME: u8 = 0x08;
pub const AD_COMPLETE_LOCAL_NAME: u8 = 0x09;
pub const AD_TX_POWER_LEVEL: u8 = 0x0A;
pub const AD_SERVICE_DATA_UUID16: u8 = 0x16;
pub const AD_APPEARANCE: u8 = 0x19;
pub const AD_MANUFACTURER_DATA: u8 = 0xFF;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DissectError {
    #[error("payload is {0} bytes, advertising payloads are at most {MAX_PAYLOAD_LEN}")]
    PayloadTooLong(usize),
    #[error("TX power structure at offset {offset} has a {len}-byte value, expected 1")]
    MalformedTxPower { offset: usize, len: usize },
}

/// One length-type-value unit of an advertising payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdStructure {
    pub ad_type: u8,
    pub value: Vec<u8>,
    /// Index of the length byte within the payload.
    pub offset: usize,
}

impl AdStructure {
    pub fn new(ad_type: u8, value: impl Into<Vec<u8>>, offset: usize) -> Self {
        Self { ad_type, value: value.into(), offset }
    }

    /// Bytes on the wire including the length and type bytes.
    pub fn wire_len(&self) -> usize {
        2 + self.value.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push((self.value.len() + 1) as u8);
        out.push(self.ad_type);
        out.extend_from_slice(&self.value);
    }
}

/// What follows the last complete AD structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrailerKind {
    /// A zero length byte ended the payload early.
    Padding,
    /// The final structure declared more bytes than remained.
    Garbage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trailer {
    pub kind: TrailerKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedPayload {
    pub structures: Vec<AdStructure>,
    pub trailer: Option<Trailer>,
}

impl ParsedPayload {
    pub fn find(&self, ad_type: u8) -> impl Iterator<Item = &AdStructure> {
        self.structures.iter().filter(move |s| s.ad_type == ad_type)
    }

    /// The value of the first Manufacturer Specific Data structure.
    pub fn manufacturer_data(&self) -> Option<&[u8]> {
        self.find(AD_MANUFACTURER_DATA).next().map(|s| s.value.as_slice())
    }

    /// Advertised local name, preferring the complete form.
    pub fn local_name(&self) -> Option<String> {
        self.find(AD_COMPLETE_LOCAL_NAME)
            .next()
            .or_else(|| self.find(AD_SHORTENED_LOCAL_NAME).next())
            .map(|s| String::from_utf8_lossy(&s.value).into_owned())
    }
}

/// Splits a payload into its AD structures.
///
/// A truncated final structure is not an error; it is reported as a
/// [`TrailerKind::Garbage`] trailer so the bytes stay visible.
pub fn parse_ad_structures(payload: &[u8]) -> Result<ParsedPayload, DissectError> {
    if payload.len() > MAX_PAYLOAD_LEN {
        return Err(DissectError::PayloadTooLong(payload.len()));
    }
    let mut parsed = ParsedPayload::default();
    let mut offset = 0;
    while offset < payload.len() {
        let len = payload[offset] as usize;
        let rest = payload.len() - offset;
        if len == 0 {
            parsed.trailer = Some(Trailer { kind: TrailerKind::Padding, offset, len: rest });
            break;
        }
        if 1 + len > rest {
            parsed.trailer = Some(Trailer { kind: TrailerKind::Garbage, offset, len: rest });
            break;
        }
        parsed.structures.push(AdStructure {
            ad_type: payload[offset + 1],
            value: payload[offset + 2..offset + 1 + len].to_vec(),
            offset,
        });
        offset += 1 + len;
    }
    Ok(parsed)
}

/// Serializes structures back to wire form. Offsets are ignored.
pub fn serialize_ad_structures(structures: &[AdStructure]) -> Vec<u8> {
    let mut out = Vec::with_capacity(structures.iter().map(AdStructure::wire_len).sum());
    for s in structures {
        s.write_to(&mut out);
    }
    out
}

/// Every TX Power Level candidate in wire order; malformed ones as errors.
pub fn tx_power_levels(structures: &[AdStructure]) -> Vec<Result<i8, DissectError>> {
    structures
        .iter()
        .filter(|s| s.ad_type == AD_TX_POWER_LEVEL)
        .map(|s| match s.value.as_slice() {
            [b] => Ok(*b as i8),
            v => Err(DissectError::MalformedTxPower { offset: s.offset, len: v.len() }),
        })
        .collect()
}

/// The first well-formed TX Power Level, in dBm.
pub fn extract_tx_power(structures: &[AdStructure]) -> Option<i8> {
    tx_power_levels(structures).into_iter().find_map(Result::ok)
}

/// Display name for an AD type code.
pub fn ad_type_name(ad_type: u8) -> Option<&'static str> {
    Some(match ad_type {
        AD_FLAGS => "Flags",
        AD_INCOMPLETE_UUID16 => "Incomplete 16-bit Service UUIDs",
        AD_COMPLETE_UUID16 => "16-bit Service UUIDs",
        AD_INCOMPLETE_UUID32 => "Incomplete 32-bit Service UUIDs",
        AD_COMPLETE_UUID32 => "32-bit Service UUIDs",
        AD_INCOMPLETE_UUID128 => "Incomplete 128-bit Service UUIDs",
        AD_COMPLETE_UUID128 => "128-bit Service UUIDs",
        AD_SHORTENED_LOCAL_NAME => "Shortened Local Name",
        AD_COMPLETE_LOCAL_NAME => "Complete Local Name",
        AD_TX_POWER_LEVEL => "TX Power Level",
        AD_SERVICE_DATA_UUID16 => "Service Data",
        AD_APPEARANCE => "Appearance",
        AD_MANUFACTURER_DATA => "Manufacturer Specific Data",
        _ => return None,
    })
}
