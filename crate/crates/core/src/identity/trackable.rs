//! Detection of payload fields that stay constant across MAC rotations.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::advertisement::{hex_bytes, MacAddr};
use super::store::DeviceRecord;
use crate::dissector::apple::{dissect_apple, ContinuityBody};
use crate::dissector::company::APPLE;
use crate::dissector::{parse_ad_structures, AD_MANUFACTURER_DATA};

/// Fields shorter than this carry too little entropy to identify anything.
pub const MIN_FIELD_LEN: usize = 2;

/// One dissected field of one advertisement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSample {
    pub descriptor: String,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackabilityFinding {
    pub field_descriptor: String,
    #[serde(with = "hex_bytes")]
    pub constant_value: Vec<u8>,
    pub distinct_macs_observed: usize,
    pub first_seen: u64,
    pub last_seen: u64,
}

/// Enumerates the candidate identifier fields of a payload.
///
/// Apple manufacturer data is split into Continuity fields; other AD
/// structures contribute their whole value. Descriptors carry an ordinal
/// so repeated structures of one type stay distinct.
pub fn payload_fields(payload: &[u8]) -> Vec<FieldSample> {
    let Ok(parsed) = parse_ad_structures(payload) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut ordinals: HashMap<u8, usize> = HashMap::new();
    for s in &parsed.structures {
        let ord = ordinals.entry(s.ad_type).or_default();
        let k = *ord;
        *ord += 1;
        let v = &s.value;
        if s.ad_type == AD_MANUFACTURER_DATA && v.len() >= 2 {
            let company = u16::from_le_bytes([v[0], v[1]]);
            if company == APPLE {
                continuity_fields(&v[2..], &mut out);
            } else {
                out.push(FieldSample {
                    descriptor: format!("AD 0xFF#{k} company 0x{company:04X} data"),
                    value: v[2..].to_vec(),
                });
            }
        } else {
            out.push(FieldSample { descriptor: format!("AD 0x{:02X}#{k}", s.ad_type), value: v.clone() });
        }
    }
    out.retain(|f| f.value.len() >= MIN_FIELD_LEN);
    out
}

fn continuity_fields(rest: &[u8], out: &mut Vec<FieldSample>) {
    let parse = dissect_apple(rest);
    let mut ordinals: HashMap<u8, usize> = HashMap::new();
    for m in &parse.messages {
        let ord = ordinals.entry(m.message_type).or_default();
        let k = *ord;
        *ord += 1;
        if matches!(m.body, ContinuityBody::Raw) {
            out.push(FieldSample {
                descriptor: format!("Continuity 0x{:02X}#{k} payload", m.message_type),
                value: m.payload.clone(),
            });
            continue;
        }
        let mut seen_ranges = BTreeSet::new();
        for f in m.decoded_fields() {
            // Nibble fields share a byte; the byte is one field for constancy purposes.
            if !seen_ranges.insert((f.offset, f.len)) {
                continue;
            }
            out.push(FieldSample {
                descriptor: format!("Continuity 0x{:02X}#{k} {}", m.message_type, f.name),
                value: m.payload[f.offset..f.offset + f.len].to_vec(),
            });
        }
    }
}

struct FieldStat<'a> {
    value: &'a [u8],
    constant: bool,
    macs: BTreeSet<MacAddr>,
    first_seen: u64,
    last_seen: u64,
}

/// Constancy check over `(mac, timestamp, fields)` observations.
pub fn detect_trackable_in<'a>(
    observations: impl IntoIterator<Item = (MacAddr, u64, &'a [FieldSample])>,
) -> Vec<TrackabilityFinding> {
    let mut stats: BTreeMap<&'a str, FieldStat<'a>> = BTreeMap::new();
    for (mac, ts, fields) in observations {
        for f in fields {
            let stat = stats.entry(f.descriptor.as_str()).or_insert_with(|| FieldStat {
                value: &f.value,
                constant: true,
                macs: BTreeSet::new(),
                first_seen: ts,
                last_seen: ts,
            });
            if stat.value != f.value.as_slice() {
                stat.constant = false;
            }
            stat.macs.insert(mac);
            stat.first_seen = stat.first_seen.min(ts);
            stat.last_seen = stat.last_seen.max(ts);
        }
    }
    let mut findings: Vec<TrackabilityFinding> = stats
        .into_iter()
        .filter(|(_, s)| s.constant && s.macs.len() >= 2)
        .map(|(d, s)| TrackabilityFinding {
            field_descriptor: d.to_owned(),
            constant_value: s.value.to_vec(),
            distinct_macs_observed: s.macs.len(),
            first_seen: s.first_seen,
            last_seen: s.last_seen,
        })
        .collect();
    findings.sort_by(|a, b| {
        b.distinct_macs_observed
            .cmp(&a.distinct_macs_observed)
            .then_with(|| a.field_descriptor.cmp(&b.field_descriptor))
    });
    findings
}

/// Fields of this device's retained history that never changed while the
/// device was seen under two or more addresses.
pub fn detect_trackable(device: &DeviceRecord) -> Vec<TrackabilityFinding> {
    detect_trackable_in(device.advertisements.iter().map(|a| (a.adv.mac, a.adv.timestamp_us, a.fields.as_slice())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mac(last: u8) -> MacAddr {
        MacAddr([0xC0, 0, 0, 0, 0, last])
    }

    #[test]
    fn apple_raw_message_is_one_field() {
        let payload = hex::decode("020106 0BFF4C000F06 010203040506".replace(' ', "")).unwrap();
        let fields = payload_fields(&payload);
        assert_eq!(fields.len(), 1);
        assert_eq!(fields[0].descriptor, "Continuity 0x0F#0 payload");
        assert_eq!(fields[0].value, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn vendor_and_name_fields() {
        let payload = hex::decode("0409414243 05FF0600AABB".replace(' ', "")).unwrap();
        let fields = payload_fields(&payload);
        assert_eq!(fields[0].descriptor, "AD 0x09#0");
        assert_eq!(fields[1].descriptor, "AD 0xFF#0 company 0x0006 data");
    }

    #[test]
    fn single_mac_has_no_findings() {
        let f = vec![FieldSample { descriptor: "x".into(), value: vec![1, 2] }];
        assert!(detect_trackable_in([(mac(1), 0, f.as_slice()), (mac(1), 1, f.as_slice())]).is_empty());
    }

    #[test]
    fn changing_value_is_not_trackable() {
        let a = vec![FieldSample { descriptor: "x".into(), value: vec![1, 2] }];
        let b = vec![FieldSample { descriptor: "x".into(), value: vec![1, 3] }];
        assert!(detect_trackable_in([(mac(1), 0, a.as_slice()), (mac(2), 1, b.as_slice())]).is_empty());
    }

    #[test]
    fn sorted_by_mac_count() {
        let two = vec![
            FieldSample { descriptor: "a".into(), value: vec![9, 9] },
            FieldSample { descriptor: "b".into(), value: vec![8, 8] },
        ];
        let one = vec![FieldSample { descriptor: "b".into(), value: vec![8, 8] }];
        let found = detect_trackable_in([
            (mac(1), 5, two.as_slice()),
            (mac(2), 6, two.as_slice()),
            (mac(3), 7, one.as_slice()),
        ]);
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].field_descriptor, "b");
        assert_eq!(found[0].distinct_macs_observed, 3);
        assert_eq!((found[0].first_seen, found[0].last_seen), (5, 7));
        assert_eq!(found[1].distinct_macs_observed, 2);
    }
}
