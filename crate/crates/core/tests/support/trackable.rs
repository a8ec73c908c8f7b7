//! Brute-force constancy oracle for trackability findings, built from the dissection tree alone.
#![allow(dead_code)]

use std::collections::BTreeMap;

use btlemap::dissector::{dissect, DissectionNode};
use btlemap::identity::{detect_trackable, DeviceRecord, MacAddr, RawAdvertisement};

/// Dissected fields of one payload, keyed by label path with sibling
/// ordinals. Non-Apple structures contribute their value (or data after
/// the company id); Apple Continuity messages contribute each decoded leaf.
pub fn tree_fields(payload: &[u8]) -> Vec<(String, Vec<u8>)> {
    fn ordinal_children(n: &DissectionNode) -> Vec<(String, &DissectionNode)> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        n.children
            .iter()
            .map(|c| {
                let k = seen.entry(c.label.as_str()).or_default();
                *k += 1;
                (format!("{}#{}", c.label, *k - 1), c)
            })
            .collect()
    }
    let bytes = |n: &DissectionNode| payload[n.offset..n.end()].to_vec();
    let mut out = Vec::new();
    let root = dissect(payload);
    for (key, s) in ordinal_children(&root) {
        if s.label == "Padding" || s.label == "undecoded" {
            continue;
        }
        let continuity = s.children.iter().find(|c| c.label == "Apple Continuity");
        match continuity {
            Some(c) => {
                for (mkey, m) in ordinal_children(c) {
                    if m.label == "undecoded" {
                        continue;
                    }
                    for leaf in &m.children {
                        if !matches!(leaf.label.as_str(), "Message Type" | "Message Length" | "undecoded") {
                            out.push((format!("{key}/{mkey}/{}", leaf.label), bytes(leaf)));
                        }
                    }
                }
            }
            None => {
                let value = s.children.iter().find(|c| c.label == "Data" || c.label == "Value");
                if let Some(v) = value {
                    out.push((format!("{key}/{}", v.label), bytes(v)));
                }
            }
        }
    }
    out.retain(|(_, v)| v.len() >= 2);
    out
}

/// (distinct MACs, value, first seen, last seen) for every constant field
/// seen under two or more MACs.
pub fn brute_force_trackable(d: &DeviceRecord) -> Vec<(usize, Vec<u8>, u64, u64)> {
    let history: Vec<&RawAdvertisement> = d.advertisements.iter().map(|a| &a.adv).collect();
    let mut values: BTreeMap<String, Vec<(MacAddr, u64, Vec<u8>)>> = BTreeMap::new();
    for a in &history {
        for (k, v) in tree_fields(&a.payload) {
            values.entry(k).or_default().push((a.mac, a.timestamp_us, v));
        }
    }
    let mut out: Vec<_> = values
        .into_values()
        .filter(|obs| obs.iter().all(|o| o.2 == obs[0].2))
        .map(|obs| {
            let mut macs: Vec<MacAddr> = obs.iter().map(|o| o.0).collect();
            macs.sort();
            macs.dedup();
            let first = obs.iter().map(|o| o.1).min().unwrap();
            let last = obs.iter().map(|o| o.1).max().unwrap();
            (macs.len(), obs[0].2.clone(), first, last)
        })
        .filter(|f| f.0 >= 2)
        .collect();
    out.sort();
    out
}

pub fn store_trackable(d: &DeviceRecord) -> Vec<(usize, Vec<u8>, u64, u64)> {
    let mut v: Vec<_> = detect_trackable(d)
        .into_iter()
        .map(|f| (f.distinct_macs_observed, f.constant_value, f.first_seen, f.last_seen))
        .collect();
    v.sort();
    v
}
