//! Device attribution and trackability checked against independent models.

mod support;

use std::cmp::Reverse;
use std::collections::BTreeMap;

use btlemap::identity::{detect_trackable, AddressType, DeviceStore, MacAddr, PduType, RawAdvertisement, StoreConfig};
use proptest::prelude::*;
use support::trackable::{brute_force_trackable, store_trackable};

const TTL: u64 = 15 * 60 * 1_000_000;
const WINDOW: u64 = 60 * 1_000_000;

fn adv(mac: MacAddr, ts: u64, payload: Vec<u8>) -> RawAdvertisement {
    RawAdvertisement {
        timestamp_us: ts,
        source_id: "t".into(),
        mac,
        address_type: AddressType::Random,
        pdu_type: PduType::AdvInd,
        channel: Some(37),
        rssi: -60,
        payload,
    }
}

/// First manufacturer-data value by a direct TLV walk.
fn first_msd(p: &[u8]) -> Option<&[u8]> {
    let mut i = 0;
    while i < p.len() {
        let l = p[i] as usize;
        if l == 0 || i + 1 + l > p.len() {
            return None;
        }
        if p[i + 1] == 0xFF {
            return Some(&p[i + 2..i + 1 + l]);
        }
        i += 1 + l;
    }
    None
}

struct ModelDevice {
    id: u64,
    last_seen: u64,
    macs: Vec<(MacAddr, u64)>,
    msd: Option<Vec<u8>>,
}

/// Straight-line restatement of the attribution rules over a flat device list.
fn model_partition(trace: &[RawAdvertisement]) -> Vec<u64> {
    let mut devs: Vec<ModelDevice> = Vec::new();
    let mut out = Vec::new();
    for a in trace {
        let msd = first_msd(&a.payload).map(<[u8]>::to_vec);
        let by_mac = devs
            .iter()
            .filter_map(|d| d.macs.iter().find(|m| m.0 == a.mac).map(|m| (d.id, m.1)))
            .max_by_key(|&(_, last)| last)
            .filter(|&(_, last)| a.timestamp_us.saturating_sub(last) <= TTL)
            .map(|(id, _)| id);
        let by_msd = || {
            let m = msd.as_ref().filter(|m| m.len() >= 4)?;
            devs.iter()
                .filter(|d| d.msd.as_ref() == Some(m) && a.timestamp_us.saturating_sub(d.last_seen) <= WINDOW)
                .max_by_key(|d| (d.last_seen, Reverse(d.id)))
                .map(|d| d.id)
        };
        let id = match by_mac.or_else(by_msd) {
            Some(id) => id,
            None => {
                let id = devs.len() as u64 + 1;
                devs.push(ModelDevice { id, last_seen: a.timestamp_us, macs: vec![], msd: None });
                id
            }
        };
        let d = &mut devs[(id - 1) as usize];
        match d.macs.iter_mut().find(|m| m.0 == a.mac) {
            Some(m) => m.1 = m.1.max(a.timestamp_us),
            None => d.macs.push((a.mac, a.timestamp_us)),
        }
        d.last_seen = d.last_seen.max(a.timestamp_us);
        if msd.is_some() {
            d.msd = msd;
        }
        out.push(id);
    }
    out
}

#[derive(Debug, Clone)]
enum Template {
    /// Apple Nearby Info; the auth tag is fixed or redrawn per rotation.
    Nearby {
        fixed_tag: bool,
    },
    /// AirPods-style Proximity Pairing with a fixed or per-rotation encrypted block.
    Pairing {
        fixed_block: bool,
    },
    /// Non-Apple manufacturer data shared across the template pool.
    Vendor(u8),
    Name,
    FlagsOnly,
}

fn payload(t: &Template, rotation: u64, device: u8) -> Vec<u8> {
    let r = (rotation as u8).wrapping_mul(37).wrapping_add(device.wrapping_mul(101));
    match t {
        Template::Nearby { fixed_tag } => {
            let tag = if *fixed_tag { [0x2B, 0x3C, 0x44] } else { [r, r ^ 0x5A, 0x10] };
            let mut p = hex::decode("0201060AFF4C0010051C1A").unwrap();
            p.extend_from_slice(&tag);
            p
        }
        Template::Pairing { fixed_block } => {
            let mut p = hex::decode("1EFF4C000719010E2000F58F0100").unwrap();
            p.extend((0..17u8).map(|i| if *fixed_block { 0xA0 ^ i } else { r.wrapping_add(i) }));
            p
        }
        Template::Vendor(k) => vec![0x02, 0x01, 0x06, 0x06, 0xFF, 0x59, 0x00, 0xC0, 0xDE, *k],
        Template::Name => {
            let mut p = vec![0x02, 0x01, 0x06, 0x05, 0x09];
            p.extend_from_slice(b"Tag");
            p.push(b'0' + device);
            p
        }
        Template::FlagsOnly => vec![0x02, 0x01, 0x06],
    }
}

fn template() -> impl Strategy<Value = Template> {
    prop_oneof![
        any::<bool>().prop_map(|fixed_tag| Template::Nearby { fixed_tag }),
        any::<bool>().prop_map(|fixed_block| Template::Pairing { fixed_block }),
        (0u8..2).prop_map(Template::Vendor),
        Just(Template::Name),
        Just(Template::FlagsOnly),
    ]
}

#[derive(Debug, Clone)]
struct Step {
    device: usize,
    gap_us: u64,
    rotate: bool,
}

fn step(devices: usize) -> impl Strategy<Value = Step> {
    let gap = prop_oneof![
        8 => 0u64..5_000_000,
        2 => 30_000_000u64..120_000_000,
        1 => Just(20 * 60 * 1_000_000u64),
    ];
    (0..devices, gap, proptest::bool::weighted(0.1)).prop_map(|(device, gap_us, rotate)| Step {
        device,
        gap_us,
        rotate,
    })
}

fn trace() -> impl Strategy<Value = Vec<RawAdvertisement>> {
    prop::collection::vec(template(), 1..5)
        .prop_flat_map(|templates| {
            let n = templates.len();
            (Just(templates), prop::collection::vec(step(n), 1..200))
        })
        .prop_map(|(templates, steps)| {
            let mut rotation = vec![0u64; templates.len()];
            let mut ts = 0;
            steps
                .into_iter()
                .map(|s| {
                    ts += s.gap_us;
                    if s.rotate {
                        rotation[s.device] += 1;
                    }
                    let r = rotation[s.device];
                    let mac = MacAddr([0xC0 | s.device as u8, 0x10, 0, 0, (r >> 8) as u8, r as u8]);
                    adv(mac, ts, payload(&templates[s.device], r, s.device as u8))
                })
                .collect()
        })
}

fn ingest_all(trace: &[RawAdvertisement], config: StoreConfig) -> (DeviceStore, Vec<u64>) {
    let mut store = DeviceStore::new(config);
    let ids = trace.iter().map(|a| store.ingest(a.clone()).unwrap().0 .0).collect();
    (store, ids)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn attribution_matches_model(trace in trace()) {
        let (_, ids) = ingest_all(&trace, StoreConfig::default());
        prop_assert_eq!(ids, model_partition(&trace));
    }

    #[test]
    fn trackability_matches_brute_force(trace in trace()) {
        let (store, _) = ingest_all(&trace, StoreConfig::default());
        for d in store.devices() {
            prop_assert_eq!(store_trackable(d), brute_force_trackable(d), "device {}", d.device_id);
        }
    }

    #[test]
    fn replay_is_deterministic(trace in trace()) {
        let (a, _) = ingest_all(&trace, StoreConfig::default());
        let (b, _) = ingest_all(&trace, StoreConfig::default());
        prop_assert_eq!(a.partition_hash(), b.partition_hash());
        for (x, y) in a.devices().zip(b.devices()) {
            prop_assert_eq!(detect_trackable(x), detect_trackable(y));
        }
    }

    #[test]
    fn conservation_and_exclusive_macs(trace in trace()) {
        let (store, _) = ingest_all(&trace, StoreConfig::default());
        let total: u64 = store.devices().map(|d| d.total_advertisements).sum();
        prop_assert_eq!(total, trace.len() as u64);
        prop_assert_eq!(store.devices().map(|d| d.advertisements.len()).sum::<usize>(), trace.len());
        // No MAC is live under two devices at once.
        let mut spans: BTreeMap<MacAddr, Vec<(u64, u64)>> = BTreeMap::new();
        for d in store.devices() {
            for m in &d.macs {
                spans.entry(m.mac).or_default().push((m.first_seen, m.last_seen));
            }
        }
        for (mac, mut s) in spans {
            s.sort();
            for w in s.windows(2) {
                prop_assert!(w[1].0 > w[0].1 + TTL, "{mac} shared: {:?}", w);
            }
        }
    }

    #[test]
    fn eviction_keeps_attribution(trace in trace()) {
        let (_, full) = ingest_all(&trace, StoreConfig::default());
        let small = StoreConfig { history_capacity: 3, ..StoreConfig::default() };
        let (store, ids) = ingest_all(&trace, small);
        prop_assert_eq!(ids, full);
        prop_assert!(store.devices().all(|d| d.advertisements.len() <= 3));
        prop_assert_eq!(store.devices().map(|d| d.total_advertisements).sum::<u64>(), trace.len() as u64);
    }
}

#[test]
fn three_rotations_one_finding() {
    let mut store = DeviceStore::default();
    for r in 0..3u8 {
        let mac = MacAddr([0x5A, 0, 0, 0, 0, r]);
        for k in 0..4u64 {
            // Identical manufacturer data links the rotations; only the
            // 3-byte auth tag is long enough to count as an identifier.
            let p = hex::decode("0201060AFF4C0010051C1A2B3C44").unwrap();
            store.ingest(adv(mac, u64::from(r) * 30_000_000 + k * 1_000_000, p)).unwrap();
        }
    }
    assert_eq!(store.len(), 1);
    let d = store.devices().next().unwrap();
    let findings = detect_trackable(d);
    assert_eq!(findings.len(), 1, "{findings:?}");
    assert_eq!(findings[0].distinct_macs_observed, 3);
    assert_eq!(findings[0].constant_value, vec![0x2B, 0x3C, 0x44]);
    assert_eq!(store_trackable(d), brute_force_trackable(d));
}
