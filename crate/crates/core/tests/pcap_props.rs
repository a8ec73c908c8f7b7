//! pcap reading and writing.

use btlemap::identity::{AddressType, MacAddr, PduType, RawAdvertisement};
use btlemap::sources::pcap::{read_pcap, write_pcap, PcapError};
use proptest::prelude::*;

/// One ADV_IND record produced by an external BLE packet library
/// (linktype 256, PHDR flags 0x0003).
const FIXTURE: &str = "d4c3b2a1020004000000000000000000ffff00000001000000f1536590d003001c0000001c0000000cc30000000000000300d6be898e40096655443322c1020106e11d06";

#[test]
fn reads_external_fixture() {
    let bytes = hex::decode(FIXTURE).unwrap();
    let cap = read_pcap(bytes.as_slice(), "fixture").unwrap();
    assert_eq!(cap.skipped, 0);
    assert!(cap.truncated.is_none());
    assert_eq!(
        cap.advertisements,
        vec![RawAdvertisement {
            timestamp_us: 1_700_000_000_250_000,
            source_id: "fixture".into(),
            mac: "C1:22:33:44:55:66".parse().unwrap(),
            address_type: AddressType::Random,
            pdu_type: PduType::AdvInd,
            channel: Some(38),
            rssi: -61,
            payload: vec![0x02, 0x01, 0x06],
        }]
    );
}

#[test]
fn writer_matches_external_link_layer_bytes() {
    let fixture = hex::decode(FIXTURE).unwrap();
    let cap = read_pcap(fixture.as_slice(), "fixture").unwrap();
    let mut out = Vec::new();
    write_pcap(&cap.advertisements, &mut out).unwrap();
    assert_eq!(out.len(), fixture.len());
    // Global header agrees except for whatever snaplen each side picked.
    assert_eq!(out[..8], fixture[..8]);
    assert_eq!(out[20..24], fixture[20..24]);
    // Record header, PHDR channel/signal/noise/offenses, then the
    // link-layer packet including the CRC. Reference AA and flags are
    // writer choices.
    assert_eq!(out[24..40], fixture[24..40]);
    assert_eq!(out[40..44], fixture[40..44]);
    assert_eq!(out[50..], fixture[50..]);
}

fn advertisement() -> impl Strategy<Value = RawAdvertisement> {
    (
        0u64..4_000_000_000_000_000,
        any::<[u8; 6]>(),
        any::<bool>(),
        prop_oneof![
            Just(PduType::AdvInd),
            Just(PduType::AdvNonconnInd),
            Just(PduType::AdvScanInd),
            Just(PduType::ScanRsp)
        ],
        prop_oneof![Just(None), Just(Some(37u8)), Just(Some(38)), Just(Some(39))],
        -127i8..=20,
        prop::collection::vec(any::<u8>(), 0..=31),
    )
        .prop_map(|(ts, mac, public, pdu_type, channel, rssi, payload)| RawAdvertisement {
            timestamp_us: ts,
            source_id: "p".into(),
            mac: MacAddr(mac),
            address_type: if public { AddressType::Public } else { AddressType::Random },
            pdu_type,
            channel,
            rssi,
            payload,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn read_inverts_write(advs in prop::collection::vec(advertisement(), 0..20)) {
        let mut once = Vec::new();
        prop_assert_eq!(write_pcap(&advs, &mut once).unwrap(), advs.len());
        let cap = read_pcap(once.as_slice(), "p").unwrap();
        prop_assert_eq!(&cap.advertisements, &advs);
        let mut twice = Vec::new();
        write_pcap(&cap.advertisements, &mut twice).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = read_pcap(bytes.as_slice(), "p");
    }
}

#[test]
fn ethernet_capture_is_rejected() {
    let mut bytes = hex::decode(FIXTURE).unwrap();
    bytes[20..24].copy_from_slice(&1u32.to_le_bytes());
    assert!(matches!(read_pcap(bytes.as_slice(), "p"), Err(PcapError::UnsupportedLinktype(1))));
}
