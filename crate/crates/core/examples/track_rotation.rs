//! Follow one device across MAC rotations and list the fields that give it away.

use btlemap::identity::{detect_trackable, AddressType, DeviceStore, MacAddr, PduType, RawAdvertisement};

fn adv(mac: MacAddr, t_s: u64, rssi: i8) -> RawAdvertisement {
    RawAdvertisement {
        timestamp_us: t_s * 1_000_000,
        source_id: "example".into(),
        mac,
        address_type: AddressType::Random,
        pdu_type: PduType::AdvInd,
        channel: Some(37),
        rssi,
        // Flags, then Apple Nearby Info with a constant status byte pattern.
        payload: hex::decode("0201060AFF4C0010051C1A2B3C44").unwrap(),
    }
}

fn main() {
    let mut store = DeviceStore::default();
    let macs = ["5A:10:22:33:44:01", "6E:01:02:03:04:05", "7F:AA:BB:CC:DD:EE"];
    for (i, m) in macs.iter().enumerate() {
        let mac: MacAddr = m.parse().unwrap();
        for k in 0..5 {
            let t = i as u64 * 30 + k * 2;
            let (id, _) = store.ingest(adv(mac, t, -60 - k as i8)).unwrap();
            if k == 0 {
                println!("t={t:>3}s {mac} -> device {id}");
            }
        }
    }
    // A different device, never linked to the first.
    store
        .ingest(RawAdvertisement {
            payload: hex::decode("02010605FF5900C0DE").unwrap(),
            ..adv("C3:30:44:55:66:03".parse().unwrap(), 40, -80)
        })
        .unwrap();

    println!("\n{} devices from {} advertisements", store.len(), store.total_ingested());
    for d in store.devices() {
        let macs: Vec<String> = d.macs.iter().map(|m| m.mac.to_string()).collect();
        println!("device {}: {} MACs [{}]", d.device_id, macs.len(), macs.join(", "));
        for f in detect_trackable(d) {
            println!(
                "  trackable {} = {} across {} MACs",
                f.field_descriptor,
                hex::encode(&f.constant_value),
                f.distinct_macs_observed
            );
        }
    }
    println!("partition hash {}", store.partition_hash());
}
