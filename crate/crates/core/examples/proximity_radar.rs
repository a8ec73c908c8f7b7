//! Log-distance ranging and a text rendering of the proximity plane.

use btlemap::identity::{AddressType, DeviceFilter, DeviceStore, MacAddr, PduType, RawAdvertisement};
use btlemap::proximity::{estimate_distance, proximity_snapshot, PathLossConfig};

fn main() {
    println!("rssi  n=2.0   n=3.0   (tx power -59 dBm)");
    for rssi in [-40.0, -59.0, -70.0, -80.0, -90.0] {
        println!(
            "{rssi:>4}  {:>6.2}m {:>6.2}m",
            estimate_distance(rssi, -59.0, 2.0),
            estimate_distance(rssi, -59.0, 3.0)
        );
    }

    let mut store = DeviceStore::default();
    for (i, rssi) in [-45i8, -62, -75, -99].into_iter().enumerate() {
        for k in 0..10u64 {
            store
                .ingest(RawAdvertisement {
                    timestamp_us: k * 500_000,
                    source_id: "example".into(),
                    mac: MacAddr([0xC0, 0, 0, 0, 0, i as u8]),
                    address_type: AddressType::Random,
                    pdu_type: PduType::AdvInd,
                    channel: Some(37),
                    rssi: rssi + (k % 3) as i8,
                    payload: vec![0x02, 0x01, 0x06],
                })
                .unwrap();
        }
    }
    let config = PathLossConfig::default();
    let now = store.latest_timestamp().unwrap();
    println!("\ndevice  distance   angle   smoothed  flags");
    for e in proximity_snapshot(&store, &DeviceFilter::default(), &config, now) {
        let flags =
            [(e.stale, "stale"), (e.clamped, "rim")].iter().filter(|f| f.0).map(|f| f.1).collect::<Vec<_>>().join(",");
        println!(
            "{:>6}  {:>7.2}m  {:>5.1}°  {:>7.1}  {flags}",
            e.device_id,
            e.distance_m,
            e.angle_rad.to_degrees(),
            e.smoothed_rssi
        );
    }
}
