//! Attach GATT enumeration results to a device and see how the fingerprint
//! and privacy flags change.

use btlemap::gatt::{GattService, Properties, DEVICE_NAME_CHARACTERISTIC, GAP_SERVICE};
use btlemap::identity::{AddressType, DeviceStore, MacAddr, PduType, RawAdvertisement};

fn main() {
    let mut store = DeviceStore::default();
    let (id, _) = store
        .ingest(RawAdvertisement {
            timestamp_us: 0,
            source_id: "example".into(),
            mac: "00:0C:8A:12:34:56".parse::<MacAddr>().unwrap(),
            address_type: AddressType::Public,
            pdu_type: PduType::AdvInd,
            channel: Some(38),
            rssi: -58,
            // Flags, "Kitchen Spk", Bose manufacturer data.
            payload: hex::decode("0201060C094B69746368656E2053706B05FF9E00AABB").unwrap(),
        })
        .unwrap();
    let show = |store: &DeviceStore, when: &str| {
        let d = store.device(id).unwrap();
        println!("{when}: name={:?} fingerprint={:?}", d.name(), d.fingerprint);
        for f in &d.privacy_flags {
            println!("  privacy flag {f:?}");
        }
    };
    show(&store, "advertisement only");

    let services = vec![
        GattService::new(GAP_SERVICE).with_characteristic(
            DEVICE_NAME_CHARACTERISTIC,
            Properties::READ,
            Some(b"Kitchen Speaker"),
        ),
        GattService::new(0x180Au16).with_characteristic(0x2A29u16, Properties::READ, Some(b"Bose")),
        GattService::new(0xFEBEu16),
    ];
    store.apply_gatt(id, services, 1_000_000);
    show(&store, "after enumeration");
    println!("{}", serde_json::to_string_pretty(&store.device(id).unwrap().gatt_services).unwrap());
}
