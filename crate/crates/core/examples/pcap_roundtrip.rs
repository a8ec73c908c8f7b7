//! Write advertisements to a linktype-256 pcap and read them back.
//!
//!     cargo run --example pcap_roundtrip -- /tmp/capture.pcap

use std::fs::File;
use std::io::{BufReader, BufWriter};

use btlemap::identity::{AddressType, MacAddr, PduType, RawAdvertisement};
use btlemap::sources::pcap::{read_pcap, write_pcap};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("btlemap-example.pcap").display().to_string());
    let advs: Vec<RawAdvertisement> = (0..5u8)
        .map(|i| RawAdvertisement {
            timestamp_us: 1_700_000_000_000_000 + u64::from(i) * 100_000,
            source_id: "example".into(),
            mac: MacAddr([0xC1, 0x22, 0x33, 0x44, 0x55, i]),
            address_type: AddressType::Random,
            pdu_type: if i % 2 == 0 { PduType::AdvInd } else { PduType::AdvNonconnInd },
            channel: Some([37, 38, 39][usize::from(i % 3)]),
            rssi: -50 - i as i8,
            payload: vec![0x02, 0x01, 0x06, 0x03, 0xFF, 0x59, i],
        })
        .collect();

    let n = write_pcap(&advs, BufWriter::new(File::create(&path)?))?;
    println!("wrote {n} records to {path}");

    let capture = read_pcap(BufReader::new(File::open(&path)?), "example")?;
    for a in &capture.advertisements {
        println!(
            "{} {} {:?} ch={:?} {} dBm {}",
            a.timestamp_us,
            a.mac,
            a.pdu_type,
            a.channel,
            a.rssi,
            hex::encode(&a.payload)
        );
    }
    assert_eq!(capture.advertisements, advs);
    println!("read back identical ({} skipped, truncated: {:?})", capture.skipped, capture.truncated);
    Ok(())
}
