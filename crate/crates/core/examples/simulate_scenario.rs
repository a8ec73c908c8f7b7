//! Generate a scenario and compare store attribution against ground truth.
//!
//!     cargo run --example simulate_scenario -- crates/core/examples/data/scenario.json

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use btlemap::identity::DeviceStore;
use btlemap::sources::simulate::{generate, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/scenario.json"));
    let scenario = Scenario::load(&path)?;
    let advs = generate(&scenario)?;
    println!(
        "{} advertisements from {} scripted devices over {} s",
        advs.len(),
        scenario.devices.len(),
        scenario.duration_s
    );

    let mut store = DeviceStore::default();
    let mut assigned: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
    let mut macs: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for s in advs {
        macs.entry(s.device_index).or_default().insert(s.adv.mac.to_string());
        let (id, _) = store.ingest(s.adv)?;
        assigned.entry(s.device_index).or_default().insert(id.0);
    }
    for (i, dev) in scenario.devices.iter().enumerate() {
        println!("{:<16} {} MACs -> store devices {:?}", dev.name, macs[&i].len(), assigned[&i]);
    }
    for d in store.devices() {
        println!(
            "device {}: name={:?} manufacturer={:?} type={:?}",
            d.device_id,
            d.name(),
            d.manufacturer,
            d.fingerprint.device_type
        );
    }
    println!("partition hash {}", store.partition_hash());
    Ok(())
}
