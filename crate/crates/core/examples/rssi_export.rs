//! RSSI history as CSV, whole-store and narrowed by device and time.

use std::collections::BTreeSet;

use btlemap::identity::{DeviceId, DeviceStore};
use btlemap::sources::simulate::{generate, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scenario =
        Scenario::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/scenario.json"))?;
    scenario.duration_s = 5.0;
    let mut store = DeviceStore::default();
    for s in generate(&scenario)? {
        store.ingest(s.adv)?;
    }
    let all = store.export_rssi_csv(None, None);
    println!("full export: {} rows", all.iter().filter(|&&b| b == b'\n').count() - 1);

    let speaker: BTreeSet<DeviceId> = [DeviceId(3)].into();
    let t0 = scenario.start_time_us;
    let narrowed = store.export_rssi_csv(Some(&speaker), Some(t0..t0 + 3_000_000));
    print!("{}", String::from_utf8(narrowed)?);
    Ok(())
}
