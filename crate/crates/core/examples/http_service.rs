//! Serve the HTTP/WebSocket API over a simulated session.
//!
//!     cargo run --example http_service -- 127.0.0.1:8080 30
//!     curl localhost:8080/api/devices
//!     curl -X POST localhost:8080/api/devices/3/enumerate

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use btlemap::hub::{ClockMode, EnumerationTransport, Hub, SimulatedTransport};
use btlemap::identity::DeviceStore;
use btlemap::service::{self, ServiceConfig};
use btlemap::sources::replay::{replay, Speed};
use btlemap::sources::simulate::{generate, Scenario, SimulatedPeripherals};
use tokio_util::sync::CancellationToken;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let addr = args.next().unwrap_or_else(|| "127.0.0.1:8080".into());
    let serve_for = Duration::from_secs(args.next().map(|s| s.parse()).transpose()?.unwrap_or(10));

    let scenario = Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/scenario.json"))?;
    let hub = Hub::new(DeviceStore::default(), ClockMode::Capture);
    let peripherals = Arc::new(SimulatedTransport(Mutex::new(SimulatedPeripherals::new(&scenario))));
    let transport: Arc<dyn EnumerationTransport> = peripherals.clone();
    hub.set_transport(Arc::downgrade(&transport));

    let cancel = CancellationToken::new();
    let listener = service::bind(&addr).await?;
    println!("serving http://{} for {serve_for:?}", listener.local_addr()?);
    let http = tokio::spawn(service::serve(listener, hub.clone(), ServiceConfig::default(), cancel.clone()));

    // Ten times real time, so devices keep moving while you poke at the API.
    let h = hub.clone();
    let feed = tokio::spawn({
        let cancel = cancel.clone();
        async move {
            let advs = generate(&scenario).expect("valid scenario");
            let _ = replay(
                advs,
                |s| s.adv.timestamp_us,
                Speed::Factor(10.0),
                |s| {
                    peripherals.0.lock().unwrap().note(s.adv.mac, s.device_index);
                    let _ = h.ingest(s.adv);
                },
                &cancel,
            )
            .await;
        }
    });

    tokio::select! {
        _ = tokio::time::sleep(serve_for) => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    cancel.cancel();
    feed.await?;
    http.await??;
    println!("{} devices at shutdown", hub.read(DeviceStore::len));
    Ok(())
}
