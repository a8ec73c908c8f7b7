//! A scanner agent streaming a capture to an in-process server over TCP.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use btlemap::identity::{AddressType, MacAddr, PduType, RawAdvertisement};
use btlemap::sources::agent::{run_agent, AgentConfig, Backend};
use btlemap::sources::pcap::write_pcap;
use btlemap::sources::replay::Speed;
use btlemap::sources::server::{AgentHandler, AgentServer, AgentStatus, ServerConfig};
use tokio_util::sync::CancellationToken;

struct Counter(AtomicUsize);

impl AgentHandler for Counter {
    fn advertisement(&self, agent: &str, adv: RawAdvertisement) {
        let n = self.0.fetch_add(1, Ordering::SeqCst) + 1;
        if n.is_multiple_of(25) {
            println!("{agent}: {n} advertisements, latest {} at {}", adv.mac, adv.timestamp_us);
        }
    }

    fn agent_status(&self, s: &AgentStatus) {
        println!("agent {} online={} from {}", s.name, s.online, s.remote_addr);
    }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let pcap = dir.path().join("agent-input.pcap");
    let advs: Vec<RawAdvertisement> = (0..100u64)
        .map(|i| RawAdvertisement {
            timestamp_us: i * 10_000,
            source_id: String::new(),
            mac: MacAddr([0xC0, 1, 2, 3, 4, (i % 4) as u8]),
            address_type: AddressType::Random,
            pdu_type: PduType::AdvInd,
            channel: Some(37),
            rssi: -60,
            payload: vec![0x02, 0x01, 0x06],
        })
        .collect();
    write_pcap(&advs, std::fs::File::create(&pcap)?)?;

    let handler = Arc::new(Counter(AtomicUsize::new(0)));
    let server = AgentServer::bind("127.0.0.1:0", handler.clone(), ServerConfig::default()).await?;
    let mut config = AgentConfig::new("pi-kitchen", Backend::Pcap(pcap));
    config.server = Some(server.local_addr().to_string());
    config.speed = Speed::Unbounded;
    config.exit_when_done = true;
    let report = run_agent(config, CancellationToken::new()).await?;
    println!("agent report: {report:?}; server received {}", handler.0.load(Ordering::SeqCst));
    server.shutdown().await;
    Ok(())
}
