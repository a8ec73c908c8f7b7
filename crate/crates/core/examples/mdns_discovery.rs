//! Announce a server instance over mDNS, find it by browsing, then withdraw it.

use std::time::Duration;

use btlemap::sources::mdns::{announce, browse};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ann = announce("btlemap-example", 7878)?;
    println!("announced {} on port {}", ann.fullname(), ann.port());
    for s in browse(Duration::from_secs(3))? {
        println!("found {} port {} proto {:?} at {:?}", s.fullname, s.port, s.proto, s.socket_addrs());
    }
    ann.withdraw();
    println!("withdrawn");
    Ok(())
}
