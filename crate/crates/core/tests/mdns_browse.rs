//! The announcement as seen by a separate DNS-SD listener and by the crate's own browser.

mod support;

use std::time::Duration;

use btlemap::sources::mdns::{announce, browse, SERVICE_TYPE};
use support::dns::{parse_response, Listener, Rdata};

#[test]
fn announce_is_visible_then_withdrawn() {
    let instance = format!("btlemap-wire-{}", std::process::id());
    let port = 40_000 + (std::process::id() % 20_000) as u16;
    let mut listener = Listener::open(SERVICE_TYPE).expect("bind 5353");
    let ann = announce(&instance, port).expect("announce");
    let fullname = ann.fullname().to_owned();

    let seen = listener.until(Duration::from_secs(10), |m| {
        m.get(&fullname.trim_end_matches('.').to_ascii_lowercase())
            .is_some_and(|i| i.ptr_ttl.is_some_and(|t| t > 0) && i.port.is_some() && !i.txt.is_empty())
    });
    assert!(seen, "listener never saw {fullname}: {:?}", listener.instances);
    let inst = listener.instance(&fullname).unwrap().clone();
    assert_eq!(inst.port, Some(port));
    assert!(inst.txt.iter().any(|t| t == "proto=1"), "{:?}", inst.txt);

    let found = browse(Duration::from_secs(3)).unwrap();
    let server = found.iter().find(|s| s.fullname == fullname).expect("crate browser finds it");
    assert_eq!(server.port, port);
    assert!(!server.socket_addrs().is_empty());

    ann.withdraw();
    let gone = listener.until(Duration::from_secs(10), |m| {
        m.get(&fullname.trim_end_matches('.').to_ascii_lowercase()).is_some_and(|i| i.goodbye)
    });
    assert!(gone, "no goodbye observed for {fullname}");
}

#[test]
fn decodes_compressed_ptr() {
    // Response with one PTR answer whose target points back into the owner name.
    let mut p = vec![0, 0, 0x84, 0, 0, 0, 0, 1, 0, 0, 0, 0];
    p.extend([3, b'_', b'a', b'b', 4, b'_', b't', b'c', b'p', 5, b'l', b'o', b'c', b'a', b'l', 0]);
    p.extend([0, 12, 0, 1, 0, 0, 0, 120, 0, 4, 1, b'x', 0xC0, 12]);
    let r = parse_response(&p).unwrap();
    assert_eq!(r[0].name, "_ab._tcp.local");
    assert_eq!(r[0].ttl, 120);
    assert_eq!(r[0].data, Rdata::Ptr("x._ab._tcp.local".into()));
}
