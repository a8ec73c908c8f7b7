//! Minimal multicast DNS listener for checking announcements from the outside.
#![allow(dead_code)]

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, Socket, Type};

const GROUP: Ipv4Addr = Ipv4Addr::new(224, 0, 0, 251);
const PORT: u16 = 5353;
const TYPE_PTR: u16 = 12;
const TYPE_TXT: u16 = 16;
const TYPE_SRV: u16 = 33;

#[derive(Debug, Clone, PartialEq)]
pub enum Rdata {
    Ptr(String),
    Srv { port: u16, target: String },
    Txt(Vec<String>),
    Other,
}

#[derive(Debug, Clone)]
pub struct Record {
    pub name: String,
    pub rtype: u16,
    pub ttl: u32,
    pub data: Rdata,
}

fn lower(s: &str) -> String {
    s.trim_end_matches('.').to_ascii_lowercase()
}

fn read_name(pkt: &[u8], mut pos: usize) -> Option<(String, usize)> {
    let mut labels = Vec::new();
    let mut end = None;
    for _ in 0..128 {
        let len = *pkt.get(pos)? as usize;
        if len & 0xC0 == 0xC0 {
            let ptr = ((len & 0x3F) << 8) | *pkt.get(pos + 1)? as usize;
            end.get_or_insert(pos + 2);
            pos = ptr;
            continue;
        }
        if len == 0 {
            return Some((labels.join("."), end.unwrap_or(pos + 1)));
        }
        let label = pkt.get(pos + 1..pos + 1 + len)?;
        labels.push(String::from_utf8_lossy(label).into_owned());
        pos += 1 + len;
    }
    None
}

fn u16_at(p: &[u8], i: usize) -> Option<u16> {
    Some(u16::from_be_bytes([*p.get(i)?, *p.get(i + 1)?]))
}

/// Every resource record in a response packet; `None` for queries or junk.
pub fn parse_response(pkt: &[u8]) -> Option<Vec<Record>> {
    if pkt.len() < 12 || pkt[2] & 0x80 == 0 {
        return None;
    }
    let qd = u16_at(pkt, 4)?;
    let rr = u16_at(pkt, 6)? as usize + u16_at(pkt, 8)? as usize + u16_at(pkt, 10)? as usize;
    let mut pos = 12;
    for _ in 0..qd {
        pos = read_name(pkt, pos)?.1 + 4;
    }
    let mut out = Vec::new();
    for _ in 0..rr {
        let (name, p) = read_name(pkt, pos)?;
        let rtype = u16_at(pkt, p)?;
        let ttl = u32::from_be_bytes(pkt.get(p + 4..p + 8)?.try_into().ok()?);
        let rdlen = u16_at(pkt, p + 8)? as usize;
        let start = p + 10;
        let rdata = pkt.get(start..start + rdlen)?;
        let data = match rtype {
            TYPE_PTR => Rdata::Ptr(read_name(pkt, start)?.0),
            TYPE_SRV => Rdata::Srv { port: u16_at(pkt, start + 4)?, target: read_name(pkt, start + 6)?.0 },
            TYPE_TXT => {
                let mut strings = Vec::new();
                let mut i = 0;
                while i < rdata.len() {
                    let n = rdata[i] as usize;
                    strings.push(String::from_utf8_lossy(rdata.get(i + 1..i + 1 + n)?).into_owned());
                    i += 1 + n;
                }
                Rdata::Txt(strings)
            }
            _ => Rdata::Other,
        };
        out.push(Record { name, rtype, ttl, data });
        pos = start + rdlen;
    }
    Some(out)
}

pub fn ptr_query(service: &str) -> Vec<u8> {
    let mut q = vec![0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0];
    for label in service.trim_end_matches('.').split('.') {
        q.push(label.len() as u8);
        q.extend_from_slice(label.as_bytes());
    }
    q.push(0);
    q.extend_from_slice(&TYPE_PTR.to_be_bytes());
    q.extend_from_slice(&1u16.to_be_bytes());
    q
}

/// What the listener has learned about one service instance.
#[derive(Debug, Clone, Default)]
pub struct Instance {
    pub ptr_ttl: Option<u32>,
    pub goodbye: bool,
    pub port: Option<u16>,
    pub txt: Vec<String>,
}

pub struct Listener {
    socket: UdpSocket,
    rx: mpsc::Receiver<Vec<u8>>,
    service: String,
    pub instances: HashMap<String, Instance>,
}

impl Listener {
    pub fn open(service: &str) -> std::io::Result<Self> {
        let sock = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
        sock.set_reuse_address(true)?;
        sock.set_reuse_port(true)?;
        sock.bind(&SocketAddr::V4(SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, PORT)).into())?;
        sock.join_multicast_v4(&GROUP, &Ipv4Addr::UNSPECIFIED)?;
        // Also listen on loopback where that is a separate membership.
        let _ = sock.join_multicast_v4(&GROUP, &Ipv4Addr::LOCALHOST);
        sock.set_multicast_loop_v4(true)?;
        let socket: UdpSocket = sock.into();
        let reader = socket.try_clone()?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut buf = [0u8; 9000];
            while let Ok((n, _)) = reader.recv_from(&mut buf) {
                if tx.send(buf[..n].to_vec()).is_err() {
                    break;
                }
            }
        });
        Ok(Listener { socket, rx, service: lower(service), instances: HashMap::new() })
    }

    pub fn query(&self) {
        let _ = self.socket.send_to(&ptr_query(&self.service), SocketAddrV4::new(GROUP, PORT));
    }

    fn absorb(&mut self, pkt: &[u8]) {
        let Some(records) = parse_response(pkt) else { return };
        for r in records {
            match r.data {
                Rdata::Ptr(target) if lower(&r.name) == self.service => {
                    let inst = self.instances.entry(lower(&target)).or_default();
                    inst.ptr_ttl = Some(r.ttl);
                    if r.ttl == 0 {
                        inst.goodbye = true;
                    }
                }
                Rdata::Srv { port, .. } => self.instances.entry(lower(&r.name)).or_default().port = Some(port),
                Rdata::Txt(t) => self.instances.entry(lower(&r.name)).or_default().txt = t,
                _ => {}
            }
        }
    }

    /// Pumps packets, re-querying every second, until `done` holds or `timeout` passes.
    pub fn until(&mut self, timeout: Duration, mut done: impl FnMut(&HashMap<String, Instance>) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        let mut next_query = Instant::now();
        loop {
            if done(&self.instances) {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            if now >= next_query {
                self.query();
                next_query = now + Duration::from_secs(1);
            }
            let wait = (deadline - now).min(next_query.saturating_duration_since(now)).max(Duration::from_millis(5));
            if let Ok(pkt) = self.rx.recv_timeout(wait) {
                self.absorb(&pkt);
            }
        }
    }

    pub fn instance(&self, fullname: &str) -> Option<&Instance> {
        self.instances.get(&lower(fullname))
    }
}
