//! Continuity test encoder, written from the layout table rather than from
//! the decoder, plus the shared vector set.

#![allow(dead_code)]

use btlemap::dissector::apple::{
    AirDrop, AppleContinuityMessage, BatteryLevel, ContinuityBody, Handoff, Nearby, ProximityPairing,
};

pub fn airdrop(a: &AirDrop) -> Vec<u8> {
    let mut v = vec![0x05, 18];
    v.extend_from_slice(&[0; 8]);
    v.push(a.version);
    for h in [a.apple_id_hash, a.phone_hash, a.email_hash, a.email2_hash] {
        v.extend_from_slice(&h);
    }
    v.push(0);
    v
}

pub fn proximity_pairing(p: &ProximityPairing) -> Vec<u8> {
    let mut body = vec![p.prefix, (p.model >> 8) as u8, p.model as u8, p.status];
    body.push((p.right_battery.0 << 4) | (p.left_battery.0 & 0x0F));
    let charging = u8::from(p.left_charging) << 4 | u8::from(p.right_charging) << 5 | u8::from(p.case_charging) << 6;
    body.push(charging | (p.case_battery.0 & 0x0F));
    body.push(p.lid_open_counter);
    body.push(p.color);
    body.push(0x00);
    body.extend_from_slice(&p.encrypted);
    let mut v = vec![0x07, body.len() as u8];
    v.extend(body);
    v
}

pub fn handoff(h: &Handoff) -> Vec<u8> {
    let mut v = vec![0x0C, (4 + h.encrypted.len()) as u8, h.clipboard];
    v.extend_from_slice(&h.sequence_number.to_le_bytes());
    v.push(h.auth_tag);
    v.extend_from_slice(&h.encrypted);
    v
}

pub fn nearby(n: &Nearby) -> Vec<u8> {
    let mut v = vec![0x10, (2 + n.auth_tag.len()) as u8, (n.status_flags << 4) | (n.action_code & 0x0F), n.data_flags];
    v.extend_from_slice(&n.auth_tag);
    v
}

pub fn raw(message_type: u8, payload: &[u8]) -> Vec<u8> {
    let mut v = vec![message_type, payload.len() as u8];
    v.extend_from_slice(payload);
    v
}

/// Complete advertising payload: flags, then Apple manufacturer data.
pub fn advertisement(messages: &[Vec<u8>]) -> Vec<u8> {
    let body: Vec<u8> = messages.concat();
    let mut v = vec![0x02, 0x01, 0x06, (body.len() + 3) as u8, 0xFF, 0x4C, 0x00];
    v.extend(body);
    v
}

pub struct Vector {
    pub name: &'static str,
    /// Bytes after the Apple company id.
    pub remainder: Vec<u8>,
    /// Expected (type, body) per message.
    pub expected: Vec<(u8, ContinuityBody)>,
    pub expect_error: bool,
}

fn pp(model: u16, right: u8, left: u8, case: u8, charging: (bool, bool, bool), lid: u8, color: u8) -> ProximityPairing {
    ProximityPairing {
        prefix: 0x01,
        model,
        status: 0x2B,
        left_battery: BatteryLevel(left),
        right_battery: BatteryLevel(right),
        case_battery: BatteryLevel(case),
        left_charging: charging.0,
        right_charging: charging.1,
        case_charging: charging.2,
        lid_open_counter: lid,
        color,
        encrypted: (0..16).map(|i| 0x90 + i).collect(),
    }
}

pub fn vectors() -> Vec<Vector> {
    let mut out = Vec::new();
    let mut single = |name, bytes: Vec<u8>, t: u8, body: ContinuityBody| {
        out.push(Vector { name, remainder: bytes, expected: vec![(t, body)], expect_error: false });
    };

    let ad1 = AirDrop {
        version: 1,
        apple_id_hash: [0xA1, 0xB2],
        phone_hash: [0xC3, 0xD4],
        email_hash: [0xE5, 0xF6],
        email2_hash: [0x07, 0x18],
    };
    single("airdrop v1", airdrop(&ad1), 0x05, ContinuityBody::AirDrop(ad1));
    let ad2 = AirDrop {
        version: 2,
        apple_id_hash: [0; 2],
        phone_hash: [0xFF; 2],
        email_hash: [0x12, 0x34],
        email2_hash: [0x56, 0x78],
    };
    single("airdrop v2 zero id", airdrop(&ad2), 0x05, ContinuityBody::AirDrop(ad2));

    let p1 = pp(0x0E20, 10, 9, 5, (false, false, true), 3, 0x00);
    single("airpods pro, case charging", proximity_pairing(&p1), 0x07, ContinuityBody::ProximityPairing(p1));
    let p2 = pp(0x1420, 15, 15, 15, (false, false, false), 0, 0x01);
    single("airpods pro 2, batteries unknown", proximity_pairing(&p2), 0x07, ContinuityBody::ProximityPairing(p2));
    let p3 = pp(0x0A20, 2, 0, 10, (true, true, false), 200, 0x0B);
    single("airpods max, both buds charging", proximity_pairing(&p3), 0x07, ContinuityBody::ProximityPairing(p3));
    let p4 = pp(0x0220, 7, 8, 6, (false, false, false), 1, 0x00);
    single("airpods, left 80 right 70", proximity_pairing(&p4), 0x07, ContinuityBody::ProximityPairing(p4));

    let h1 = Handoff {
        clipboard: 0x00,
        sequence_number: 0x1234,
        auth_tag: 0x9A,
        encrypted: vec![0xDE, 0xAD, 0xBE, 0xEF, 1, 2, 3, 4, 5, 6],
    };
    single("handoff", handoff(&h1), 0x0C, ContinuityBody::Handoff(h1));
    let h2 = Handoff { clipboard: 0x08, sequence_number: 0xFFFE, auth_tag: 0x00, encrypted: vec![] };
    single("handoff clipboard set, minimal", handoff(&h2), 0x0C, ContinuityBody::Handoff(h2));

    let n1 = Nearby { status_flags: 0x1, action_code: 0xB, data_flags: 0x1C, auth_tag: vec![0x2B, 0x3C, 0x44] };
    single("nearby with auth tag", nearby(&n1), 0x10, ContinuityBody::Nearby(n1));
    let n2 = Nearby { status_flags: 0x7, action_code: 0x0, data_flags: 0x00, auth_tag: vec![] };
    single("nearby minimal", nearby(&n2), 0x10, ContinuityBody::Nearby(n2));

    single("airdrop too short is raw", raw(0x05, &[0; 17]), 0x05, ContinuityBody::Raw);
    single("proximity pairing too short is raw", raw(0x07, &[1, 2, 3, 4, 5, 6, 7, 8]), 0x07, ContinuityBody::Raw);
    single("handoff too short is raw", raw(0x0C, &[1, 2, 3]), 0x0C, ContinuityBody::Raw);
    single("nearby too short is raw", raw(0x10, &[0x15]), 0x10, ContinuityBody::Raw);
    single("unknown type 0x12 is raw", raw(0x12, &[0x00, 0x11, 0x22]), 0x12, ContinuityBody::Raw);

    let n3 = Nearby { status_flags: 0x3, action_code: 0x5, data_flags: 0x98, auth_tag: vec![0x01] };
    let h3 = Handoff { clipboard: 0x00, sequence_number: 7, auth_tag: 0x42, encrypted: vec![0xAA; 6] };
    out.push(Vector {
        name: "handoff then nearby",
        remainder: [handoff(&h3), nearby(&n3)].concat(),
        expected: vec![(0x0C, ContinuityBody::Handoff(h3)), (0x10, ContinuityBody::Nearby(n3))],
        expect_error: false,
    });
    let n4 = Nearby { status_flags: 0x1, action_code: 0x1, data_flags: 0x00, auth_tag: vec![] };
    out.push(Vector {
        name: "nearby then truncated message",
        remainder: [nearby(&n4), vec![0x0C, 0x0E, 0x01]].concat(),
        expected: vec![(0x10, ContinuityBody::Nearby(n4))],
        expect_error: true,
    });
    out
}

pub fn check(v: &Vector, got: &[AppleContinuityMessage], error: bool) -> Result<(), String> {
    let got: Vec<(u8, &ContinuityBody)> = got.iter().map(|m| (m.message_type, &m.body)).collect();
    let want: Vec<(u8, &ContinuityBody)> = v.expected.iter().map(|(t, b)| (*t, b)).collect();
    if got != want {
        return Err(format!("{}: got {got:?}, want {want:?}", v.name));
    }
    if error != v.expect_error {
        return Err(format!("{}: error flag {error}, want {}", v.name, v.expect_error));
    }
    Ok(())
}
