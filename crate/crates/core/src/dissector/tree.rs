use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::apple::{self, ContinuityBody};
use super::company::{lookup_company, APPLE};
use super::*;

/// A byte-ranged, nested decode of a payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DissectionNode {
    pub label: String,
    pub offset: usize,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoded: Option<String>,
    #[serde(default)]
    pub children: Vec<DissectionNode>,
}

impl DissectionNode {
    pub fn new(label: impl Into<String>, offset: usize, length: usize) -> Self {
        Self { label: label.into(), offset, length, decoded: None, children: Vec::new() }
    }

    pub fn leaf(label: impl Into<String>, offset: usize, length: usize, decoded: impl Into<String>) -> Self {
        Self::new(label, offset, length).with_decoded(decoded)
    }

    pub fn with_decoded(mut self, decoded: impl Into<String>) -> Self {
        self.decoded = Some(decoded.into());
        self
    }

    pub fn end(&self) -> usize {
        self.offset + self.length
    }

    /// Checks that children nest inside their parent and siblings are disjoint.
    pub fn validate(&self) -> Result<(), String> {
        let mut prev_end = self.offset;
        for child in &self.children {
            if child.offset < self.offset || child.end() > self.end() {
                return Err(format!(
                    "'{}' [{}..{}] escapes parent '{}' [{}..{}]",
                    child.label,
                    child.offset,
                    child.end(),
                    self.label,
                    self.offset,
                    self.end()
                ));
            }
            if child.offset < prev_end {
                return Err(format!("'{}' overlaps its previous sibling", child.label));
            }
            prev_end = child.end();
            child.validate()?;
        }
        Ok(())
    }

    /// Depth-first walk, parents before children.
    pub fn walk(&self, visit: &mut impl FnMut(&DissectionNode, usize)) {
        fn go(node: &DissectionNode, depth: usize, visit: &mut impl FnMut(&DissectionNode, usize)) {
            visit(node, depth);
            for c in &node.children {
                go(c, depth + 1, visit);
            }
        }
        go(self, 0, visit);
    }

    pub fn find(&self, label: &str) -> Option<&DissectionNode> {
        if self.label == label {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(label))
    }

    /// Indented, one node per line.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        self.walk(&mut |node, depth| {
            let _ = write!(out, "{:indent$}{} [{}..{}]", "", node.label, node.offset, node.end(), indent = depth * 2);
            if let Some(d) = &node.decoded {
                let _ = write!(out, ": {d}");
            }
            out.push('\n');
        });
        out
    }
}

/// Builds the dissection tree for a payload. Never fails: anything that
/// cannot be decoded becomes an `undecoded` leaf.
pub fn dissect(payload: &[u8]) -> DissectionNode {
    let mut root = DissectionNode::new("Advertisement", 0, payload.len());
    let parsed = match parse_ad_structures(payload) {
        Ok(p) => p,
        Err(e) => {
            root.children.push(undecoded(0, payload).with_decoded(e.to_string()));
            return root;
        }
    };
    for s in &parsed.structures {
        root.children.push(structure_node(s));
    }
    if let Some(t) = parsed.trailer {
        let bytes = &payload[t.offset..t.offset + t.len];
        root.children.push(match t.kind {
            TrailerKind::Padding => DissectionNode::leaf("Padding", t.offset, t.len, hex::encode(bytes)),
            TrailerKind::Garbage => DissectionNode::leaf(
                "undecoded",
                t.offset,
                t.len,
                format!("truncated AD structure: {}", hex::encode(bytes)),
            ),
        });
    }
    root
}

fn undecoded(offset: usize, bytes: &[u8]) -> DissectionNode {
    DissectionNode::leaf("undecoded", offset, bytes.len(), hex::encode(bytes))
}

fn structure_node(s: &AdStructure) -> DissectionNode {
    let label = ad_type_name(s.ad_type).map(str::to_owned).unwrap_or_else(|| format!("AD Type 0x{:02X}", s.ad_type));
    let mut node = DissectionNode::new(label, s.offset, s.wire_len());
    node.children.push(DissectionNode::leaf("Length", s.offset, 1, (s.value.len() + 1).to_string()));
    node.children.push(DissectionNode::leaf("Type", s.offset + 1, 1, format!("0x{:02X}", s.ad_type)));
    let base = s.offset + 2;
    let v = s.value.as_slice();
    if v.is_empty() {
        return node;
    }
    let summary = match s.ad_type {
        AD_FLAGS => {
            let text = flags_display(v[0]);
            node.children.push(DissectionNode::leaf("Value", base, 1, text.clone()));
            if v.len() > 1 {
                node.children.push(undecoded(base + 1, &v[1..]));
            }
            Some(text)
        }
        AD_INCOMPLETE_UUID16 | AD_COMPLETE_UUID16 => Some(uuid_list(&mut node, base, v, 2)),
        AD_INCOMPLETE_UUID32 | AD_COMPLETE_UUID32 => Some(uuid_list(&mut node, base, v, 4)),
        AD_INCOMPLETE_UUID128 | AD_COMPLETE_UUID128 => Some(uuid_list(&mut node, base, v, 16)),
        AD_SHORTENED_LOCAL_NAME | AD_COMPLETE_LOCAL_NAME => {
            let name = String::from_utf8_lossy(v).into_owned();
            node.children.push(DissectionNode::leaf("Value", base, v.len(), name.clone()));
            Some(name)
        }
        AD_TX_POWER_LEVEL if v.len() == 1 => {
            let text = format!("{} dBm", v[0] as i8);
            node.children.push(DissectionNode::leaf("Value", base, 1, text.clone()));
            Some(text)
        }
        AD_SERVICE_DATA_UUID16 if v.len() >= 2 => {
            let uuid = format!("0x{:04X}", u16::from_le_bytes([v[0], v[1]]));
            node.children.push(DissectionNode::leaf("Service UUID", base, 2, uuid.clone()));
            if v.len() > 2 {
                node.children.push(DissectionNode::leaf("Data", base + 2, v.len() - 2, hex::encode(&v[2..])));
            }
            Some(uuid)
        }
        AD_APPEARANCE if v.len() == 2 => {
            let text = format!("0x{:04X}", u16::from_le_bytes([v[0], v[1]]));
            node.children.push(DissectionNode::leaf("Value", base, 2, text.clone()));
            Some(text)
        }
        AD_MANUFACTURER_DATA if v.len() >= 2 => Some(manufacturer(&mut node, base, v)),
        AD_TX_POWER_LEVEL | AD_SERVICE_DATA_UUID16 | AD_APPEARANCE | AD_MANUFACTURER_DATA => {
            node.children.push(undecoded(base, v));
            None
        }
        _ => {
            node.children.push(DissectionNode::leaf("Value", base, v.len(), hex::encode(v)));
            Some(hex::encode(v))
        }
    };
    node.decoded = summary;
    node
}

fn flags_display(flags: u8) -> String {
    const NAMES: [&str; 5] = [
        "LE Limited Discoverable Mode",
        "LE General Discoverable Mode",
        "BR/EDR Not Supported",
        "Simultaneous LE and BR/EDR (Controller)",
        "Simultaneous LE and BR/EDR (Host)",
    ];
    let set: Vec<&str> = (0..5).filter(|b| flags & (1 << b) != 0).map(|b| NAMES[b]).collect();
    if set.is_empty() {
        format!("0x{flags:02X}")
    } else {
        format!("0x{flags:02X} ({})", set.join(", "))
    }
}

fn uuid_list(node: &mut DissectionNode, base: usize, v: &[u8], width: usize) -> String {
    let whole = v.len() / width * width;
    let mut list = DissectionNode::new("Value", base, whole);
    let mut texts = Vec::new();
    for (i, chunk) in v[..whole].chunks_exact(width).enumerate() {
        let text = match width {
            2 => format!("0x{:04X}", u16::from_le_bytes([chunk[0], chunk[1]])),
            4 => format!("0x{:08X}", u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]])),
            _ => {
                let mut be = chunk.to_vec();
                be.reverse();
                let h = hex::encode(be);
                format!("{}-{}-{}-{}-{}", &h[..8], &h[8..12], &h[12..16], &h[16..20], &h[20..])
            }
        };
        list.children.push(DissectionNode::leaf("Service UUID", base + i * width, width, text.clone()));
        texts.push(text);
    }
    if whole > 0 {
        node.children.push(list);
    }
    if whole < v.len() {
        node.children.push(undecoded(base + whole, &v[whole..]));
    }
    texts.join(", ")
}

fn manufacturer(node: &mut DissectionNode, base: usize, v: &[u8]) -> String {
    let company = u16::from_le_bytes([v[0], v[1]]);
    let name = lookup_company(company).unwrap_or("Unknown");
    node.children.push(DissectionNode::leaf("Company ID", base, 2, format!("{name} (0x{company:04X})")));
    let rest = &v[2..];
    if rest.is_empty() {
        return name.to_owned();
    }
    if company == APPLE {
        node.children.push(continuity_node(base + 2, rest));
    } else {
        node.children.push(DissectionNode::leaf("Data", base + 2, rest.len(), hex::encode(rest)));
    }
    name.to_owned()
}

fn continuity_node(base: usize, rest: &[u8]) -> DissectionNode {
    let parse = apple::dissect_apple(rest);
    let mut node = DissectionNode::new("Apple Continuity", base, rest.len());
    let types: Vec<String> = parse
        .messages
        .iter()
        .map(|m| m.type_name().map(str::to_owned).unwrap_or_else(|| format!("0x{:02X}", m.message_type)))
        .collect();
    node.decoded = Some(types.join(", "));
    for m in &parse.messages {
        let start = base + m.offset;
        let label = match m.type_name() {
            Some(name) => format!("{name} (0x{:02X})", m.message_type),
            None => format!("Continuity Type 0x{:02X}", m.message_type),
        };
        let mut msg = DissectionNode::new(label, start, 2 + m.payload.len());
        msg.children.push(DissectionNode::leaf("Message Type", start, 1, format!("0x{:02X}", m.message_type)));
        msg.children.push(DissectionNode::leaf("Message Length", start + 1, 1, m.payload.len().to_string()));
        let pbase = start + 2;
        if matches!(m.body, ContinuityBody::Raw) {
            if !m.payload.is_empty() {
                msg.children.push(DissectionNode::leaf("Data", pbase, m.payload.len(), hex::encode(&m.payload)));
            }
        } else {
            push_fields(&mut msg, pbase, &m.payload, &m.decoded_fields());
        }
        node.children.push(msg);
    }
    if let Some(err @ apple::ContinuityError::TruncatedMessage { offset, .. }) = &parse.error {
        node.children.push(
            DissectionNode::new("undecoded", base + offset, rest.len() - offset)
                .with_decoded(format!("{err}: {}", hex::encode(&rest[*offset..]))),
        );
    }
    node
}

/// Emits field leaves, merging fields that share a byte range and filling
/// uncovered bytes with `undecoded` leaves.
fn push_fields(msg: &mut DissectionNode, pbase: usize, payload: &[u8], fields: &[apple::ContinuityField]) {
    let mut cursor = 0;
    let mut i = 0;
    while i < fields.len() {
        let (off, len) = (fields[i].offset, fields[i].len);
        let mut j = i;
        while j < fields.len() && fields[j].offset == off && fields[j].len == len {
            j += 1;
        }
        if off > cursor {
            msg.children.push(undecoded(pbase + cursor, &payload[cursor..off]));
        }
        let group = &fields[i..j];
        let label = group.iter().map(|f| humanize(f.name)).collect::<Vec<_>>().join(" / ");
        let decoded = group.iter().map(|f| f.value.as_str()).collect::<Vec<_>>().join(", ");
        msg.children.push(DissectionNode::leaf(label, pbase + off, len, decoded));
        cursor = off + len;
        i = j;
    }
    if cursor < payload.len() {
        msg.children.push(undecoded(pbase + cursor, &payload[cursor..]));
    }
}

fn humanize(name: &str) -> String {
    let mut s = name.replace('_', " ");
    if let Some(first) = s.get_mut(..1) {
        first.make_ascii_uppercase();
    }
    s
}
