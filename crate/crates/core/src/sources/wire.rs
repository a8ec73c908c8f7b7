//! Agent wire protocol: one JSON object per LF-terminated UTF-8 line.

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufRead, AsyncBufReadExt};

use crate::gatt::GattService;
use crate::identity::{hex_bytes, AddressType, MacAddr, PduType, RawAdvertisement};

pub const PROTO_VERSION: u32 = 1;
/// Upper bound on one line, terminator excluded.
pub const MAX_LINE_LEN: usize = 64 * 1024;

pub const ERR_EXPECTED_HELLO: &str = "expected_hello";
pub const ERR_UNSUPPORTED_VERSION: &str = "unsupported_version";
pub const ERR_MALFORMED: &str = "malformed_line";
pub const ERR_ENUMERATE_UNSUPPORTED: &str = "enumerate_unsupported";
pub const ERR_UNKNOWN_DEVICE: &str = "unknown_device";

pub const CAP_ADVERTISEMENTS: &str = "adv";
pub const CAP_GATT: &str = "gatt";

/// Advertisement as carried on the wire. The receiving side fills in the
/// source from the agent's name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireAdvertisement {
    pub timestamp_us: u64,
    pub mac: MacAddr,
    #[serde(default)]
    pub address_type: AddressType,
    pub pdu_type: PduType,
    #[serde(default)]
    pub channel: Option<u8>,
    pub rssi: i8,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

impl WireAdvertisement {
    pub fn into_raw(self, source_id: &str) -> RawAdvertisement {
        RawAdvertisement {
            timestamp_us: self.timestamp_us,
            source_id: source_id.to_owned(),
            mac: self.mac,
            address_type: self.address_type,
            pdu_type: self.pdu_type,
            channel: self.channel,
            rssi: self.rssi,
            payload: self.payload,
        }
    }
}

impl From<&RawAdvertisement> for WireAdvertisement {
    fn from(a: &RawAdvertisement) -> Self {
        Self {
            timestamp_us: a.timestamp_us,
            mac: a.mac,
            address_type: a.address_type,
            pdu_type: a.pdu_type,
            channel: a.channel,
            rssi: a.rssi,
            payload: a.payload.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        agent: String,
        proto_version: u32,
        #[serde(default)]
        capabilities: Vec<String>,
    },
    Adv(WireAdvertisement),
    GattResult {
        mac: MacAddr,
        services: Vec<GattService>,
    },
    EnumerateRequest {
        mac: MacAddr,
    },
    Heartbeat {
        ts: u64,
    },
    Error {
        code: String,
        message: String,
    },
}

impl WireMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        WireMessage::Error { code: code.to_owned(), message: message.into() }
    }

    /// The message as one LF-terminated line.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("wire messages always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &[u8]) -> Result<Self, String> {
        let text = std::str::from_utf8(line).map_err(|e| format!("not UTF-8: {e}"))?;
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Complete(Vec<u8>),
    /// The line exceeded the limit; its bytes were discarded up to and
    /// including the terminator.
    TooLong,
}

/// Reads lines of at most `max` bytes (not counting LF or a trailing CR).
/// Partial lines survive a dropped `next_line` future, so it can sit in a
/// `select!` arm.
pub struct LineReader<R> {
    inner: R,
    max: usize,
    buf: Vec<u8>,
    overflow: bool,
}

impl<R: AsyncBufRead + Unpin> LineReader<R> {
    pub fn new(inner: R, max: usize) -> Self {
        Self { inner, max, buf: Vec::new(), overflow: false }
    }

    /// The next line, or `None` at EOF. A final line without a terminator counts.
    pub async fn next_line(&mut self) -> std::io::Result<Option<Line>> {
        loop {
            let chunk = self.inner.fill_buf().await?;
            if chunk.is_empty() {
                if self.buf.is_empty() && !self.overflow {
                    return Ok(None);
                }
                return Ok(Some(self.take_line()));
            }
            let (take, done) = match chunk.iter().position(|&b| b == b'\n') {
                Some(i) => (i + 1, true),
                None => (chunk.len(), false),
            };
            let body = if done { &chunk[..take - 1] } else { &chunk[..take] };
            if !self.overflow {
                // One extra byte leaves room for a CR before the LF.
                if self.buf.len() + body.len() > self.max + 1 {
                    self.overflow = true;
                    self.buf = Vec::new();
                } else {
                    self.buf.extend_from_slice(body);
                }
            }
            self.inner.consume(take);
            if done {
                return Ok(Some(self.take_line()));
            }
        }
    }

    fn take_line(&mut self) -> Line {
        let mut buf = std::mem::take(&mut self.buf);
        let overflow = std::mem::take(&mut self.overflow);
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        if overflow || buf.len() > self.max {
            Line::TooLong
        } else {
            Line::Complete(buf)
        }
    }
}
