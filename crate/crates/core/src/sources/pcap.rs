//! Classic pcap with linktype 256 (BLE link layer with PHDR).

use std::io::{self, Read, Write};

use thiserror::Error;

use super::crc::{ble_crc, ADV_CRC_INIT};
use crate::dissector::MAX_PAYLOAD_LEN;
use crate::identity::{AddressType, MacAddr, PduType, RawAdvertisement};

pub const LINKTYPE_BLE_LL_WITH_PHDR: u32 = 256;
pub const ADV_ACCESS_ADDRESS: u32 = 0x8E89_BED6;

const MAGIC_US: u32 = 0xA1B2_C3D4;
const MAGIC_NS: u32 = 0xA1B2_3C4D;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const PHDR_LEN: usize = 10;
const SNAPLEN: u32 = 0xFFFF;
/// Anything larger than this is not a BLE packet and most likely a corrupt header.
const MAX_RECORD_LEN: u32 = 0x4_0000;

/// Dewhitened, signal valid, reference AA valid, CRC checked, CRC valid.
pub const WRITER_FLAGS: u16 = 0x0001 | 0x0002 | 0x0010 | 0x0400 | 0x0800;
/// rf_channel value written when the advertisement has no channel.
pub const RF_CHANNEL_UNKNOWN: u8 = 0xFF;

const TX_ADD: u8 = 0x40;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("not a pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("unsupported linktype {0}; expected 256 (BLE link layer with PHDR)")]
    UnsupportedLinktype(u32),
    #[error("capture truncated in record {record} at byte {offset}")]
    TruncatedRecord { record: usize, offset: u64 },
    #[error("timestamp {0} us does not fit a pcap record header")]
    TimestampOutOfRange(u64),
    #[error("payload of {0} bytes exceeds the advertising PDU limit")]
    PayloadTooLong(usize),
    #[error("reading capture: {0}")]
    StreamRead(#[source] io::Error),
    #[error("writing capture: {0}")]
    StreamWrite(#[source] io::Error),
}

/// Result of reading a capture. `truncated` is set when reading stopped
/// early; `advertisements` then holds every record parsed before that point.
#[derive(Debug, Default)]
pub struct PcapCapture {
    pub advertisements: Vec<RawAdvertisement>,
    /// Records that were not advertising PDUs (or not parseable as one).
    pub skipped: usize,
    pub truncated: Option<PcapError>,
}

#[derive(Clone, Copy)]
struct Format {
    swapped: bool,
    nanos: bool,
}

impl Format {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        if self.swapped {
            u32::from_be_bytes(a)
        } else {
            u32::from_le_bytes(a)
        }
    }
}

fn rf_to_channel(rf: u8) -> Option<u8> {
    match rf {
        0 => Some(37),
        12 => Some(38),
        39 => Some(39),
        _ => None,
    }
}

fn channel_to_rf(channel: Option<u8>) -> u8 {
    match channel {
        Some(37) => 0,
        Some(38) => 12,
        Some(39) => 39,
        _ => RF_CHANNEL_UNKNOWN,
    }
}

/// Reads all records. `source_id` is attached to every advertisement since
/// pcap has no field for it.
pub fn read_pcap<R: Read>(mut reader: R, source_id: &str) -> Result<PcapCapture, PcapError> {
    let mut header = [0u8; GLOBAL_HEADER_LEN];
    let got = read_full(&mut reader, &mut header).map_err(PcapError::StreamRead)?;
    if got < 4 {
        return Err(PcapError::BadMagic(u32::from_le_bytes([header[0], header[1], header[2], header[3]])));
    }
    let magic = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
    let format = match magic {
        MAGIC_US => Format { swapped: false, nanos: false },
        MAGIC_NS => Format { swapped: false, nanos: true },
        m if m.swap_bytes() == MAGIC_US => Format { swapped: true, nanos: false },
        m if m.swap_bytes() == MAGIC_NS => Format { swapped: true, nanos: true },
        m => return Err(PcapError::BadMagic(m)),
    };
    if got < GLOBAL_HEADER_LEN {
        return Err(PcapError::TruncatedRecord { record: 0, offset: got as u64 });
    }
    let linktype = format.u32(&header[20..24]);
    if linktype != LINKTYPE_BLE_LL_WITH_PHDR {
        return Err(PcapError::UnsupportedLinktype(linktype));
    }

    let mut capture = PcapCapture::default();
    let mut offset = GLOBAL_HEADER_LEN as u64;
    let mut record_header = [0u8; RECORD_HEADER_LEN];
    let mut data = Vec::new();
    for record in 0.. {
        let got = read_full(&mut reader, &mut record_header).map_err(PcapError::StreamRead)?;
        if got == 0 {
            break;
        }
        if got < RECORD_HEADER_LEN {
            capture.truncated = Some(PcapError::TruncatedRecord { record, offset });
            break;
        }
        let ts_sec = u64::from(format.u32(&record_header[0..4]));
        let ts_frac = u64::from(format.u32(&record_header[4..8]));
        let incl_len = format.u32(&record_header[8..12]);
        if incl_len > MAX_RECORD_LEN {
            capture.truncated = Some(PcapError::TruncatedRecord { record, offset });
            break;
        }
        data.resize(incl_len as usize, 0);
        let got = read_full(&mut reader, &mut data).map_err(PcapError::StreamRead)?;
        if got < data.len() {
            capture.truncated = Some(PcapError::TruncatedRecord { record, offset });
            break;
        }
        offset += (RECORD_HEADER_LEN + data.len()) as u64;
        let timestamp_us = ts_sec * 1_000_000 + if format.nanos { ts_frac / 1000 } else { ts_frac };
        match decode_record(&data, timestamp_us, source_id) {
            Some(adv) => capture.advertisements.push(adv),
            None => capture.skipped += 1,
        }
    }
    Ok(capture)
}

fn decode_record(data: &[u8], timestamp_us: u64, source_id: &str) -> Option<RawAdvertisement> {
    let phdr = data.get(..PHDR_LEN)?;
    let packet = &data[PHDR_LEN..];
    let aa = u32::from_le_bytes(packet.get(..4)?.try_into().ok()?);
    if aa != ADV_ACCESS_ADDRESS {
        return None;
    }
    let header = packet.get(4..6)?;
    let pdu_type = PduType::from_code(header[0] & 0x0F)?;
    let len = usize::from(header[1]);
    let body = packet.get(6..6 + len)?;
    packet.get(6 + len..6 + len + 3)?;
    if len < 6 || len - 6 > MAX_PAYLOAD_LEN {
        return None;
    }
    let mut mac = [0u8; 6];
    for (dst, src) in mac.iter_mut().zip(body[..6].iter().rev()) {
        *dst = *src;
    }
    Some(RawAdvertisement {
        timestamp_us,
        source_id: source_id.to_owned(),
        mac: MacAddr(mac),
        address_type: if header[0] & TX_ADD != 0 { AddressType::Random } else { AddressType::Public },
        pdu_type,
        channel: rf_to_channel(phdr[0]),
        rssi: phdr[1] as i8,
        payload: body[6..].to_vec(),
    })
}

/// Writes a microsecond pcap and returns the number of records.
pub fn write_pcap<'a, W: Write>(
    advs: impl IntoIterator<Item = &'a RawAdvertisement>,
    mut out: W,
) -> Result<usize, PcapError> {
    let mut header = Vec::with_capacity(GLOBAL_HEADER_LEN);
    header.extend_from_slice(&MAGIC_US.to_le_bytes());
    header.extend_from_slice(&2u16.to_le_bytes());
    header.extend_from_slice(&4u16.to_le_bytes());
    header.extend_from_slice(&0i32.to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    header.extend_from_slice(&SNAPLEN.to_le_bytes());
    header.extend_from_slice(&LINKTYPE_BLE_LL_WITH_PHDR.to_le_bytes());
    out.write_all(&header).map_err(PcapError::StreamWrite)?;

    let mut count = 0;
    let mut record = Vec::with_capacity(96);
    for adv in advs {
        encode_record(adv, &mut record)?;
        out.write_all(&record).map_err(PcapError::StreamWrite)?;
        count += 1;
    }
    out.flush().map_err(PcapError::StreamWrite)?;
    Ok(count)
}

fn encode_record(adv: &RawAdvertisement, record: &mut Vec<u8>) -> Result<(), PcapError> {
    if adv.payload.len() > MAX_PAYLOAD_LEN {
        return Err(PcapError::PayloadTooLong(adv.payload.len()));
    }
    let ts_sec =
        u32::try_from(adv.timestamp_us / 1_000_000).map_err(|_| PcapError::TimestampOutOfRange(adv.timestamp_us))?;
    let ts_usec = (adv.timestamp_us % 1_000_000) as u32;

    let mut pdu = Vec::with_capacity(2 + 6 + adv.payload.len());
    let tx_add = if adv.address_type == AddressType::Random { TX_ADD } else { 0 };
    pdu.push(adv.pdu_type.code() | tx_add);
    pdu.push((6 + adv.payload.len()) as u8);
    pdu.extend(adv.mac.0.iter().rev());
    pdu.extend_from_slice(&adv.payload);
    let crc = ble_crc(&pdu, ADV_CRC_INIT);

    let incl_len = (PHDR_LEN + 4 + pdu.len() + 3) as u32;
    record.clear();
    record.extend_from_slice(&ts_sec.to_le_bytes());
    record.extend_from_slice(&ts_usec.to_le_bytes());
    record.extend_from_slice(&incl_len.to_le_bytes());
    record.extend_from_slice(&incl_len.to_le_bytes());
    record.push(channel_to_rf(adv.channel));
    record.push(adv.rssi as u8);
    record.push(0);
    record.push(0);
    record.extend_from_slice(&ADV_ACCESS_ADDRESS.to_le_bytes());
    record.extend_from_slice(&WRITER_FLAGS.to_le_bytes());
    record.extend_from_slice(&ADV_ACCESS_ADDRESS.to_le_bytes());
    record.extend_from_slice(&pdu);
    record.extend_from_slice(&crc);
    Ok(())
}

/// Like `read_exact` but reports how much was read instead of failing at EOF.
fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
