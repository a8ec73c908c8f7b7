//! BLE link-layer CRC-24.

/// CRC init value for advertising-channel PDUs.
pub const ADV_CRC_INIT: u32 = 0x555555;

const POLY_LFSR: u32 = 0x5A6000;

/// Computes the CRC over `pdu` (header plus payload) and returns the three
/// bytes in on-air order.
pub fn ble_crc(pdu: &[u8], init: u32) -> [u8; 3] {
    let i = init.to_le_bytes();
    let mut state = u32::from_le_bytes([i[0].reverse_bits(), i[1].reverse_bits(), i[2].reverse_bits(), 0]);
    for &byte in pdu {
        let mut b = byte;
        for _ in 0..8 {
            let bit = (state ^ u32::from(b)) & 1;
            b >>= 1;
            state >>= 1;
            if bit == 1 {
                state |= 1 << 23;
                state ^= POLY_LFSR;
            }
        }
    }
    let s = state.to_le_bytes();
    [s[0], s[1], s[2]]
}
