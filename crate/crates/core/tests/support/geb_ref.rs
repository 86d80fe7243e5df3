//! Reference GEB1 encoder written straight from the byte layout, with its
//! own bitwise CRC-32.

use geps_core::event::Event;

/// Bitwise CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

pub fn encode(
    dataset_id: u64,
    fragment_index: u32,
    first_event_ordinal: u64,
    variables: &[String],
    events: &[Event],
) -> Vec<u8> {
    let mut out = b"GEB1".to_vec();
    out.extend(1u16.to_le_bytes());
    out.extend(dataset_id.to_le_bytes());
    out.extend(fragment_index.to_le_bytes());
    out.extend(first_event_ordinal.to_le_bytes());
    out.extend((events.len() as u32).to_le_bytes());
    out.extend((variables.len() as u16).to_le_bytes());
    for v in variables {
        out.extend((v.len() as u16).to_le_bytes());
        out.extend(v.as_bytes());
    }
    for e in events {
        out.extend(e.event_id.to_le_bytes());
        for v in &e.values {
            out.extend(v.to_le_bytes());
        }
        out.extend((e.tracks.len() as u16).to_le_bytes());
        for t in &e.tracks {
            out.extend(t.px.to_le_bytes());
            out.extend(t.py.to_le_bytes());
            out.extend(t.pz.to_le_bytes());
        }
        out.extend((e.vertices.len() as u16).to_le_bytes());
        for v in &e.vertices {
            out.extend(v.x.to_le_bytes());
            out.extend(v.y.to_le_bytes());
            out.extend(v.z.to_le_bytes());
        }
        out.extend((e.payload.len() as u32).to_le_bytes());
        out.extend(&e.payload);
    }
    let crc = crc32(&out[4..]);
    out.extend(crc.to_le_bytes());
    out
}
