//! Journal record framing: `u32 LE length | u32 LE crc32(json) | json`.

use super::state::Mutation;
use serde::{Deserialize, Serialize};

const HEADER: usize = 8;
const MAX_RECORD: u32 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub mutation: Mutation,
}

pub fn encode_record(entry: &JournalEntry) -> Vec<u8> {
    let body = serde_json::to_vec(entry).expect("journal entries serialize");
    let mut out = Vec::with_capacity(HEADER + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

/// Result of scanning a journal: every intact record in order, and where the
/// scan stopped if it did not reach the end cleanly.
#[derive(Debug, Default)]
pub struct Scan {
    /// (byte offset, entry) pairs.
    pub records: Vec<(u64, JournalEntry)>,
    pub stopped: Option<(u64, String)>,
}

pub fn scan(bytes: &[u8]) -> Scan {
    let mut out = Scan::default();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let offset = pos as u64;
        let rest = &bytes[pos..];
        if rest.len() < HEADER {
            out.stopped = Some((offset, "torn record header".into()));
            break;
        }
        let len = u32::from_le_bytes(rest[0..4].try_into().unwrap());
        let crc = u32::from_le_bytes(rest[4..8].try_into().unwrap());
        if len > MAX_RECORD {
            out.stopped = Some((offset, format!("record length {len} exceeds limit")));
            break;
        }
        let Some(body) = rest.get(HEADER..HEADER + len as usize) else {
            out.stopped = Some((offset, "torn record body".into()));
            break;
        };
        if crc32fast::hash(body) != crc {
            out.stopped = Some((offset, "record checksum mismatch".into()));
            break;
        }
        match serde_json::from_slice::<JournalEntry>(body) {
            Ok(entry) => out.records.push((offset, entry)),
            Err(e) => {
                out.stopped = Some((offset, format!("undecodable record: {e}")));
                break;
            }
        }
        pos += HEADER + len as usize;
    }
    out
}
