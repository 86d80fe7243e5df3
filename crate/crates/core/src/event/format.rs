//! GEB1 fragment encoding.
//!
//! ```text
//! magic "GEB1" | version u16 | dataset_id u64 | fragment_index u32
//! | first_event_ordinal u64 | event_count u32 | n_vars u16
//! | n_vars x (name_len u16, utf-8 name)
//! | event_count x (event_id u64, n_vars x f64,
//!                  n_tracks u16, n_tracks x 3 f64,
//!                  n_vertices u16, n_vertices x 3 f64,
//!                  payload_len u32, payload)
//! | crc32 u32
//! ```
//!
//! All integers and doubles are little-endian. The CRC-32 (IEEE) covers every
//! byte between the magic and the checksum itself.

use super::MAX_PAYLOAD_BYTES;
use super::{Event, EventError, FragmentFile, FragmentMeta, Schema, SchemaError, Track, Vertex};

pub const MAGIC: &[u8; 4] = b"GEB1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("meta declares {declared} events but fragment holds {actual}")]
    EventCount { declared: u32, actual: usize },
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("schema has {0} variables, at most 65535 allowed")]
    TooManyVariables(usize),
}

/// Why a byte string is not a valid fragment.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("format error: {0}")]
    Format(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Corruption { stored: u32, computed: u32 },
    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncation {
        offset: usize,
        needed: usize,
        available: usize,
    },
}

impl DecodeError {
    /// Short stable code: `format`, `corruption` or `truncation`.
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::Format(_) => "format",
            DecodeError::Corruption { .. } => "corruption",
            DecodeError::Truncation { .. } => "truncation",
        }
    }
}

pub fn encode_fragment(f: &FragmentFile) -> Result<Vec<u8>, EncodeError> {
    if f.meta.event_count as usize != f.events.len() {
        return Err(EncodeError::EventCount {
            declared: f.meta.event_count,
            actual: f.events.len(),
        });
    }
    if f.schema.len() > u16::MAX as usize {
        return Err(EncodeError::TooManyVariables(f.schema.len()));
    }
    let mut size = 4 + 2 + 8 + 4 + 8 + 4 + 2 + 4;
    size += f.schema.variables().iter().map(|v| 2 + v.len()).sum::<usize>();
    for ev in &f.events {
        ev.validate(&f.schema)?;
        size += 8 + 8 * ev.values.len() + 2 + 24 * ev.tracks.len() + 2 + 24 * ev.vertices.len();
        size += 4 + ev.payload.len();
    }

    let mut out = Vec::with_capacity(size);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&f.meta.dataset_id.to_le_bytes());
    out.extend_from_slice(&f.meta.fragment_index.to_le_bytes());
    out.extend_from_slice(&f.meta.first_event_ordinal.to_le_bytes());
    out.extend_from_slice(&f.meta.event_count.to_le_bytes());
    out.extend_from_slice(&(f.schema.len() as u16).to_le_bytes());
    for name in f.schema.variables() {
        // identifiers are ASCII and short; u16 cannot overflow for valid names
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for ev in &f.events {
        out.extend_from_slice(&ev.event_id.to_le_bytes());
        for v in &ev.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(ev.tracks.len() as u16).to_le_bytes());
        for t in &ev.tracks {
            for c in [t.px, t.py, t.pz] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out.extend_from_slice(&(ev.vertices.len() as u16).to_le_bytes());
        for v in &ev.vertices {
            for c in [v.x, v.y, v.z] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out.extend_from_slice(&(ev.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&ev.payload);
    }
    let crc = crc32fast::hash(&out[MAGIC.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    debug_assert_eq!(out.len(), size);
    Ok(out)
}

/// Reads the checksum stored in the trailer of an encoded fragment.
pub fn embedded_crc(bytes: &[u8]) -> Option<u32> {
    if bytes.len() < MAGIC.len() + 4 {
        return None;
    }
    let tail: [u8; 4] = bytes[bytes.len() - 4..].try_into().ok()?;
    Some(u32::from_le_bytes(tail))
}

/// Recomputes the checksum over the body of an encoded fragment.
pub fn fragment_crc(bytes: &[u8]) -> Option<u32> {
    if bytes.len() < MAGIC.len() + 4 {
        return None;
    }
    Some(crc32fast::hash(&bytes[MAGIC.len()..bytes.len() - 4]))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(DecodeError::Truncation {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    /// Fails with truncation when `count` items of at least `min_size`
    /// bytes cannot fit in what is left. Guards allocations sized from
    /// untrusted length fields.
    fn ensure(&self, count: usize, min_size: usize) -> Result<(), DecodeError> {
        let needed = count.saturating_mul(min_size);
        if needed > self.remaining() {
            return Err(DecodeError::Truncation {
                offset: self.pos,
                needed,
                available: self.remaining(),
            });
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses only the fixed header and schema. The checksum is not verified,
/// so `bytes` may be a prefix of the file.
pub fn decode_header(bytes: &[u8]) -> Result<(FragmentMeta, Schema), DecodeError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(DecodeError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(DecodeError::Format(format!("unsupported version {version}")));
    }
    let meta = FragmentMeta {
        dataset_id: cur.u64()?,
        fragment_index: cur.u32()?,
        first_event_ordinal: cur.u64()?,
        event_count: cur.u32()?,
    };
    let n_vars = cur.u16()? as usize;
    let mut names = Vec::with_capacity(n_vars.min(cur.remaining() / 2));
    for _ in 0..n_vars {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| DecodeError::Format("variable name is not UTF-8".into()))?;
        names.push(name.to_owned());
    }
    let schema = Schema::new(names).map_err(|e: SchemaError| DecodeError::Format(e.to_string()))?;
    Ok((meta, schema))
}

pub fn decode_fragment(bytes: &[u8]) -> Result<FragmentFile, DecodeError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(DecodeError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(DecodeError::Format(format!("unsupported version {version}")));
    }
    let dataset_id = cur.u64()?;
    let fragment_index = cur.u32()?;
    let first_event_ordinal = cur.u64()?;
    let event_count = cur.u32()?;
    let n_vars = cur.u16()? as usize;

    // Semantic problems are reported only after the checksum has been
    // verified, so that damaged bytes surface as corruption.
    let mut deferred: Option<String> = None;

    cur.ensure(n_vars, 2)?;
    let mut names = Vec::with_capacity(n_vars);
    for _ in 0..n_vars {
        let len = cur.u16()? as usize;
        let raw = cur.take(len)?;
        match std::str::from_utf8(raw) {
            Ok(s) => names.push(s.to_owned()),
            Err(_) => {
                deferred.get_or_insert_with(|| "variable name is not UTF-8".into());
                names.push(String::new());
            }
        }
    }

    // smallest possible event: id, values, two counts and a payload length
    let min_event = 8 + 8 * n_vars + 2 + 2 + 4;
    cur.ensure(event_count as usize, min_event)?;
    let mut events = Vec::with_capacity(event_count as usize);
    for _ in 0..event_count {
        let event_id = cur.u64()?;
        let mut values = Vec::with_capacity(n_vars);
        for _ in 0..n_vars {
            values.push(cur.f64()?);
        }
        let n_tracks = cur.u16()? as usize;
        cur.ensure(n_tracks, 24)?;
        let mut tracks = Vec::with_capacity(n_tracks);
        for _ in 0..n_tracks {
            tracks.push(Track {
                px: cur.f64()?,
                py: cur.f64()?,
                pz: cur.f64()?,
            });
        }
        let n_vertices = cur.u16()? as usize;
        cur.ensure(n_vertices, 24)?;
        let mut vertices = Vec::with_capacity(n_vertices);
        for _ in 0..n_vertices {
            vertices.push(Vertex {
                x: cur.f64()?,
                y: cur.f64()?,
                z: cur.f64()?,
            });
        }
        let payload_len = cur.u32()? as usize;
        if payload_len > MAX_PAYLOAD_BYTES {
            deferred.get_or_insert_with(|| format!("payload of {payload_len} bytes exceeds limit"));
        }
        let payload = cur.take(payload_len)?.to_vec();
        events.push(Event {
            event_id,
            values,
            tracks,
            vertices,
            payload,
        });
    }

    let body_end = cur.pos;
    let stored = cur.u32()?;
    if cur.remaining() != 0 {
        return Err(DecodeError::Format(format!(
            "{} trailing bytes after checksum",
            cur.remaining()
        )));
    }
    let computed = crc32fast::hash(&bytes[MAGIC.len()..body_end]);
    if stored != computed {
        return Err(DecodeError::Corruption { stored, computed });
    }
    if let Some(msg) = deferred {
        return Err(DecodeError::Format(msg));
    }

    let schema = Schema::new(names).map_err(|e: SchemaError| DecodeError::Format(e.to_string()))?;
    for ev in &events {
        ev.validate(&schema).map_err(|e| DecodeError::Format(e.to_string()))?;
    }
    Ok(FragmentFile {
        meta: FragmentMeta {
            dataset_id,
            fragment_index,
            event_count,
            first_event_ordinal,
        },
        schema,
        events,
    })
}
