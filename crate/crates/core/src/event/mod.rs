//! Event data model and the fragment ("brick") file format.

mod format;
mod split;
mod synth;

pub use format::{
    decode_fragment, decode_header, embedded_crc, encode_fragment, fragment_crc, DecodeError, EncodeError,
};
pub use split::{merge_fragments, split_dataset, MergeError, SplitError};
pub use synth::{synth_dataset, variable_range};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Largest payload a single event may carry.
pub const MAX_PAYLOAD_BYTES: usize = 16 * 1024 * 1024;

/// File extension used for encoded fragments.
pub const FRAGMENT_EXTENSION: &str = "geb";

/// Variable names used by the portal examples.
pub const DEFAULT_VARIABLES: [&str; 4] = ["bx", "gotmean", "levr", "evr"];

/// Returns true when `name` matches `[a-zA-Z_][a-zA-Z0-9_]*`.
pub fn is_identifier(name: &str) -> bool {
    let mut bytes = name.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema must declare at least one variable")]
    Empty,
    #[error("invalid variable name {0:?}")]
    InvalidName(String),
    #[error("duplicate variable name {0:?}")]
    Duplicate(String),
}

/// Ordered list of per-event scalar variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Schema {
    variables: Vec<String>,
}

impl Schema {
    pub fn new<I, S>(variables: I) -> Result<Self, SchemaError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let variables: Vec<String> = variables.into_iter().map(Into::into).collect();
        if variables.is_empty() {
            return Err(SchemaError::Empty);
        }
        for (i, name) in variables.iter().enumerate() {
            if !is_identifier(name) {
                return Err(SchemaError::InvalidName(name.clone()));
            }
            if variables[..i].contains(name) {
                return Err(SchemaError::Duplicate(name.clone()));
            }
        }
        Ok(Self { variables })
    }

    /// The `bx, gotmean, levr, evr` schema from the job-status examples.
    pub fn default_physics() -> Self {
        Self::new(DEFAULT_VARIABLES).expect("default schema is valid")
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }
}

impl TryFrom<Vec<String>> for Schema {
    type Error = SchemaError;

    fn try_from(value: Vec<String>) -> Result<Self, Self::Error> {
        Schema::new(value)
    }
}

impl From<Schema> for Vec<String> {
    fn from(schema: Schema) -> Self {
        schema.variables
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.variables.join(","))
    }
}

/// Momentum of a reconstructed track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

/// Position of a reconstructed vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// One collision record.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub event_id: u64,
    /// One value per schema variable, in schema order.
    pub values: Vec<f64>,
    pub tracks: Vec<Track>,
    pub vertices: Vec<Vertex>,
    /// Opaque ballast standing in for raw detector data.
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EventError {
    #[error("event {event_id} has {actual} values, schema declares {expected}")]
    ValueCount {
        event_id: u64,
        expected: usize,
        actual: usize,
    },
    #[error("event {event_id} contains a non-finite number")]
    NonFinite { event_id: u64 },
    #[error("event {event_id} payload of {len} bytes exceeds {MAX_PAYLOAD_BYTES}")]
    PayloadTooLarge { event_id: u64, len: usize },
    #[error("event {event_id} has {count} {what}, at most 65535 allowed")]
    TooMany {
        event_id: u64,
        what: &'static str,
        count: usize,
    },
}

impl Event {
    /// Checks the event against `schema` and the numeric invariants.
    pub fn validate(&self, schema: &Schema) -> Result<(), EventError> {
        let event_id = self.event_id;
        if self.values.len() != schema.len() {
            return Err(EventError::ValueCount {
                event_id,
                expected: schema.len(),
                actual: self.values.len(),
            });
        }
        let finite = self.values.iter().all(|v| v.is_finite())
            && self
                .tracks
                .iter()
                .all(|t| t.px.is_finite() && t.py.is_finite() && t.pz.is_finite())
            && self
                .vertices
                .iter()
                .all(|v| v.x.is_finite() && v.y.is_finite() && v.z.is_finite());
        if !finite {
            return Err(EventError::NonFinite { event_id });
        }
        if self.payload.len() > MAX_PAYLOAD_BYTES {
            return Err(EventError::PayloadTooLarge {
                event_id,
                len: self.payload.len(),
            });
        }
        if self.tracks.len() > u16::MAX as usize {
            return Err(EventError::TooMany {
                event_id,
                what: "tracks",
                count: self.tracks.len(),
            });
        }
        if self.vertices.len() > u16::MAX as usize {
            return Err(EventError::TooMany {
                event_id,
                what: "vertices",
                count: self.vertices.len(),
            });
        }
        Ok(())
    }
}

/// Identity of a fragment within its dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FragmentMeta {
    pub dataset_id: u64,
    pub fragment_index: u32,
    pub event_count: u32,
    /// Position of the first event in the original dataset order.
    pub first_event_ordinal: u64,
}

/// A contiguous slice of a dataset, the unit of placement and staging.
///
/// The CRC-32 is not stored here; it is computed by [`encode_fragment`] and
/// checked by [`decode_fragment`].
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentFile {
    pub meta: FragmentMeta,
    pub schema: Schema,
    pub events: Vec<Event>,
}

impl FragmentFile {
    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        encode_fragment(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        decode_fragment(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifier_pattern() {
        assert!(is_identifier("bx"));
        assert!(is_identifier("_x9"));
        assert!(!is_identifier("9x"));
        assert!(!is_identifier(""));
        assert!(!is_identifier("a-b"));
    }

    #[test]
    fn schema_rejects_duplicates_and_empty() {
        assert_eq!(Schema::new(Vec::<String>::new()), Err(SchemaError::Empty));
        assert_eq!(Schema::new(["a", "b", "a"]), Err(SchemaError::Duplicate("a".into())));
        assert_eq!(
            Schema::new(["ok", "no way"]),
            Err(SchemaError::InvalidName("no way".into()))
        );
    }

    #[test]
    fn schema_serde_validates() {
        let s: Schema = serde_json::from_str(r#"["bx","evr"]"#).unwrap();
        assert_eq!(s.index_of("evr"), Some(1));
        assert!(serde_json::from_str::<Schema>(r#"["bx","bx"]"#).is_err());
    }

    #[test]
    fn event_validation() {
        let schema = Schema::default_physics();
        let mut ev = Event {
            event_id: 3,
            values: vec![1.0, 2.0, 3.0, 4.0],
            tracks: vec![],
            vertices: vec![],
            payload: vec![],
        };
        assert!(ev.validate(&schema).is_ok());
        ev.values[2] = f64::NAN;
        assert_eq!(ev.validate(&schema), Err(EventError::NonFinite { event_id: 3 }));
        ev.values.pop();
        assert!(matches!(ev.validate(&schema), Err(EventError::ValueCount { .. })));
    }
}
