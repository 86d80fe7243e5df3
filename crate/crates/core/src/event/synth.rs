//! Deterministic synthetic events.
//!
//! Recipe, per event and in this order, from a ChaCha8 stream seeded with
//! `seed`:
//! - one uniform draw in `[0, 1)` per schema variable, scaled to the range
//!   returned by [`variable_range`];
//! - track count uniform in `[0, 32)`, then `px, py, pz` uniform in `[-10, 10)`
//!   for each track;
//! - vertex count uniform in `[0, 4)`, then `x, y, z` uniform in `[-1, 1)`;
//! - `payload_bytes` random bytes.
//!
//! `event_id` is the ordinal of the event in the dataset.

use super::{Event, Schema, Track, Vertex};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Half-open value range used for a variable of the given name.
///
/// The known physics variables span the thresholds used by the example jobs;
/// anything else falls back to `[0, 1000)`.
pub fn variable_range(name: &str) -> (f64, f64) {
    match name {
        "bx" => (0.0, 100_000.0),
        "gotmean" => (0.0, 10_000.0),
        "levr" => (0.0, 2_000.0),
        "evr" => (0.0, 100.0),
        _ => (0.0, 1_000.0),
    }
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    // 53 random mantissa bits, exact in f64
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn synth_dataset(seed: u64, n_events: usize, schema: &Schema, payload_bytes: usize) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges: Vec<(f64, f64)> = schema.variables().iter().map(|v| variable_range(v)).collect();
    (0..n_events as u64)
        .map(|event_id| {
            let values = ranges.iter().map(|&(lo, hi)| lo + unit(&mut rng) * (hi - lo)).collect();
            let n_tracks = (rng.next_u32() % 32) as usize;
            let tracks = (0..n_tracks)
                .map(|_| Track {
                    px: unit(&mut rng) * 20.0 - 10.0,
                    py: unit(&mut rng) * 20.0 - 10.0,
                    pz: unit(&mut rng) * 20.0 - 10.0,
                })
                .collect();
            let n_vertices = (rng.next_u32() % 4) as usize;
            let vertices = (0..n_vertices)
                .map(|_| Vertex {
                    x: unit(&mut rng) * 2.0 - 1.0,
                    y: unit(&mut rng) * 2.0 - 1.0,
                    z: unit(&mut rng) * 2.0 - 1.0,
                })
                .collect();
            let mut payload = vec![0u8; payload_bytes];
            rng.fill(payload.as_mut_slice());
            Event {
                event_id,
                values,
                tracks,
                vertices,
                payload,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{encode_fragment, split_dataset};

    fn bytes(seed: u64) -> Vec<u8> {
        let events = synth_dataset(seed, 100, &Schema::default_physics(), 0);
        encode_fragment(&split_dataset(events, &Schema::default_physics(), 1, 1).unwrap()[0]).unwrap()
    }

    #[test]
    fn empty() {
        assert!(synth_dataset(7, 0, &Schema::default_physics(), 0).is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(bytes(7), bytes(7));
        assert_ne!(bytes(7), bytes(8));
    }

    #[test]
    fn values_in_documented_ranges() {
        let schema = Schema::new(["bx", "gotmean", "levr", "evr", "other"]).unwrap();
        let events = synth_dataset(3, 500, &schema, 4);
        for (i, ev) in events.iter().enumerate() {
            assert_eq!(ev.event_id, i as u64);
            assert!(ev.tracks.len() < 32);
            assert!(ev.vertices.len() < 4);
            assert_eq!(ev.payload.len(), 4);
            for (name, v) in schema.variables().iter().zip(&ev.values) {
                let (lo, hi) = variable_range(name);
                assert!(*v >= lo && *v < hi, "{name}={v}");
            }
        }
    }
}
