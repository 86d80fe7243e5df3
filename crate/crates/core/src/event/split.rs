use super::{Event, FragmentFile, FragmentMeta, Schema};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("cannot split {events} events into {fragments} fragments")]
    InvalidSplit { events: usize, fragments: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MergeError {
    #[error("nothing to merge")]
    Empty,
    #[error("fragments belong to datasets {0} and {1}")]
    DatasetMismatch(u64, u64),
    #[error("fragments have different schemas")]
    SchemaMismatch,
    #[error("fragment index {0} appears more than once")]
    DuplicateIndex(u32),
    #[error("merged fragment would exceed u32::MAX events")]
    TooLarge,
}

/// Splits `events` into `n_fragments` contiguous slices whose sizes differ by
/// at most one; the first `len % n` slices carry the extra event.
pub fn split_dataset(
    events: Vec<Event>,
    schema: &Schema,
    n_fragments: usize,
    dataset_id: u64,
) -> Result<Vec<FragmentFile>, SplitError> {
    let len = events.len();
    if n_fragments == 0 || len == 0 || n_fragments > len || len > u32::MAX as usize * n_fragments {
        return Err(SplitError::InvalidSplit {
            events: len,
            fragments: n_fragments,
        });
    }
    let base = len / n_fragments;
    let extra = len % n_fragments;
    let mut rest = events.into_iter();
    let mut ordinal = 0u64;
    let mut out = Vec::with_capacity(n_fragments);
    for index in 0..n_fragments {
        let size = base + usize::from(index < extra);
        let slice: Vec<Event> = rest.by_ref().take(size).collect();
        out.push(FragmentFile {
            meta: FragmentMeta {
                dataset_id,
                fragment_index: index as u32,
                event_count: size as u32,
                first_event_ordinal: ordinal,
            },
            schema: schema.clone(),
            events: slice,
        });
        ordinal += size as u64;
    }
    Ok(out)
}

/// Concatenates fragments of one dataset in original dataset order.
///
/// The output does not depend on the order of `parts`.
pub fn merge_fragments(mut parts: Vec<FragmentFile>) -> Result<FragmentFile, MergeError> {
    let first = parts.first().ok_or(MergeError::Empty)?;
    let dataset_id = first.meta.dataset_id;
    let schema = first.schema.clone();
    for p in &parts {
        if p.meta.dataset_id != dataset_id {
            return Err(MergeError::DatasetMismatch(dataset_id, p.meta.dataset_id));
        }
        if p.schema != schema {
            return Err(MergeError::SchemaMismatch);
        }
    }
    parts.sort_by_key(|p| (p.meta.first_event_ordinal, p.meta.fragment_index));
    let mut indices: Vec<u32> = parts.iter().map(|p| p.meta.fragment_index).collect();
    indices.sort_unstable();
    if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
        return Err(MergeError::DuplicateIndex(w[0]));
    }

    let total: usize = parts.iter().map(|p| p.events.len()).sum();
    let event_count = u32::try_from(total).map_err(|_| MergeError::TooLarge)?;
    let first_event_ordinal = parts[0].meta.first_event_ordinal;
    let mut events = Vec::with_capacity(total);
    for p in parts {
        events.extend(p.events);
    }
    Ok(FragmentFile {
        meta: FragmentMeta {
            dataset_id,
            fragment_index: 0,
            event_count,
            first_event_ordinal,
        },
        schema,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{encode_fragment, synth_dataset, Schema};

    fn events(n: usize) -> Vec<Event> {
        synth_dataset(11, n, &Schema::default_physics(), 3)
    }

    #[test]
    fn remainder_goes_to_leading_fragments() {
        let parts = split_dataset(events(10), &Schema::default_physics(), 3, 5).unwrap();
        let sizes: Vec<u32> = parts.iter().map(|p| p.meta.event_count).collect();
        assert_eq!(sizes, [4, 3, 3]);
        let ordinals: Vec<u64> = parts.iter().map(|p| p.meta.first_event_ordinal).collect();
        assert_eq!(ordinals, [0, 4, 7]);
    }

    #[test]
    fn identity_and_singleton_splits() {
        let one = split_dataset(events(6), &Schema::default_physics(), 1, 5).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].meta.first_event_ordinal, 0);
        assert_eq!(one[0].meta.event_count, 6);

        let five = split_dataset(events(5), &Schema::default_physics(), 5, 5).unwrap();
        let ordinals: Vec<u64> = five.iter().map(|p| p.meta.first_event_ordinal).collect();
        assert_eq!(ordinals, [0, 1, 2, 3, 4]);
        assert!(five.iter().all(|p| p.events.len() == 1));
    }

    #[test]
    fn too_many_fragments() {
        assert_eq!(
            split_dataset(events(2), &Schema::default_physics(), 3, 1),
            Err(SplitError::InvalidSplit {
                events: 2,
                fragments: 3
            })
        );
        assert!(split_dataset(vec![], &Schema::default_physics(), 1, 1).is_err());
        assert!(split_dataset(events(2), &Schema::default_physics(), 0, 1).is_err());
    }

    #[test]
    fn merge_inverts_split_regardless_of_order() {
        let original = events(17);
        let parts = split_dataset(original.clone(), &Schema::default_physics(), 3, 9).unwrap();
        let forward = merge_fragments(parts.clone()).unwrap();
        assert_eq!(forward.events, original);
        assert_eq!(forward.meta.event_count, 17);
        let mut reversed = parts;
        reversed.reverse();
        let backward = merge_fragments(reversed).unwrap();
        assert_eq!(encode_fragment(&forward).unwrap(), encode_fragment(&backward).unwrap());
    }

    #[test]
    fn singleton_merge_keeps_events() {
        let parts = split_dataset(events(4), &Schema::default_physics(), 1, 2).unwrap();
        let merged = merge_fragments(parts.clone()).unwrap();
        assert_eq!(merged.events, parts[0].events);
    }

    #[test]
    fn merge_mismatches() {
        let a = split_dataset(events(4), &Schema::default_physics(), 2, 1).unwrap();
        let b = split_dataset(events(4), &Schema::default_physics(), 2, 2).unwrap();
        assert_eq!(
            merge_fragments(vec![a[0].clone(), b[1].clone()]),
            Err(MergeError::DatasetMismatch(1, 2))
        );
        let mut other = a[1].clone();
        other.schema = Schema::new(["q", "r", "s", "t"]).unwrap();
        assert_eq!(
            merge_fragments(vec![a[0].clone(), other]),
            Err(MergeError::SchemaMismatch)
        );
        assert_eq!(
            merge_fragments(vec![a[0].clone(), a[0].clone()]),
            Err(MergeError::DuplicateIndex(0))
        );
        assert_eq!(merge_fragments(vec![]), Err(MergeError::Empty));
    }
}
