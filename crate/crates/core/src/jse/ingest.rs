//! Building blocks for loading a dataset onto nodes.

use crate::catalog::{FragmentSummary, PlacementRecord};
use crate::event::{embedded_crc, split_dataset, EncodeError, Event, Schema, SplitError};
use crate::wire::NodeClient;
use futures::future::join_all;
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("replication {replication} needs at least as many nodes, have {nodes}")]
    Replication { replication: usize, nodes: usize },
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("staging failed on {}", .0.iter().map(|(n, e)| format!("{n}: {e}")).collect::<Vec<_>>().join("; "))]
    Stage(Vec<(String, String)>),
}

/// Encoded fragments of one dataset, ready to stage.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub dataset_id: u64,
    pub schema: Schema,
    pub fragments: Vec<FragmentSummary>,
    pub encoded: Vec<Vec<u8>>,
}

pub fn prepare(
    events: Vec<Event>,
    schema: &Schema,
    n_fragments: usize,
    dataset_id: u64,
) -> Result<PreparedDataset, IngestError> {
    let parts = split_dataset(events, schema, n_fragments, dataset_id)?;
    let mut fragments = Vec::with_capacity(parts.len());
    let mut encoded = Vec::with_capacity(parts.len());
    for part in parts {
        let bytes = part.encode()?;
        fragments.push(FragmentSummary {
            fragment_index: part.meta.fragment_index,
            event_count: part.meta.event_count,
            first_event_ordinal: part.meta.first_event_ordinal,
            crc32: embedded_crc(&bytes).expect("encoded fragment has a trailer"),
        });
        encoded.push(bytes);
    }
    Ok(PreparedDataset {
        dataset_id,
        schema: schema.clone(),
        fragments,
        encoded,
    })
}

/// Replica `r` of fragment `i` goes to `nodes[(i + r) % nodes.len()]` with
/// rank `r`.
pub fn round_robin(
    dataset_id: u64,
    n_fragments: u32,
    nodes: &[String],
    replication: usize,
) -> Result<Vec<PlacementRecord>, IngestError> {
    if replication == 0 || replication > nodes.len() {
        return Err(IngestError::Replication {
            replication,
            nodes: nodes.len(),
        });
    }
    let mut out = Vec::new();
    for i in 0..n_fragments {
        for r in 0..replication {
            out.push(PlacementRecord {
                dataset_id,
                fragment_index: i,
                node: nodes[(i as usize + r) % nodes.len()].clone(),
                replica_rank: r as u32,
            });
        }
    }
    Ok(out)
}

/// Uploads every placement's fragment, nodes in parallel and each node's
/// fragments in order. `addresses` maps node names to `host:port`.
pub async fn stage_placements(
    prepared: &PreparedDataset,
    placements: &[PlacementRecord],
    addresses: &BTreeMap<String, String>,
) -> Result<(), IngestError> {
    let mut per_node: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for p in placements {
        per_node.entry(&p.node).or_default().push(p.fragment_index);
    }
    let uploads = per_node.into_iter().map(|(node, indices)| async move {
        let Some(addr) = addresses.get(node) else {
            return Err((node.to_owned(), "no address known".to_owned()));
        };
        let client = NodeClient::new(addr.clone());
        for idx in indices {
            let bytes = &prepared.encoded[idx as usize];
            let expected = prepared.fragments[idx as usize].crc32;
            match client.stage(prepared.dataset_id, idx, bytes).await {
                Ok(crc) if crc == expected => {}
                Ok(crc) => {
                    return Err((
                        node.to_owned(),
                        format!("fragment {idx} acknowledged with crc {crc:#010x}"),
                    ))
                }
                Err(e) => return Err((node.to_owned(), e.to_string())),
            }
        }
        Ok(())
    });
    let failures: Vec<(String, String)> = join_all(uploads).await.into_iter().filter_map(Result::err).collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(IngestError::Stage(failures))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i}")).collect()
    }

    #[test]
    fn single_replica_alternates() {
        let ps = round_robin(1, 4, &names(2), 1).unwrap();
        let nodes: Vec<&str> = ps.iter().map(|p| p.node.as_str()).collect();
        assert_eq!(nodes, ["n0", "n1", "n0", "n1"]);
    }

    #[test]
    fn full_replication_covers_every_node() {
        let ps = round_robin(1, 3, &names(2), 2).unwrap();
        for i in 0..3 {
            let mut held: Vec<&str> = ps
                .iter()
                .filter(|p| p.fragment_index == i)
                .map(|p| p.node.as_str())
                .collect();
            held.sort();
            assert_eq!(held, ["n0", "n1"]);
            assert_eq!(
                ps.iter()
                    .filter(|p| p.fragment_index == i && p.replica_rank == 0)
                    .count(),
                1
            );
        }
    }

    #[test]
    fn replication_beyond_nodes_is_refused() {
        assert!(matches!(
            round_robin(1, 3, &names(2), 3),
            Err(IngestError::Replication {
                replication: 3,
                nodes: 2
            })
        ));
    }

    #[test]
    fn prepare_records_crcs() {
        let schema = Schema::default_physics();
        let p = prepare(crate::event::synth_dataset(1, 10, &schema, 4), &schema, 3, 9).unwrap();
        assert_eq!(p.fragments.len(), 3);
        for (f, bytes) in p.fragments.iter().zip(&p.encoded) {
            assert_eq!(crate::event::fragment_crc(bytes), Some(f.crc32));
        }
    }
}
