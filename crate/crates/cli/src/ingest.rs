//! Loads a dataset onto registered nodes through the gateway.

use crate::client::GatewayClient;
use crate::error::CliError;
use geps_core::event::{synth_dataset, Event};
use geps_core::jse::gateway::NewDataset;
use geps_core::jse::ingest::{prepare, round_robin, stage_placements, IngestError};
use geps_core::{FragmentFile, Schema};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub enum EventSource {
    Synthetic {
        seed: u64,
        n_events: usize,
        payload_bytes: usize,
        schema: Schema,
    },
    /// Events of an existing fragment file, in file order.
    File(PathBuf),
}

impl EventSource {
    pub fn load(&self) -> Result<(Vec<Event>, Schema), CliError> {
        match self {
            EventSource::Synthetic {
                seed,
                n_events,
                payload_bytes,
                schema,
            } => Ok((synth_dataset(*seed, *n_events, schema, *payload_bytes), schema.clone())),
            EventSource::File(path) => {
                let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                let f = FragmentFile::decode(&bytes).map_err(|e| match e.code() {
                    "corruption" => CliError::Checksum(format!("{}: {e}", path.display())),
                    _ => CliError::Usage(format!("{}: {e}", path.display())),
                })?;
                Ok((f.events, f.schema))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestRequest {
    pub source: EventSource,
    pub n_fragments: usize,
    pub replication: usize,
    /// Node names; empty means every alive node.
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct IngestReport {
    pub dataset_id: u64,
    pub event_count: u64,
    pub fragments: usize,
    pub placements: usize,
}

pub async fn ingest(client: &GatewayClient, req: &IngestRequest) -> Result<IngestReport, CliError> {
    let registered = client.nodes().await?;
    let mut addresses = BTreeMap::new();
    let nodes: Vec<String> = if req.nodes.is_empty() {
        registered.iter().filter(|n| n.alive).map(|n| n.name.clone()).collect()
    } else {
        for name in &req.nodes {
            if !registered.iter().any(|n| &n.name == name) {
                return Err(CliError::Usage(format!("node {name:?} is not registered")));
            }
        }
        req.nodes.clone()
    };
    for n in &registered {
        addresses.insert(n.name.clone(), n.address.clone());
    }
    if req.replication == 0 || req.replication > nodes.len() {
        return Err(CliError::Usage(format!(
            "replication {} needs at least as many nodes, have {}",
            req.replication,
            nodes.len()
        )));
    }

    let (events, schema) = req.source.load()?;
    if req.n_fragments == 0 || req.n_fragments > events.len() {
        return Err(CliError::Usage(format!(
            "cannot split {} events into {} fragments",
            events.len(),
            req.n_fragments
        )));
    }
    let dataset_id = client
        .datasets()
        .await?
        .iter()
        .map(|d| d.dataset.dataset_id)
        .max()
        .unwrap_or(0)
        + 1;
    let prepared = prepare(events, &schema, req.n_fragments, dataset_id).map_err(ingest_err)?;
    let placements =
        round_robin(dataset_id, prepared.fragments.len() as u32, &nodes, req.replication).map_err(ingest_err)?;
    stage_placements(&prepared, &placements, &addresses)
        .await
        .map_err(ingest_err)?;

    let record = client
        .create_dataset(&NewDataset {
            dataset_id: Some(dataset_id),
            schema,
            fragments: prepared.fragments.clone(),
        })
        .await
        .map_err(|e| match e.status() {
            Some(409) => CliError::Rejected(format!("dataset {dataset_id} was created concurrently: {e}")),
            _ => e.into(),
        })?;
    client.add_placements(dataset_id, &placements).await?;
    Ok(IngestReport {
        dataset_id,
        event_count: record.event_count,
        fragments: prepared.fragments.len(),
        placements: placements.len(),
    })
}

fn ingest_err(e: IngestError) -> CliError {
    match e {
        IngestError::Replication { .. } | IngestError::Split(_) => CliError::Usage(e.to_string()),
        IngestError::Stage(_) => CliError::Network(e.to_string()),
        IngestError::Encode(_) => CliError::Other(e.to_string()),
    }
}
