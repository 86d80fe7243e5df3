#![allow(dead_code)]

use geps_cli::cluster::{ClusterConfig, LocalCluster};
use geps_cli::ingest::{ingest, EventSource, IngestReport, IngestRequest};
use geps_cli::GatewayClient;
use geps_core::catalog::{JobRecord, JobRequest, JobState, Target};
use geps_core::event::synth_dataset;
use geps_core::{Calibration, Event, Schema};
use std::time::{Duration, Instant};

pub const JOB_TIMEOUT: Duration = Duration::from_secs(120);

pub async fn cluster(nodes: usize, progress_delay: Duration) -> LocalCluster {
    LocalCluster::start(ClusterConfig {
        nodes,
        progress_delay,
        ..Default::default()
    })
    .await
    .expect("cluster starts")
}

pub struct Loaded {
    pub report: IngestReport,
    pub events: Vec<Event>,
    pub schema: Schema,
}

pub async fn load(client: &GatewayClient, seed: u64, n_events: usize, fragments: usize, replication: usize) -> Loaded {
    let schema = Schema::default_physics();
    let report = ingest(
        client,
        &IngestRequest {
            source: EventSource::Synthetic {
                seed,
                n_events,
                payload_bytes: 0,
                schema: schema.clone(),
            },
            n_fragments: fragments,
            replication,
            nodes: vec![],
        },
    )
    .await
    .expect("ingest");
    Loaded {
        report,
        events: synth_dataset(seed, n_events, &schema, 0),
        schema,
    }
}

pub async fn submit(
    client: &GatewayClient,
    target: Target,
    filter: &str,
    dataset_id: u64,
    calibration: Option<Calibration>,
) -> u64 {
    client
        .submit(&JobRequest {
            target,
            filter: filter.to_owned(),
            dataset_id,
            calibration,
            submitted_by: "test".into(),
        })
        .await
        .expect("submit accepted")
}

pub async fn finish(client: &GatewayClient, job_id: u64) -> JobRecord {
    client
        .wait(job_id, Duration::from_millis(10), JOB_TIMEOUT)
        .await
        .expect("job readable")
}

pub async fn wait_state(client: &GatewayClient, job_id: u64, state: JobState, timeout: Duration) -> JobRecord {
    let deadline = Instant::now() + timeout;
    loop {
        let job = client.job(job_id).await.expect("job readable").job;
        if job.state == state || job.state.is_terminal() || Instant::now() >= deadline {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

/// Fragment indices held by no node other than `lost`.
pub fn only_on(placements: &[geps_core::catalog::PlacementRecord], lost: &str) -> Vec<u32> {
    let mut frags: Vec<u32> = placements.iter().map(|p| p.fragment_index).collect();
    frags.sort_unstable();
    frags.dedup();
    frags.retain(|&i| {
        placements
            .iter()
            .filter(|p| p.fragment_index == i)
            .all(|p| p.node == lost)
    });
    frags
}
