//! Single-node versus all-nodes timing sweep.
//!
//! For every dataset size and repetition the harness ingests a fresh synthetic
//! dataset (seed plus repetition) with one replica per fragment, then times
//! (a) a job targeted at the first node, which must first pull the fragments
//! it lacks, and (b) a job over all nodes that runs where the data is. Both arms must produce identical bytes.

use crate::client::GatewayClient;
use crate::cluster::{ClusterConfig, LocalCluster};
use crate::error::CliError;
use crate::ingest::{ingest, EventSource, IngestRequest};
use geps_core::catalog::{JobRequest, JobState, Target};
use geps_core::Schema;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

pub const BENCH_FILTER: &str = "bx>50000&gotmean<6000";
pub const CSV_HEADER: &str = "n_events,t_single_s,t_parallel_s,speedup";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub event_counts: Vec<usize>,
    pub payload_bytes: usize,
    pub n_nodes: usize,
    /// Per-node link rate; 0 disables pacing.
    pub throttle_bytes_per_s: u64,
    pub repetitions: usize,
    pub output: Option<PathBuf>,
    pub seed: u64,
    /// Fragments per dataset, capped at the dataset size.
    pub fragments: usize,
    /// Give up on a single job after this long.
    pub job_timeout: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            event_counts: vec![128, 256, 512, 1024, 2048, 4096, 8192],
            payload_bytes: 4096,
            n_nodes: 2,
            throttle_bytes_per_s: 5_000_000,
            repetitions: 3,
            output: None,
            seed: 1,
            fragments: 4,
            job_timeout: Duration::from_secs(600),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.repetitions == 0 {
            return Err(CliError::Usage("repetitions must be at least 1".into()));
        }
        if self.event_counts.is_empty() || self.event_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Usage("event counts must be non-empty and ascending".into()));
        }
        if self.event_counts[0] == 0 {
            return Err(CliError::Usage("event counts must be positive".into()));
        }
        if self.n_nodes < 2 {
            return Err(CliError::Usage("the comparison needs at least 2 nodes".into()));
        }
        if self.fragments == 0 {
            return Err(CliError::Usage("fragments must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_events: usize,
    pub t_single_s: f64,
    pub t_parallel_s: f64,
    pub speedup: f64,
}

/// Smallest size at which the parallel arm beat the single-node arm.
pub fn watershed(rows: &[BenchRow]) -> Option<&BenchRow> {
    rows.iter().find(|r| r.t_parallel_s < r.t_single_s)
}

pub fn summary(rows: &[BenchRow]) -> String {
    match watershed(rows) {
        Some(r) => format!(
            "watershed: n={} (single {:.3}s, parallel {:.3}s, speedup {:.2})",
            r.n_events, r.t_single_s, r.t_parallel_s, r.speedup
        ),
        None => "watershed: none in range".to_owned(),
    }
}

pub fn write_csv(mut out: impl Write, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            r.n_events, r.t_single_s, r.t_parallel_s, r.speedup
        )?;
    }
    Ok(())
}

async fn timed_job(
    client: &GatewayClient,
    target: Target,
    dataset_id: u64,
    timeout: Duration,
) -> Result<(Duration, Vec<u8>), CliError> {
    let describe = format!("dataset {dataset_id}, target {target}");
    let start = Instant::now();
    let job_id = client
        .submit(&JobRequest {
            target,
            filter: BENCH_FILTER.into(),
            dataset_id,
            calibration: None,
            submitted_by: "bench".into(),
        })
        .await?;
    let job = client.wait(job_id, Duration::from_millis(2), timeout).await?;
    let elapsed = start.elapsed();
    match job.state {
        JobState::Finished => Ok((elapsed, client.result(job_id).await?)),
        JobState::Error => Err(CliError::JobFailed(format!(
            "bench job {job_id} ({describe}) failed: {}",
            job.error.unwrap_or_default()
        ))),
        other => Err(CliError::JobFailed(format!(
            "bench job {job_id} ({describe}) still {other} after {timeout:?}"
        ))),
    }
}

/// Runs the sweep on a local cluster started for the purpose.
pub async fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>, CliError> {
    cfg.validate()?;
    let cluster = LocalCluster::start(ClusterConfig {
        nodes: cfg.n_nodes,
        throttle_bytes_per_s: cfg.throttle_bytes_per_s,
        // tight status polling keeps timer granularity out of the small sizes
        backoff_initial: Duration::from_millis(1),
        backoff_max: Duration::from_millis(4),
        ..Default::default()
    })
    .await?;
    run_on(&cluster, cfg).await
}

pub async fn run_on(cluster: &LocalCluster, cfg: &BenchConfig) -> Result<Vec<BenchRow>, CliError> {
    cfg.validate()?;
    let client = cluster.client();
    let single = Target::Node(cluster.node_names()[0].clone());
    let mut rows = Vec::with_capacity(cfg.event_counts.len());
    for &n in &cfg.event_counts {
        let (mut t_single, mut t_parallel) = (0.0, 0.0);
        for rep in 0..cfg.repetitions {
            // a fresh dataset each time, so the single arm always pays for
            // staging and the result split between nodes is averaged over seeds
            let report = ingest(
                &client,
                &IngestRequest {
                    source: EventSource::Synthetic {
                        seed: cfg.seed.wrapping_add(rep as u64),
                        n_events: n,
                        payload_bytes: cfg.payload_bytes,
                        schema: Schema::default_physics(),
                    },
                    n_fragments: cfg.fragments.min(n),
                    replication: 1,
                    nodes: vec![],
                },
            )
            .await?;
            let (ts, bytes_single) = timed_job(&client, single.clone(), report.dataset_id, cfg.job_timeout).await?;
            let (tp, bytes_parallel) = timed_job(&client, Target::All, report.dataset_id, cfg.job_timeout).await?;
            if bytes_single != bytes_parallel {
                return Err(CliError::JobFailed(format!(
                    "single-node and parallel results differ for n={n}"
                )));
            }
            t_single += ts.as_secs_f64();
            t_parallel += tp.as_secs_f64();
        }
        let reps = cfg.repetitions as f64;
        let (t_single_s, t_parallel_s) = (t_single / reps, t_parallel / reps);
        let row = BenchRow {
            n_events: n,
            t_single_s,
            t_parallel_s,
            speedup: t_single_s / t_parallel_s,
        };
        tracing::info!(?row, "bench point");
        rows.push(row);
    }
    Ok(rows)
}
