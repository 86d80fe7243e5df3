//! Drives one job from STAGING to a terminal state.

use super::plan::{choose_holder, group_by_node, plan, Assignment, JobPlan};
use super::Jse;
use crate::catalog::{Catalog, CatalogError, DatasetRecord, JobRecord, JobState, NodeCounters, Target};
use crate::event::{embedded_crc, fragment_crc, merge_fragments, FragmentFile};
use crate::util::write_atomic;
use crate::wire::{ClientError, ErrorCode, LocalState, NodeClient, RunDescriptor};
use futures::future::join_all;
use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Runs the job to completion; failures end in the ERROR state.
pub(super) async fn drive(jse: Arc<Jse>, job_id: u64) {
    if let Err(msg) = drive_inner(&jse, job_id).await {
        tracing::warn!(job_id, error = %msg, "job failed");
        match jse.catalog.get_job(job_id) {
            Ok(job) if !job.state.is_terminal() => {
                if let Err(e) = jse.catalog.fail_job(job_id, msg) {
                    tracing::error!(job_id, error = %e, "cannot record job failure");
                }
            }
            _ => {}
        }
    }
}

fn cat_err(e: CatalogError) -> String {
    e.to_string()
}

async fn drive_inner(jse: &Arc<Jse>, job_id: u64) -> Result<(), String> {
    let catalog = &jse.catalog;
    let mut job = catalog.get_job(job_id).map_err(cat_err)?;
    let dataset = catalog.dataset(job.spec.dataset_id).map_err(cat_err)?;

    if job.state == JobState::Staging {
        let placements = catalog.placements(dataset.dataset_id);
        let plan = plan(&job, &dataset, &placements, &jse.alive_nodes()).map_err(|e| e.to_string())?;
        stage(jse, &plan, &dataset).await?;
        job = catalog
            .transition(job_id, JobState::Running, None, None)
            .map_err(cat_err)?;
    }
    if !matches!(job.state, JobState::Running | JobState::Merging) {
        return Ok(());
    }

    let (results, counters) = execute(jse, &job, &dataset).await?;
    if job.state == JobState::Running {
        catalog
            .transition(job_id, JobState::Merging, None, None)
            .map_err(cat_err)?;
    }

    let merged = merge_fragments(results.into_values().collect()).map_err(|e| e.to_string())?;
    let passed: u64 = counters.values().map(|c| c.events_passed).sum();
    if merged.meta.event_count as u64 != passed {
        return Err(format!(
            "merged {} events but nodes reported {passed} passing",
            merged.meta.event_count
        ));
    }
    let bytes = merged.encode().map_err(|e| e.to_string())?;
    let rel = Catalog::result_rel_path(job_id);
    write_atomic(&catalog.resolve(&rel), &bytes).map_err(|e| format!("cannot write result: {e}"))?;
    for (node, c) in &counters {
        catalog.set_counters(job_id, node, *c).map_err(cat_err)?;
    }
    catalog
        .transition(job_id, JobState::Finished, None, Some(rel))
        .map_err(cat_err)?;
    tracing::info!(job_id, events = merged.meta.event_count, "job finished");
    Ok(())
}

fn node_client(jse: &Jse, node: &str) -> Result<NodeClient, String> {
    let rec = jse.catalog.get_node(node).map_err(cat_err)?;
    Ok(NodeClient::new(rec.address).with_timeout(jse.cfg.staleness))
}

/// Copies the fragments a single-target job lacks onto the target, checking
/// every transfer against the CRC recorded at ingest.
async fn stage(jse: &Arc<Jse>, plan: &JobPlan, dataset: &DatasetRecord) -> Result<(), String> {
    let moves = plan.staging_moves.iter().map(|m| async move {
        let idx = m.fragment_index;
        let expected = dataset.fragments[idx as usize].crc32;
        let dest = node_client(jse, &m.destination)?;
        let mut tried: BTreeSet<String> = BTreeSet::new();
        let mut last_err = String::new();
        for _ in 0..=jse.cfg.retry_limit {
            // fall back to other holders once the planned source misbehaves
            let placements = jse.catalog.placements(dataset.dataset_id);
            let mut alive = jse.alive_nodes();
            alive.remove(&m.destination);
            let candidates: BTreeSet<String> = alive.difference(&tried).cloned().collect();
            let source = if !tried.contains(&m.source) && alive.contains(&m.source) {
                m.source.clone()
            } else {
                match choose_holder(&placements, idx, &candidates) {
                    Some(s) => s.to_owned(),
                    None => tried.iter().next().cloned().unwrap_or_else(|| m.source.clone()),
                }
            };
            let src = node_client(jse, &source)?;
            let bytes = match src.fetch_fragment(dataset.dataset_id, idx).await {
                Ok((bytes, crc)) if crc == expected && fragment_crc(&bytes) == Some(expected) => bytes,
                Ok(_) => {
                    last_err = format!("copy of fragment {idx} from {source} failed its checksum");
                    tried.insert(source);
                    continue;
                }
                Err(e) => {
                    last_err = e.to_string();
                    tried.insert(source);
                    continue;
                }
            };
            match dest.stage(dataset.dataset_id, idx, &bytes).await {
                Ok(ack) if ack == expected => {
                    jse.catalog
                        .add_replica(dataset.dataset_id, idx, &m.destination)
                        .map_err(cat_err)?;
                    return Ok(());
                }
                Ok(ack) => last_err = format!("{} acknowledged fragment {idx} with crc {ack:#010x}", m.destination),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(format!(
            "staging fragment {idx} to {} failed after {} attempts: {last_err}",
            m.destination,
            jse.cfg.retry_limit + 1
        ))
    });
    let errors: Vec<String> = join_all(moves).await.into_iter().filter_map(Result::err).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors.join("; "))
    }
}

#[derive(Debug)]
enum TaskError {
    /// The node stopped answering; its fragments need another holder.
    Dead(String),
    /// The node answered with a failure that re-execution will not fix.
    Failed(String),
}

#[derive(Default)]
struct Progress {
    done: BTreeMap<String, NodeCounters>,
    inflight: BTreeMap<String, NodeCounters>,
}

impl Progress {
    fn total(&self, node: &str) -> NodeCounters {
        let mut c = self.done.get(node).copied().unwrap_or_default();
        if let Some(i) = self.inflight.get(node) {
            c += *i;
        }
        c
    }
}

type Results = BTreeMap<u32, FragmentFile>;

/// Dispatches, monitors and collects per-fragment results, reassigning the
/// fragments of dead nodes to other holders until every fragment has a
/// verified result.
async fn execute(
    jse: &Arc<Jse>,
    job: &JobRecord,
    dataset: &DatasetRecord,
) -> Result<(Results, BTreeMap<String, NodeCounters>), String> {
    let progress = Arc::new(Mutex::new(Progress::default()));
    let mut pending: Vec<u32> = dataset.fragments.iter().map(|f| f.fragment_index).collect();
    let mut results = Results::new();
    let mut dead: BTreeSet<String> = BTreeSet::new();
    let mut reassigned: BTreeMap<u32, u32> = BTreeMap::new();

    while !pending.is_empty() {
        let placements = jse.catalog.placements(dataset.dataset_id);
        let alive: BTreeSet<String> = jse.alive_nodes().difference(&dead).cloned().collect();
        let mut choices = Vec::new();
        let mut missing = Vec::new();
        for &idx in &pending {
            let on_target = match &job.spec.target {
                Target::Node(t) if alive.contains(t) => placements
                    .iter()
                    .any(|p| p.fragment_index == idx && &p.node == t)
                    .then(|| t.clone()),
                _ => None,
            };
            match on_target.or_else(|| choose_holder(&placements, idx, &alive).map(str::to_owned)) {
                Some(node) => choices.push((idx, node)),
                None => missing.push(idx),
            }
        }
        if !missing.is_empty() {
            missing.sort_unstable();
            return Err(format!(
                "unrecoverable fragments of dataset {}: {missing:?}",
                dataset.dataset_id
            ));
        }
        let assignments = group_by_node(choices);
        pending.clear();

        let tasks = assignments
            .iter()
            .map(|a| run_task(jse, job, dataset, a, progress.clone()));
        let outcomes = join_all(tasks).await;
        for (a, outcome) in assignments.into_iter().zip(outcomes) {
            match outcome {
                Ok((counters, frags)) => {
                    let mut p = progress.lock().unwrap();
                    p.inflight.remove(&a.node);
                    *p.done.entry(a.node.clone()).or_default() += counters;
                    for f in frags {
                        results.insert(f.meta.fragment_index, f);
                    }
                }
                Err(TaskError::Dead(reason)) => {
                    tracing::warn!(job_id = job.job_id, node = %a.node, %reason, "node declared dead");
                    progress.lock().unwrap().inflight.remove(&a.node);
                    dead.insert(a.node.clone());
                    for idx in a.fragment_indices {
                        let n = reassigned.entry(idx).or_default();
                        *n += 1;
                        if *n > jse.cfg.retry_limit {
                            return Err(format!(
                                "fragment {idx} of dataset {} exceeded {} reassignments",
                                dataset.dataset_id, jse.cfg.retry_limit
                            ));
                        }
                        pending.push(idx);
                    }
                }
                Err(TaskError::Failed(msg)) => return Err(format!("node {}: {msg}", a.node)),
            }
        }
        publish(jse, job.job_id, &progress);
    }

    let p = progress.lock().unwrap();
    let nodes: BTreeSet<&String> = p.done.keys().chain(dead.iter()).collect();
    let counters = nodes.into_iter().map(|n| (n.clone(), p.total(n))).collect();
    Ok((results, counters))
}

fn publish(jse: &Jse, job_id: u64, progress: &Mutex<Progress>) {
    let snapshot: Vec<(String, NodeCounters)> = {
        let p = progress.lock().unwrap();
        let nodes: BTreeSet<&String> = p.done.keys().chain(p.inflight.keys()).collect();
        nodes.into_iter().map(|n| (n.clone(), p.total(n))).collect()
    };
    for (node, c) in snapshot {
        if let Err(e) = jse.catalog.set_counters(job_id, &node, c) {
            tracing::debug!(job_id, error = %e, "counter update skipped");
        }
    }
}

fn refused(e: &ClientError) -> bool {
    matches!(e, ClientError::Connect { source, .. } if source.kind() == io::ErrorKind::ConnectionRefused)
}

/// Tracks how long a node has gone without a good answer.
struct Liveness {
    last_ok: Instant,
    window: Duration,
}

impl Liveness {
    fn judge(&self, e: ClientError) -> Result<(), TaskError> {
        if refused(&e) || self.last_ok.elapsed() > self.window {
            return Err(TaskError::Dead(e.to_string()));
        }
        Ok(())
    }
}

async fn run_task(
    jse: &Jse,
    job: &JobRecord,
    dataset: &DatasetRecord,
    assignment: &Assignment,
    progress: Arc<Mutex<Progress>>,
) -> Result<(NodeCounters, Vec<FragmentFile>), TaskError> {
    let node = assignment.node.as_str();
    let client = node_client(jse, node).map_err(TaskError::Dead)?;
    let desc = RunDescriptor {
        job_id: job.job_id,
        task: RunDescriptor::task_key(&assignment.fragment_indices),
        dataset_id: dataset.dataset_id,
        fragment_indices: assignment.fragment_indices.clone(),
        filter: job.spec.filter_text.clone(),
        calibration: job.spec.calibration.clone(),
    };
    let mut live = Liveness {
        last_ok: Instant::now(),
        window: jse.cfg.staleness,
    };
    let mut backoff = jse.cfg.backoff_initial;
    let next_backoff = |b: Duration| (b * 2).min(jse.cfg.backoff_max);

    let dispatch = |client: NodeClient, desc: RunDescriptor| async move {
        match client.run(&desc).await {
            Ok(_) => Ok(Ok(())),
            Err(ClientError::Remote {
                code: ErrorCode::MissingFragments,
                message,
                ..
            }) => Err(TaskError::Dead(message)),
            Err(ClientError::Remote { message, .. }) => Err(TaskError::Failed(message)),
            Err(e) => Ok(Err(e)),
        }
    };

    // dispatch, retried while the node is within its staleness window
    loop {
        match dispatch(client.clone(), desc.clone()).await? {
            Ok(()) => break,
            Err(e) => live.judge(e)?,
        }
        tokio::time::sleep(backoff).await;
        backoff = next_backoff(backoff);
    }
    live.last_ok = Instant::now();
    backoff = jse.cfg.backoff_initial;

    let final_state = loop {
        tokio::time::sleep(backoff).await;
        backoff = next_backoff(backoff);
        match client.status(job.job_id, &desc.task).await {
            Ok(s) => {
                live.last_ok = Instant::now();
                progress.lock().unwrap().inflight.insert(
                    node.to_owned(),
                    NodeCounters {
                        events_scanned: s.events_scanned,
                        events_passed: s.events_passed,
                    },
                );
                publish(jse, job.job_id, &progress);
                match s.state {
                    LocalState::Done => break s,
                    LocalState::Failed => {
                        return Err(TaskError::Failed(s.error.unwrap_or_else(|| "run failed".into())))
                    }
                    LocalState::Received | LocalState::Running => {}
                }
            }
            Err(ClientError::Remote {
                code: ErrorCode::NotFound,
                ..
            }) => {
                // the agent restarted and forgot the run; runs are idempotent
                live.last_ok = Instant::now();
                if let Err(e) = dispatch(client.clone(), desc.clone()).await? {
                    live.judge(e)?;
                }
            }
            Err(e @ ClientError::Remote { .. }) | Err(e @ ClientError::Unexpected { .. }) => {
                return Err(TaskError::Failed(e.to_string()))
            }
            Err(e) => live.judge(e)?,
        }
    };

    let mut frags = Vec::with_capacity(assignment.fragment_indices.len());
    for &idx in &assignment.fragment_indices {
        let source = &dataset.fragments[idx as usize];
        let mut attempt = 0;
        let frag = loop {
            attempt += 1;
            match client.fetch(job.job_id, &desc.task, idx).await {
                Ok((bytes, crc)) => {
                    let ok = (embedded_crc(&bytes) == Some(crc))
                        .then(|| FragmentFile::decode(&bytes).ok())
                        .flatten()
                        .filter(|f| {
                            f.meta.dataset_id == dataset.dataset_id
                                && f.meta.fragment_index == idx
                                && f.meta.first_event_ordinal == source.first_event_ordinal
                        });
                    if let Some(f) = ok {
                        break f;
                    }
                    if attempt > jse.cfg.retry_limit {
                        return Err(TaskError::Failed(format!(
                            "result of fragment {idx} failed verification {attempt} times"
                        )));
                    }
                }
                Err(e) if e.is_unreachable() => return Err(TaskError::Dead(e.to_string())),
                Err(e) => return Err(TaskError::Failed(e.to_string())),
            }
        };
        frags.push(frag);
    }
    Ok((
        NodeCounters {
            events_scanned: final_state.events_scanned,
            events_passed: final_state.events_passed,
        },
        frags,
    ))
}
