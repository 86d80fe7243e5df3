//! Randomized crash-restart trials of the catalog writer.
//!
//! A trial runs a random workload against a catalog configured to stop at a
//! random point, reopens the directory and checks that every acknowledged
//! mutation is present, that nothing unacknowledged beyond the interrupted
//! call appeared, and that every job transition in the surviving history is
//! an edge of the job state machine.

use geps_core::catalog::{
    Catalog, CatalogError, CatalogOptions, CrashPoint, FragmentSummary, JobRequest, JobState, NodeCounters,
    PlacementRecord, State, Target,
};
use geps_core::event::Schema;
use geps_core::wire::{NodeInfo, PROTOCOL_VERSION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

const NODES: [&str; 3] = ["gandalf", "hobbit", "frodo"];
const FILTERS: [&str; 4] = ["bx<10", "evr<10", "bx>2000&gotmean<100", "bx<100|levr>5"];

/// Edges of the job state machine, written out independently of the
/// catalog's own table.
pub fn legal(from: &str, to: &str) -> bool {
    matches!(
        (from, to),
        ("NEW", "STAGING")
            | ("STAGING", "RUNNING")
            | ("RUNNING", "MERGING")
            | ("MERGING", "FINISHED")
            | ("NEW" | "STAGING" | "RUNNING" | "MERGING", "ERROR")
    )
}

#[derive(Debug, Clone)]
pub struct TrialReport {
    pub crash: CrashPoint,
    pub acknowledged: usize,
    pub crashed: bool,
    pub interrupted_landed: bool,
    pub transitions_checked: usize,
}

fn info(name: &str) -> NodeInfo {
    NodeInfo {
        name: name.into(),
        protocol_version: PROTOCOL_VERSION,
        processors: 1,
        load_1m: 0.0,
        free_disk_bytes: 0,
        bandwidth_bytes_per_s: 0,
        fragments_held: vec![],
        uptime_s: 0,
    }
}

fn state_name(s: JobState) -> String {
    serde_json::to_value(s).unwrap().as_str().unwrap().to_owned()
}

/// One random catalog call. `Ok(true)` when the call was acknowledged with
/// a change, `Ok(false)` when it was refused or changed nothing.
fn random_op(cat: &Catalog, rng: &mut ChaCha8Rng) -> Result<bool, CatalogError> {
    let state = cat.state();
    let job_ids: Vec<u64> = state.jobs.keys().copied().collect();
    let ds_ids: Vec<u64> = state.datasets.keys().copied().collect();
    let nodes: Vec<String> = state.nodes.keys().cloned().collect();
    let pick = |rng: &mut ChaCha8Rng, v: &[u64]| v.get(rng.gen_range(0..v.len().max(1))).copied();
    let r = match rng.gen_range(0..10) {
        0 => cat
            .register_node(
                &format!("127.0.0.1:{}", rng.gen_range(1..9)),
                info(NODES[rng.gen_range(0..3)]),
            )
            .map(|_| ()),
        1 => {
            let n = rng.gen_range(1..4u32);
            let fragments = (0..n)
                .map(|i| FragmentSummary {
                    fragment_index: i,
                    event_count: 10,
                    first_event_ordinal: 10 * i as u64,
                    crc32: rng.gen(),
                })
                .collect();
            cat.create_dataset(None, Schema::default_physics(), fragments)
                .map(|_| ())
        }
        2 => {
            let (Some(ds), false) = (pick(rng, &ds_ids), nodes.is_empty()) else {
                return Ok(false);
            };
            let idx = rng.gen_range(0..4);
            let node = nodes[rng.gen_range(0..nodes.len())].clone();
            let rank = state.fragment_placements(ds, idx).count() as u32;
            return cat
                .record_placement(PlacementRecord {
                    dataset_id: ds,
                    fragment_index: idx,
                    node,
                    replica_rank: rank,
                })
                .or_else(refusal);
        }
        3 | 4 => {
            let ds = pick(rng, &ds_ids).unwrap_or(1);
            let target = if rng.gen_bool(0.7) || nodes.is_empty() {
                Target::All
            } else {
                Target::Node(nodes[rng.gen_range(0..nodes.len())].clone())
            };
            cat.submit_job(JobRequest {
                target,
                filter: FILTERS[rng.gen_range(0..FILTERS.len())].into(),
                dataset_id: ds,
                calibration: None,
                submitted_by: "crash".into(),
            })
            .map(|_| ())
        }
        5 => return cat.claim_new_jobs(rng.gen_range(1..3)).map(|v| !v.is_empty()),
        6 | 7 => {
            let Some(job) = pick(rng, &job_ids) else {
                return Ok(false);
            };
            let to = JobState::ALL[rng.gen_range(0..JobState::ALL.len())];
            let (error, path) = match to {
                JobState::Error => (Some("node lost".to_owned()), None),
                JobState::Finished => (None, Some(Catalog::result_rel_path(job))),
                _ => (None, None),
            };
            cat.transition(job, to, error, path).map(|_| ())
        }
        8 => {
            let Some(job) = pick(rng, &job_ids) else {
                return Ok(false);
            };
            cat.fail_job(job, "injected").map(|_| ())
        }
        _ => {
            let (Some(job), false) = (pick(rng, &job_ids), nodes.is_empty()) else {
                return Ok(false);
            };
            let scanned = rng.gen_range(0..1000);
            cat.set_counters(
                job,
                &nodes[rng.gen_range(0..nodes.len())],
                NodeCounters {
                    events_scanned: scanned,
                    events_passed: rng.gen_range(0..=scanned),
                },
            )
            .map(|_| ())
        }
    };
    r.map(|_| true).or_else(refusal)
}

fn refusal(e: CatalogError) -> Result<bool, CatalogError> {
    match e {
        CatalogError::Crashed | CatalogError::Io(_) | CatalogError::Poisoned => Err(e),
        _ => Ok(false),
    }
}

/// Job states at the snapshot followed by every journaled transition, each
/// checked against [`legal`]. Returns the number of transitions checked.
fn check_history(dir: &Path) -> Result<usize, String> {
    let mut states: BTreeMap<u64, String> = BTreeMap::new();
    let mut snapshot_seq = 0;
    if let Ok(bytes) = std::fs::read(dir.join("snapshot.json")) {
        let snap: Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
        snapshot_seq = snap["seq"].as_u64().ok_or("snapshot without seq")?;
        if let Some(jobs) = snap["state"]["jobs"].as_object() {
            for (id, job) in jobs {
                states.insert(id.parse().unwrap(), job["state"].as_str().unwrap().to_owned());
            }
        }
    }
    let mut checked = 0;
    let journal = geps_core::catalog::read_journal(dir).map_err(|e| e.to_string())?;
    for entry in journal.iter().filter(|e| e.seq > snapshot_seq) {
        let v = serde_json::to_value(entry).unwrap();
        match v["op"].as_str() {
            Some("submit_job") => {
                let id = v["job"]["job_id"].as_u64().unwrap();
                if states.insert(id, "NEW".into()).is_some() {
                    return Err(format!("job {id} submitted twice"));
                }
            }
            Some("transition") => {
                let id = v["job_id"].as_u64().unwrap();
                let to = v["to"].as_str().unwrap().to_owned();
                let from = states.get(&id).ok_or(format!("transition of unknown job {id}"))?;
                if !legal(from, &to) {
                    return Err(format!(
                        "job {id}: illegal transition {from} -> {to} at seq {}",
                        entry.seq
                    ));
                }
                states.insert(id, to);
                checked += 1;
            }
            _ => {}
        }
    }
    Ok(checked)
}

pub fn run_trial(seed: u64, dir: &Path) -> Result<TrialReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = rng.gen_range(5..80);
    let crash = match rng.gen_range(0..4) {
        0 => CrashPoint::SnapshotBeforeRename,
        1 => CrashPoint::SnapshotBeforeTruncate,
        _ => CrashPoint::Append {
            seq: rng.gen_range(1..ops as u64 + 5),
            keep: rng.gen_range(0..400),
        },
    };
    let opts = CatalogOptions {
        snapshot_every: rng.gen_range(3..40),
        sync: false,
        crash: Some(crash),
        ..Default::default()
    };

    let mut acknowledged = 0;
    let mut crashed = false;
    let mut last: State;
    let mut pending: Option<State>;
    {
        let cat = Catalog::open_with(dir, opts.clone()).map_err(|e| e.to_string())?;
        last = cat.state();
        pending = None;
        for _ in 0..ops {
            match random_op(&cat, &mut rng) {
                Ok(changed) => {
                    let now = cat.state();
                    if !changed && now != last {
                        return Err("a refused call changed the state".into());
                    }
                    if changed {
                        acknowledged += 1;
                    }
                    last = now;
                }
                Err(CatalogError::Crashed) => {
                    // the in-memory state may hold the interrupted call when
                    // it was written whole
                    pending = Some(cat.state());
                    crashed = true;
                    break;
                }
                Err(e) => return Err(format!("unexpected failure: {e}")),
            }
        }
    }

    let reopened = Catalog::open_with(dir, CatalogOptions { crash: None, ..opts }).map_err(|e| e.to_string())?;
    let got = reopened.state();
    let interrupted_landed = if got == last {
        false
    } else if crashed && pending.as_ref() == Some(&got) && got != last {
        true
    } else {
        // with an append crash the interrupted mutation never reaches memory,
        // so the only other allowed outcome is `last` plus that one record
        let journal = geps_core::catalog::read_journal(dir).map_err(|e| e.to_string())?;
        let mut replay = last.clone();
        match journal.last() {
            Some(entry) if entry.seq == reopened.seq() && reopened.seq() > 0 => {
                replay.check(&entry.mutation).map_err(|e| e.to_string())?;
                replay.apply(entry.mutation.clone());
            }
            _ => {}
        }
        if replay != got {
            return Err(format!(
                "recovered state differs from the acknowledged state ({} acknowledged calls, crash {crash:?})",
                acknowledged
            ));
        }
        true
    };
    let transitions_checked = check_history(dir)?;

    // the reopened catalog keeps working and continues the id sequence
    let next = got.next_job_id();
    if let Some(&ds) = got.datasets.keys().next() {
        let id = reopened
            .submit_job(JobRequest {
                target: Target::All,
                filter: "bx<10".into(),
                dataset_id: ds,
                calibration: None,
                submitted_by: String::new(),
            })
            .map_err(|e| e.to_string())?;
        if id != next {
            return Err(format!("next job id {id}, expected {next}"));
        }
    }
    for job in got.jobs.values() {
        let s = state_name(job.state);
        if s == "FINISHED" && (job.result_path.is_none() || job.error.is_some()) {
            return Err(format!("job {} finished without a result path", job.job_id));
        }
        if s == "ERROR" && job.error.as_deref().is_none_or(str::is_empty) {
            return Err(format!("job {} in ERROR without a message", job.job_id));
        }
    }
    Ok(TrialReport {
        crash,
        acknowledged,
        crashed,
        interrupted_landed,
        transitions_checked,
    })
}
