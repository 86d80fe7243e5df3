//! Durable metadata catalog: job records, node registry, datasets and
//! fragment placements.
//!
//! Every mutation is validated, appended to `journal.log` and only then
//! applied and acknowledged. The journal is folded into `snapshot.json`
//! every [`CatalogOptions::snapshot_every`] records. On open the snapshot is
//! loaded and the journal replayed; replay stops at the first torn, corrupt
//! or invalid record and the file is truncated there.

mod journal;
mod state;
mod types;

pub use journal::JournalEntry;
pub use state::{Mutation, State, SubmitError};
pub use types::*;

use crate::filter::canonical_filter;
use crate::util::{now_ms, write_atomic};
use crate::wire::NodeInfo;
use serde::{Deserialize, Serialize};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

pub const JOURNAL_FILE: &str = "journal.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const RESULTS_DIR: &str = "results";

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("snapshot is unreadable: {0}")]
    CorruptSnapshot(String),
    #[error("submission rejected: {0}")]
    Rejected(#[from] SubmitError),
    #[error("job {job_id}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition { job_id: u64, from: JobState, to: JobState },
    #[error("job {job_id}: transition to {to:?} requires {what}")]
    MissingDetail {
        job_id: u64,
        to: JobState,
        what: &'static str,
    },
    #[error("job {0} not found")]
    JobNotFound(u64),
    #[error("node {0:?} not found")]
    NodeNotFound(String),
    #[error("dataset {0} not found")]
    DatasetNotFound(u64),
    #[error("invalid mutation: {0}")]
    InvalidMutation(String),
    #[error("catalog writer crashed (injected fault)")]
    Crashed,
    #[error("catalog is unusable after a failed write; reopen it")]
    Poisoned,
}

/// Where to simulate a crash of the writer. Testing hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Write only the first `keep` bytes of record `seq`, then stop. A `keep`
    /// at least the record length writes it whole but never acknowledges it.
    Append { seq: u64, keep: usize },
    /// Stop after writing the snapshot temp file, before the rename.
    SnapshotBeforeRename,
    /// Stop after the snapshot rename, before the journal is truncated.
    SnapshotBeforeTruncate,
}

#[derive(Debug, Clone)]
pub struct CatalogOptions {
    /// Nodes not heard from within this window are reported dead.
    pub staleness: Duration,
    /// Journal records between snapshots.
    pub snapshot_every: u64,
    /// fsync journal appends and snapshots.
    pub sync: bool,
    pub crash: Option<CrashPoint>,
}

impl Default for CatalogOptions {
    fn default() -> Self {
        Self {
            staleness: Duration::from_secs(10),
            snapshot_every: 1024,
            sync: true,
            crash: None,
        }
    }
}

/// What `open` found on disk.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub snapshot_seq: u64,
    pub records_replayed: u64,
    /// Journal byte offset where replay stopped, if it did not reach the end.
    pub truncated_at: Option<u64>,
    pub reason: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: State,
}

struct Inner {
    state: State,
    journal: File,
    seq: u64,
    snapshot_seq: u64,
    poisoned: bool,
}

pub struct Catalog {
    dir: PathBuf,
    opts: CatalogOptions,
    recovery: RecoveryReport,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for Catalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Catalog")
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

impl Catalog {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::open_with(dir, CatalogOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, opts: CatalogOptions) -> Result<Self, CatalogError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(RESULTS_DIR))?;
        let _ = fs::remove_file(dir.join(format!(".{SNAPSHOT_FILE}.tmp")));

        let mut report = RecoveryReport::default();
        let (mut state, snapshot_seq) = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => {
                let snap: Snapshot =
                    serde_json::from_slice(&bytes).map_err(|e| CatalogError::CorruptSnapshot(e.to_string()))?;
                (snap.state, snap.seq)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (State::default(), 0),
            Err(e) => return Err(e.into()),
        };
        report.snapshot_seq = snapshot_seq;

        let journal_path = dir.join(JOURNAL_FILE);
        let bytes = match fs::read(&journal_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let scan = journal::scan(&bytes);
        let mut seq = snapshot_seq;
        let mut stop = scan.stopped;
        for (offset, entry) in scan.records {
            if entry.seq <= snapshot_seq {
                // already folded into the snapshot
                continue;
            }
            if entry.seq != seq + 1 {
                stop = Some((offset, format!("sequence gap: {} after {}", entry.seq, seq)));
                break;
            }
            if let Err(e) = state.check(&entry.mutation) {
                stop = Some((offset, format!("record {} rejected on replay: {e}", entry.seq)));
                break;
            }
            state.apply(entry.mutation);
            seq = entry.seq;
            report.records_replayed += 1;
        }

        let journal = OpenOptions::new().create(true).append(true).open(&journal_path)?;
        if let Some((offset, reason)) = stop {
            tracing::warn!(offset, %reason, "catalog journal truncated during recovery");
            journal.set_len(offset)?;
            journal.sync_all()?;
            report.truncated_at = Some(offset);
            report.reason = Some(reason);
        }

        Ok(Self {
            dir,
            opts,
            recovery: report,
            inner: Mutex::new(Inner {
                state,
                journal,
                seq,
                snapshot_seq,
                poisoned: false,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn options(&self) -> &CatalogOptions {
        &self.opts
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    /// Catalog-relative path of a job's merged result.
    pub fn result_rel_path(job_id: u64) -> String {
        format!("{RESULTS_DIR}/job-{job_id}.geb")
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Sequence number of the last durable mutation.
    pub fn seq(&self) -> u64 {
        self.lock().seq
    }

    /// Copy of the full in-memory state, node liveness not evaluated.
    pub fn state(&self) -> State {
        self.lock().state.clone()
    }

    fn commit(&self, inner: &mut Inner, mutation: Mutation) -> Result<(), CatalogError> {
        if inner.poisoned {
            return Err(CatalogError::Poisoned);
        }
        inner.state.check(&mutation)?;
        let entry = JournalEntry {
            seq: inner.seq + 1,
            mutation,
        };
        let record = journal::encode_record(&entry);
        if let Some(CrashPoint::Append { seq, keep }) = self.opts.crash {
            if seq == entry.seq {
                inner.poisoned = true;
                inner.journal.write_all(&record[..keep.min(record.len())])?;
                return Err(CatalogError::Crashed);
            }
        }
        let written = inner.journal.write_all(&record).and_then(|_| {
            if self.opts.sync {
                inner.journal.sync_data()
            } else {
                Ok(())
            }
        });
        if let Err(e) = written {
            // the file may hold a partial record; recovery will cut it off
            inner.poisoned = true;
            return Err(e.into());
        }
        inner.seq = entry.seq;
        inner.state.apply(entry.mutation);
        if inner.seq - inner.snapshot_seq >= self.opts.snapshot_every.max(1) {
            self.snapshot(inner)?;
        }
        Ok(())
    }

    fn snapshot(&self, inner: &mut Inner) -> Result<(), CatalogError> {
        let snap = Snapshot {
            seq: inner.seq,
            state: inner.state.clone(),
        };
        let bytes = serde_json::to_vec(&snap).map_err(io::Error::other)?;
        let path = self.dir.join(SNAPSHOT_FILE);
        if self.opts.crash == Some(CrashPoint::SnapshotBeforeRename) {
            inner.poisoned = true;
            fs::write(self.dir.join(format!(".{SNAPSHOT_FILE}.tmp")), &bytes)?;
            return Err(CatalogError::Crashed);
        }
        let result = write_atomic(&path, &bytes).and_then(|_| {
            if self.opts.sync {
                File::open(&self.dir)?.sync_all()?;
            }
            Ok(())
        });
        if let Err(e) = result {
            inner.poisoned = true;
            return Err(e.into());
        }
        if self.opts.crash == Some(CrashPoint::SnapshotBeforeTruncate) {
            inner.poisoned = true;
            return Err(CatalogError::Crashed);
        }
        inner.snapshot_seq = inner.seq;
        if let Err(e) = inner.journal.set_len(0) {
            inner.poisoned = true;
            return Err(e.into());
        }
        Ok(())
    }

    /// Forces a snapshot now.
    pub fn compact(&self) -> Result<(), CatalogError> {
        let mut inner = self.lock();
        if inner.poisoned {
            return Err(CatalogError::Poisoned);
        }
        self.snapshot(&mut inner)
    }

    // ---- datasets and placements ----

    pub fn next_dataset_id(&self) -> u64 {
        self.lock().state.next_dataset_id()
    }

    /// Registers a dataset. Ids are dense; a requested id other than the next
    /// free one is refused, which lets a client encode fragments before the
    /// record exists.
    pub fn create_dataset(
        &self,
        dataset_id: Option<u64>,
        schema: crate::event::Schema,
        fragments: Vec<FragmentSummary>,
    ) -> Result<DatasetRecord, CatalogError> {
        let mut inner = self.lock();
        let dataset = DatasetRecord {
            dataset_id: dataset_id.unwrap_or_else(|| inner.state.next_dataset_id()),
            schema,
            event_count: fragments.iter().map(|f| f.event_count as u64).sum(),
            fragments,
            created_at_ms: now_ms(),
        };
        self.commit(
            &mut inner,
            Mutation::CreateDataset {
                dataset: dataset.clone(),
            },
        )?;
        Ok(dataset)
    }

    pub fn dataset(&self, dataset_id: u64) -> Result<DatasetRecord, CatalogError> {
        self.lock()
            .state
            .datasets
            .get(&dataset_id)
            .cloned()
            .ok_or(CatalogError::DatasetNotFound(dataset_id))
    }

    pub fn list_datasets(&self) -> Vec<DatasetRecord> {
        self.lock().state.datasets.values().cloned().collect()
    }

    /// Records a placement; returns false if that exact placement exists.
    pub fn record_placement(&self, placement: PlacementRecord) -> Result<bool, CatalogError> {
        let mut inner = self.lock();
        if let Some(existing) = inner
            .state
            .fragment_placements(placement.dataset_id, placement.fragment_index)
            .find(|p| p.node == placement.node)
        {
            if existing.replica_rank == placement.replica_rank {
                return Ok(false);
            }
            return Err(CatalogError::InvalidMutation(format!(
                "{} already holds fragment {}/{} at rank {}",
                placement.node, placement.dataset_id, placement.fragment_index, existing.replica_rank
            )));
        }
        self.commit(&mut inner, Mutation::Placement { placement })?;
        Ok(true)
    }

    /// Records that `node` now holds a copy of a fragment, ranked after the
    /// existing replicas. Returns the placement, new or existing.
    pub fn add_replica(
        &self,
        dataset_id: u64,
        fragment_index: u32,
        node: &str,
    ) -> Result<PlacementRecord, CatalogError> {
        let mut inner = self.lock();
        let mut next_rank = 0;
        for p in inner.state.fragment_placements(dataset_id, fragment_index) {
            if p.node == node {
                return Ok(p.clone());
            }
            next_rank = next_rank.max(p.replica_rank + 1);
        }
        let placement = PlacementRecord {
            dataset_id,
            fragment_index,
            node: node.to_owned(),
            replica_rank: next_rank,
        };
        self.commit(
            &mut inner,
            Mutation::Placement {
                placement: placement.clone(),
            },
        )?;
        Ok(placement)
    }

    /// Placements of a dataset, sorted by (fragment_index, node); empty for
    /// unknown datasets.
    pub fn placements(&self, dataset_id: u64) -> Vec<PlacementRecord> {
        self.lock()
            .state
            .placements
            .iter()
            .filter(|p| p.dataset_id == dataset_id)
            .cloned()
            .collect()
    }

    // ---- jobs ----

    /// Validates and stores a new job in state NEW; returns its id.
    pub fn submit_job(&self, req: JobRequest) -> Result<u64, CatalogError> {
        let mut inner = self.lock();
        let ds = inner
            .state
            .datasets
            .get(&req.dataset_id)
            .ok_or(SubmitError::UnknownDataset(req.dataset_id))?;
        let (_, filter_text) = canonical_filter(&req.filter, &ds.schema).map_err(SubmitError::from)?;
        let job_id = inner.state.next_job_id();
        let at = now_ms();
        let job = JobRecord {
            job_id,
            spec: JobSpec {
                target: req.target,
                filter_text,
                dataset_id: req.dataset_id,
                calibration: req.calibration,
                submitted_by: req.submitted_by,
                submitted_at_ms: at,
            },
            state: JobState::New,
            error: None,
            result_path: None,
            counters: Default::default(),
            history: vec![StateEntry {
                state: JobState::New,
                at_ms: at,
            }],
        };
        self.commit(&mut inner, Mutation::SubmitJob { job })?;
        Ok(job_id)
    }

    pub fn get_job(&self, job_id: u64) -> Result<JobRecord, CatalogError> {
        self.lock()
            .state
            .jobs
            .get(&job_id)
            .cloned()
            .ok_or(CatalogError::JobNotFound(job_id))
    }

    /// All jobs, ascending by id.
    pub fn list_jobs(&self) -> Vec<JobRecord> {
        self.lock().state.jobs.values().cloned().collect()
    }

    pub fn jobs_in(&self, states: &[JobState]) -> Vec<JobRecord> {
        self.lock()
            .state
            .jobs
            .values()
            .filter(|j| states.contains(&j.state))
            .cloned()
            .collect()
    }

    pub fn transition(
        &self,
        job_id: u64,
        to: JobState,
        error: Option<String>,
        result_path: Option<String>,
    ) -> Result<JobRecord, CatalogError> {
        let mut inner = self.lock();
        self.commit(
            &mut inner,
            Mutation::Transition {
                job_id,
                to,
                at_ms: now_ms(),
                error,
                result_path,
            },
        )?;
        Ok(inner.state.jobs[&job_id].clone())
    }

    pub fn fail_job(&self, job_id: u64, message: impl Into<String>) -> Result<JobRecord, CatalogError> {
        self.transition(job_id, JobState::Error, Some(message.into()), None)
    }

    /// Replaces the counters reported for `node`; unchanged values are not
    /// journaled.
    pub fn set_counters(&self, job_id: u64, node: &str, counters: NodeCounters) -> Result<(), CatalogError> {
        let mut inner = self.lock();
        let job = inner.state.jobs.get(&job_id).ok_or(CatalogError::JobNotFound(job_id))?;
        if job.counters.get(node) == Some(&counters) {
            return Ok(());
        }
        self.commit(
            &mut inner,
            Mutation::Counters {
                job_id,
                node: node.to_owned(),
                counters,
            },
        )
    }

    /// Moves up to `limit` of the oldest NEW jobs to STAGING and returns them.
    pub fn claim_new_jobs(&self, limit: usize) -> Result<Vec<JobRecord>, CatalogError> {
        let mut inner = self.lock();
        let ids: Vec<u64> = inner
            .state
            .jobs
            .values()
            .filter(|j| j.state == JobState::New)
            .take(limit)
            .map(|j| j.job_id)
            .collect();
        let mut claimed = Vec::with_capacity(ids.len());
        for job_id in ids {
            self.commit(
                &mut inner,
                Mutation::Transition {
                    job_id,
                    to: JobState::Staging,
                    at_ms: now_ms(),
                    error: None,
                    result_path: None,
                },
            )?;
            claimed.push(inner.state.jobs[&job_id].clone());
        }
        Ok(claimed)
    }

    // ---- nodes ----

    /// Upserts a node by name and refreshes its last-seen time.
    pub fn register_node(&self, address: &str, info: NodeInfo) -> Result<NodeRecord, CatalogError> {
        let mut inner = self.lock();
        let name = info.name.clone();
        self.commit(
            &mut inner,
            Mutation::RegisterNode {
                address: address.to_owned(),
                info,
                at_ms: now_ms(),
            },
        )?;
        Ok(self.with_liveness(inner.state.nodes[&name].clone()))
    }

    /// Records a fresh resource snapshot for a registered node. Heartbeats
    /// are kept in memory only; a restarted catalog waits for the next one.
    pub fn heartbeat(&self, name: &str, info: NodeInfo) -> Result<(), CatalogError> {
        let mut inner = self.lock();
        let node = inner
            .state
            .nodes
            .get_mut(name)
            .ok_or_else(|| CatalogError::NodeNotFound(name.to_owned()))?;
        node.last_seen_ms = now_ms();
        node.last_info = info;
        Ok(())
    }

    fn with_liveness(&self, mut node: NodeRecord) -> NodeRecord {
        let window = self.opts.staleness.as_millis() as u64;
        node.alive = now_ms().saturating_sub(node.last_seen_ms) <= window;
        node
    }

    pub fn list_nodes(&self) -> Vec<NodeRecord> {
        let nodes: Vec<NodeRecord> = self.lock().state.nodes.values().cloned().collect();
        nodes.into_iter().map(|n| self.with_liveness(n)).collect()
    }

    pub fn get_node(&self, name: &str) -> Result<NodeRecord, CatalogError> {
        let node = self
            .lock()
            .state
            .nodes
            .get(name)
            .cloned()
            .ok_or_else(|| CatalogError::NodeNotFound(name.to_owned()))?;
        Ok(self.with_liveness(node))
    }
}

/// Reads every intact record of a catalog's journal without opening it.
pub fn read_journal(dir: impl AsRef<Path>) -> io::Result<Vec<JournalEntry>> {
    let bytes = match fs::read(dir.as_ref().join(JOURNAL_FILE)) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(journal::scan(&bytes).records.into_iter().map(|(_, e)| e).collect())
}
