use super::types::*;
use super::CatalogError;
use crate::filter::{canonical_filter, FilterError};
use crate::wire::NodeInfo;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One journaled change. Every mutation is checked against the current state
/// before it is written, and again when it is replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    CreateDataset {
        dataset: DatasetRecord,
    },
    SubmitJob {
        job: JobRecord,
    },
    Transition {
        job_id: u64,
        to: JobState,
        at_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result_path: Option<String>,
    },
    Counters {
        job_id: u64,
        node: String,
        counters: NodeCounters,
    },
    RegisterNode {
        address: String,
        info: NodeInfo,
        at_ms: u64,
    },
    Placement {
        placement: PlacementRecord,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub jobs: BTreeMap<u64, JobRecord>,
    pub nodes: BTreeMap<String, NodeRecord>,
    pub datasets: BTreeMap<u64, DatasetRecord>,
    /// Sorted by (dataset_id, fragment_index, node).
    pub placements: Vec<PlacementRecord>,
}

impl State {
    pub fn next_job_id(&self) -> u64 {
        self.jobs.keys().next_back().map_or(1, |k| k + 1)
    }

    pub fn next_dataset_id(&self) -> u64 {
        self.datasets.keys().next_back().map_or(1, |k| k + 1)
    }

    fn placement_pos(&self, dataset_id: u64, fragment_index: u32, node: &str) -> Result<usize, usize> {
        self.placements.binary_search_by(|p| {
            (p.dataset_id, p.fragment_index, p.node.as_str()).cmp(&(dataset_id, fragment_index, node))
        })
    }

    pub fn has_placement(&self, dataset_id: u64, fragment_index: u32, node: &str) -> bool {
        self.placement_pos(dataset_id, fragment_index, node).is_ok()
    }

    pub fn fragment_placements(&self, dataset_id: u64, fragment_index: u32) -> impl Iterator<Item = &PlacementRecord> {
        self.placements
            .iter()
            .filter(move |p| p.dataset_id == dataset_id && p.fragment_index == fragment_index)
    }

    fn job(&self, job_id: u64) -> Result<&JobRecord, CatalogError> {
        self.jobs.get(&job_id).ok_or(CatalogError::JobNotFound(job_id))
    }

    /// Rejects mutations that would break a catalog invariant.
    pub fn check(&self, m: &Mutation) -> Result<(), CatalogError> {
        match m {
            Mutation::CreateDataset { dataset } => {
                if dataset.dataset_id != self.next_dataset_id() {
                    return Err(invalid(format!(
                        "dataset id {} out of sequence, expected {}",
                        dataset.dataset_id,
                        self.next_dataset_id()
                    )));
                }
                if dataset.fragments.is_empty() {
                    return Err(invalid("dataset has no fragments"));
                }
                let mut expected_ordinal = 0u64;
                for (i, f) in dataset.fragments.iter().enumerate() {
                    if f.fragment_index as usize != i || f.first_event_ordinal != expected_ordinal {
                        return Err(invalid("dataset fragments are not contiguous"));
                    }
                    expected_ordinal += f.event_count as u64;
                }
                if expected_ordinal != dataset.event_count {
                    return Err(invalid("dataset event count disagrees with its fragments"));
                }
                Ok(())
            }
            Mutation::SubmitJob { job } => {
                if job.job_id != self.next_job_id() {
                    return Err(invalid(format!(
                        "job id {} out of sequence, expected {}",
                        job.job_id,
                        self.next_job_id()
                    )));
                }
                if job.state != JobState::New || job.error.is_some() || job.result_path.is_some() {
                    return Err(invalid("new jobs start in NEW with no error or result"));
                }
                check_spec(self, &job.spec).map_err(CatalogError::Rejected)
            }
            Mutation::Transition {
                job_id,
                to,
                error,
                result_path,
                ..
            } => {
                let job = self.job(*job_id)?;
                if !job.state.can_transition_to(*to) {
                    return Err(CatalogError::IllegalTransition {
                        job_id: *job_id,
                        from: job.state,
                        to: *to,
                    });
                }
                let missing = match to {
                    JobState::Finished if result_path.as_deref().is_none_or(str::is_empty) => Some("result path"),
                    JobState::Finished if error.is_some() => Some("empty error"),
                    JobState::Error if error.as_deref().is_none_or(str::is_empty) => Some("error message"),
                    _ => None,
                };
                match missing {
                    Some(what) => Err(CatalogError::MissingDetail {
                        job_id: *job_id,
                        to: *to,
                        what,
                    }),
                    None => Ok(()),
                }
            }
            Mutation::Counters { job_id, node, .. } => {
                let job = self.job(*job_id)?;
                if job.state.is_terminal() {
                    return Err(invalid(format!("job {job_id} is {}", job.state)));
                }
                if node.is_empty() {
                    return Err(invalid("counter node name is empty"));
                }
                Ok(())
            }
            Mutation::RegisterNode { address, info, .. } => {
                if info.name.is_empty() || address.is_empty() {
                    return Err(invalid("node name and address are required"));
                }
                Ok(())
            }
            Mutation::Placement { placement: p } => {
                let ds = self
                    .datasets
                    .get(&p.dataset_id)
                    .ok_or(CatalogError::DatasetNotFound(p.dataset_id))?;
                if p.fragment_index as usize >= ds.fragments.len() {
                    return Err(invalid(format!(
                        "dataset {} has no fragment {}",
                        p.dataset_id, p.fragment_index
                    )));
                }
                if !self.nodes.contains_key(&p.node) {
                    return Err(CatalogError::NodeNotFound(p.node.clone()));
                }
                if self.has_placement(p.dataset_id, p.fragment_index, &p.node) {
                    return Err(invalid("placement already recorded"));
                }
                if self
                    .fragment_placements(p.dataset_id, p.fragment_index)
                    .any(|q| q.replica_rank == p.replica_rank)
                {
                    return Err(invalid(format!(
                        "fragment {}/{} already has a rank-{} replica",
                        p.dataset_id, p.fragment_index, p.replica_rank
                    )));
                }
                Ok(())
            }
        }
    }

    /// Applies a mutation that passed [`State::check`].
    pub fn apply(&mut self, m: Mutation) {
        match m {
            Mutation::CreateDataset { dataset } => {
                self.datasets.insert(dataset.dataset_id, dataset);
            }
            Mutation::SubmitJob { job } => {
                self.jobs.insert(job.job_id, job);
            }
            Mutation::Transition {
                job_id,
                to,
                at_ms,
                error,
                result_path,
            } => {
                let job = self.jobs.get_mut(&job_id).expect("checked");
                job.state = to;
                job.history.push(StateEntry { state: to, at_ms });
                if error.is_some() {
                    job.error = error;
                }
                if result_path.is_some() {
                    job.result_path = result_path;
                }
            }
            Mutation::Counters { job_id, node, counters } => {
                let job = self.jobs.get_mut(&job_id).expect("checked");
                job.counters.insert(node, counters);
            }
            Mutation::RegisterNode { address, info, at_ms } => {
                self.nodes.insert(
                    info.name.clone(),
                    NodeRecord {
                        name: info.name.clone(),
                        address,
                        last_info: info,
                        last_seen_ms: at_ms,
                        alive: false,
                    },
                );
            }
            Mutation::Placement { placement } => {
                let pos = self
                    .placement_pos(placement.dataset_id, placement.fragment_index, &placement.node)
                    .unwrap_err();
                self.placements.insert(pos, placement);
            }
        }
    }
}

fn invalid(msg: impl Into<String>) -> CatalogError {
    CatalogError::InvalidMutation(msg.into())
}

/// Why a job submission was refused.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubmitError {
    #[error("dataset {0} does not exist")]
    UnknownDataset(u64),
    #[error("target node {0:?} is not registered")]
    UnknownTarget(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("filter text {0:?} is not in canonical form")]
    NotCanonical(String),
    #[error(transparent)]
    Calibration(#[from] crate::filter::CalibrationError),
}

pub(crate) fn check_spec(state: &State, spec: &JobSpec) -> Result<(), SubmitError> {
    let ds = state
        .datasets
        .get(&spec.dataset_id)
        .ok_or(SubmitError::UnknownDataset(spec.dataset_id))?;
    if let Target::Node(name) = &spec.target {
        if !state.nodes.contains_key(name) {
            return Err(SubmitError::UnknownTarget(name.clone()));
        }
    }
    let (_, canonical) = canonical_filter(&spec.filter_text, &ds.schema)?;
    if canonical != spec.filter_text {
        return Err(SubmitError::NotCanonical(spec.filter_text.clone()));
    }
    if let Some(cal) = &spec.calibration {
        cal.validate(&ds.schema)?;
    }
    Ok(())
}
