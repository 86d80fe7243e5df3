use crate::event::Schema;
use crate::filter::Calibration;
use crate::wire::NodeInfo;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    New,
    Staging,
    Running,
    Merging,
    Finished,
    Error,
}

impl JobState {
    pub const ALL: [JobState; 6] = [
        JobState::New,
        JobState::Staging,
        JobState::Running,
        JobState::Merging,
        JobState::Finished,
        JobState::Error,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Finished | JobState::Error)
    }

    pub fn can_transition_to(self, next: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, next),
            (New, Staging) | (Staging, Running) | (Running, Merging) | (Merging, Finished)
        ) || (!self.is_terminal() && next == Error)
    }

    /// Title-case label used in the job status table.
    pub fn label(self) -> &'static str {
        match self {
            JobState::New => "New",
            JobState::Staging => "Staging",
            JobState::Running => "Running",
            JobState::Merging => "Merging",
            JobState::Finished => "Finished",
            JobState::Error => "Error",
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Where a job runs: on every node holding a fragment, or on one named node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Target {
    All,
    Node(String),
}

impl Target {
    pub const ALL_KEYWORD: &'static str = "ALL";

    /// Value for the "Server Name" column.
    pub fn server_name(&self) -> &str {
        match self {
            Target::All => "All Servers",
            Target::Node(n) => n,
        }
    }
}

impl From<String> for Target {
    fn from(s: String) -> Self {
        if s == Self::ALL_KEYWORD {
            Target::All
        } else {
            Target::Node(s)
        }
    }
}

impl From<&str> for Target {
    fn from(s: &str) -> Self {
        Target::from(s.to_owned())
    }
}

impl From<Target> for String {
    fn from(t: Target) -> Self {
        match t {
            Target::All => Target::ALL_KEYWORD.to_owned(),
            Target::Node(n) => n,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::All => f.write_str(Self::ALL_KEYWORD),
            Target::Node(n) => f.write_str(n),
        }
    }
}

/// A submission as received from a client, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRequest {
    pub target: Target,
    pub filter: String,
    pub dataset_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    #[serde(default)]
    pub submitted_by: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub target: Target,
    /// Canonical rendering of the submitted filter.
    pub filter_text: String,
    pub dataset_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    pub submitted_by: String,
    pub submitted_at_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub events_scanned: u64,
    pub events_passed: u64,
}

impl std::ops::AddAssign for NodeCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.events_scanned += rhs.events_scanned;
        self.events_passed += rhs.events_passed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEntry {
    pub state: JobState,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u64,
    pub spec: JobSpec,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Merged result, relative to the catalog directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_path: Option<String>,
    #[serde(default)]
    pub counters: BTreeMap<String, NodeCounters>,
    pub history: Vec<StateEntry>,
}

impl JobRecord {
    pub fn total_counters(&self) -> NodeCounters {
        let mut total = NodeCounters::default();
        for c in self.counters.values() {
            total += *c;
        }
        total
    }

    pub fn entered_at(&self, state: JobState) -> Option<u64> {
        self.history.iter().find(|e| e.state == state).map(|e| e.at_ms)
    }

    /// The six-column status table row.
    pub fn row(&self) -> JobRow {
        JobRow {
            job_id: self.job_id,
            status: self.state.label().to_owned(),
            server_name: self.spec.target.server_name().to_owned(),
            filter_expression: self.spec.filter_text.clone(),
            error: self.error.clone().unwrap_or_default(),
            result: if self.state == JobState::Finished {
                format!("/jobs/{}/result", self.job_id)
            } else {
                String::new()
            },
        }
    }
}

/// One line of the job status table, columns in display order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRow {
    pub job_id: u64,
    pub status: String,
    pub server_name: String,
    pub filter_expression: String,
    pub error: String,
    pub result: String,
}

impl JobRow {
    pub const HEADERS: [&'static str; 6] = [
        "Job ID",
        "Status",
        "Server Name",
        "Filter Expression",
        "Error",
        "Result",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub name: String,
    pub address: String,
    pub last_info: NodeInfo,
    pub last_seen_ms: u64,
    /// Derived from `last_seen_ms` when the record is read.
    #[serde(default)]
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub dataset_id: u64,
    pub fragment_index: u32,
    pub node: String,
    pub replica_rank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentSummary {
    pub fragment_index: u32,
    pub event_count: u32,
    pub first_event_ordinal: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_id: u64,
    pub schema: Schema,
    pub event_count: u64,
    pub fragments: Vec<FragmentSummary>,
    pub created_at_ms: u64,
}
