use crate::catalog::{DatasetRecord, JobRecord, PlacementRecord, Target};
use crate::filter::Calibration;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub node: String,
    pub fragment_indices: Vec<u32>,
}

/// A raw fragment copy made before execution. The source is always a node
/// that already holds the fragment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagingMove {
    pub fragment_index: u32,
    pub source: String,
    pub destination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPlan {
    pub job_id: u64,
    pub dataset_id: u64,
    /// Sorted by node name; each fragment appears exactly once.
    pub assignments: Vec<Assignment>,
    pub staging_moves: Vec<StagingMove>,
    pub filter: String,
    pub calibration: Option<Calibration>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("unrecoverable fragments of dataset {dataset_id}: {fragments:?}")]
    Unrecoverable { dataset_id: u64, fragments: Vec<u32> },
    #[error("target node {0:?} is not alive")]
    TargetDown(String),
}

/// Alive holder of a fragment with the lowest replica rank, ties broken by
/// node name.
pub fn choose_holder<'a>(
    placements: &'a [PlacementRecord],
    fragment_index: u32,
    alive: &BTreeSet<String>,
) -> Option<&'a str> {
    placements
        .iter()
        .filter(|p| p.fragment_index == fragment_index && alive.contains(&p.node))
        .min_by(|a, b| (a.replica_rank, &a.node).cmp(&(b.replica_rank, &b.node)))
        .map(|p| p.node.as_str())
}

/// Groups (fragment, node) choices into per-node assignments sorted by name.
pub fn group_by_node(choices: impl IntoIterator<Item = (u32, String)>) -> Vec<Assignment> {
    let mut by_node: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for (idx, node) in choices {
        by_node.entry(node).or_default().push(idx);
    }
    by_node
        .into_iter()
        .map(|(node, mut fragment_indices)| {
            fragment_indices.sort_unstable();
            Assignment { node, fragment_indices }
        })
        .collect()
}

/// Builds the execution plan for a job from catalog state. Pure: equal inputs
/// give equal plans.
///
/// `ALL` jobs run each fragment where it already lives. Single-target jobs
/// run everything on the target, copying over the fragments it lacks.
pub fn plan(
    job: &JobRecord,
    dataset: &DatasetRecord,
    placements: &[PlacementRecord],
    alive: &BTreeSet<String>,
) -> Result<JobPlan, PlanError> {
    let placements: Vec<PlacementRecord> = placements
        .iter()
        .filter(|p| p.dataset_id == dataset.dataset_id)
        .cloned()
        .collect();
    let mut choices = Vec::new();
    let mut moves = Vec::new();
    let mut missing = Vec::new();
    match &job.spec.target {
        Target::All => {
            for f in &dataset.fragments {
                match choose_holder(&placements, f.fragment_index, alive) {
                    Some(node) => choices.push((f.fragment_index, node.to_owned())),
                    None => missing.push(f.fragment_index),
                }
            }
        }
        Target::Node(target) => {
            if !alive.contains(target) {
                return Err(PlanError::TargetDown(target.clone()));
            }
            for f in &dataset.fragments {
                let idx = f.fragment_index;
                let held = placements.iter().any(|p| p.fragment_index == idx && &p.node == target);
                if !held {
                    match choose_holder(&placements, idx, alive) {
                        Some(source) => moves.push(StagingMove {
                            fragment_index: idx,
                            source: source.to_owned(),
                            destination: target.clone(),
                        }),
                        None => {
                            missing.push(idx);
                            continue;
                        }
                    }
                }
                choices.push((idx, target.clone()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(PlanError::Unrecoverable {
            dataset_id: dataset.dataset_id,
            fragments: missing,
        });
    }
    Ok(JobPlan {
        job_id: job.job_id,
        dataset_id: dataset.dataset_id,
        assignments: group_by_node(choices),
        staging_moves: moves,
        filter: job.spec.filter_text.clone(),
        calibration: job.spec.calibration.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{FragmentSummary, JobSpec, JobState};
    use crate::event::Schema;

    fn dataset(n: u32) -> DatasetRecord {
        DatasetRecord {
            dataset_id: 1,
            schema: Schema::default_physics(),
            event_count: n as u64,
            fragments: (0..n)
                .map(|i| FragmentSummary {
                    fragment_index: i,
                    event_count: 1,
                    first_event_ordinal: i as u64,
                    crc32: 0,
                })
                .collect(),
            created_at_ms: 0,
        }
    }

    fn job(target: Target) -> JobRecord {
        JobRecord {
            job_id: 5,
            spec: JobSpec {
                target,
                filter_text: "bx<10".into(),
                dataset_id: 1,
                calibration: None,
                submitted_by: String::new(),
                submitted_at_ms: 0,
            },
            state: JobState::Staging,
            error: None,
            result_path: None,
            counters: Default::default(),
            history: vec![],
        }
    }

    fn place(idx: u32, node: &str, rank: u32) -> PlacementRecord {
        PlacementRecord {
            dataset_id: 1,
            fragment_index: idx,
            node: node.into(),
            replica_rank: rank,
        }
    }

    fn alive(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    const GANDALF: &str = "gandalf.adetti.iscbo.pt";
    const HOBBIT: &str = "hobbit.adetti.iscbo.pt";

    #[test]
    fn all_target_uses_locality() {
        let ps = vec![
            place(0, GANDALF, 0),
            place(1, HOBBIT, 0),
            place(2, GANDALF, 0),
            place(3, HOBBIT, 0),
        ];
        let p = plan(&job(Target::All), &dataset(4), &ps, &alive(&[GANDALF, HOBBIT])).unwrap();
        assert!(p.staging_moves.is_empty());
        assert_eq!(
            p.assignments,
            vec![
                Assignment {
                    node: GANDALF.into(),
                    fragment_indices: vec![0, 2]
                },
                Assignment {
                    node: HOBBIT.into(),
                    fragment_indices: vec![1, 3]
                },
            ]
        );
    }

    #[test]
    fn single_target_stages_what_it_lacks() {
        let ps: Vec<_> = (0..4).map(|i| place(i, GANDALF, 0)).collect();
        let p = plan(
            &job(Target::Node(HOBBIT.into())),
            &dataset(4),
            &ps,
            &alive(&[GANDALF, HOBBIT]),
        )
        .unwrap();
        assert_eq!(p.staging_moves.len(), 4);
        assert!(p
            .staging_moves
            .iter()
            .all(|m| m.destination == HOBBIT && m.source == GANDALF));
        assert_eq!(p.assignments.len(), 1);
        assert_eq!(p.assignments[0].fragment_indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn replica_replaces_dead_primary() {
        let ps = vec![place(0, GANDALF, 0), place(0, HOBBIT, 1)];
        let p = plan(&job(Target::All), &dataset(1), &ps, &alive(&[HOBBIT])).unwrap();
        assert_eq!(p.assignments[0].node, HOBBIT);
    }

    #[test]
    fn missing_fragments_are_listed() {
        let ps = vec![place(0, GANDALF, 0), place(2, HOBBIT, 0)];
        let err = plan(&job(Target::All), &dataset(3), &ps, &alive(&[GANDALF])).unwrap_err();
        assert_eq!(
            err,
            PlanError::Unrecoverable {
                dataset_id: 1,
                fragments: vec![1, 2]
            }
        );
        let err = plan(&job(Target::Node(HOBBIT.into())), &dataset(1), &ps, &alive(&[GANDALF])).unwrap_err();
        assert_eq!(err, PlanError::TargetDown(HOBBIT.into()));
    }

    #[test]
    fn ties_break_by_name_and_order_does_not_matter() {
        let mut ps = vec![place(0, "b", 1), place(0, "a", 1), place(0, "c", 0)];
        let live = alive(&["a", "b"]);
        let p1 = plan(&job(Target::All), &dataset(1), &ps, &live).unwrap();
        ps.reverse();
        let p2 = plan(&job(Target::All), &dataset(1), &ps, &live).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.assignments[0].node, "a");
    }
}
