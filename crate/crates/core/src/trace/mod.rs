//! Streaming applications as stage DAGs: synthetic generation, the
//! newline-delimited trace format, and structural validation.

mod generate;
mod io;

pub use generate::{calibrate_arrival_rate, expected_app_work, generate_workload, IntRange, WorkDistribution, WorkloadSpec};
pub use io::{load_trace, parse_trace, save_trace, write_trace};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One stage of an application: a batch of identical parallel tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    #[serde(rename = "id")]
    pub stage_id: u32,
    pub task_count: u32,
    /// Work units per task, before dividing by server speed.
    pub task_work: f64,
    pub data_volume: f64,
    #[serde(rename = "parents")]
    pub parent_ids: Vec<u32>,
}

/// A streaming application: stages with precedence edges and an arrival time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationDag {
    pub app_id: u64,
    pub arrival_time: f64,
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    DuplicateId { stage_id: u32 },
    IdOutOfRange { stage_id: u32 },
    DanglingParent { stage_id: u32, parent: u32 },
    SelfReference { stage_id: u32 },
    DuplicateParent { stage_id: u32, parent: u32 },
    ZeroTasks { stage_id: u32 },
    NonPositiveWork { stage_id: u32 },
    InvalidDataVolume { stage_id: u32 },
    InvalidArrival,
    Cycle,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "application has no stages"),
            Violation::DuplicateId { stage_id } => write!(f, "duplicate id {stage_id}"),
            Violation::IdOutOfRange { stage_id } => {
                write!(f, "stage id {stage_id} outside the dense range")
            }
            Violation::DanglingParent { stage_id, parent } => {
                write!(f, "dangling parent {parent} on stage {stage_id}")
            }
            Violation::SelfReference { stage_id } => write!(f, "stage {stage_id} lists itself as parent"),
            Violation::DuplicateParent { stage_id, parent } => {
                write!(f, "stage {stage_id} lists parent {parent} twice")
            }
            Violation::ZeroTasks { stage_id } => write!(f, "stage {stage_id} has zero tasks"),
            Violation::NonPositiveWork { stage_id } => {
                write!(f, "stage {stage_id} has non-positive task work")
            }
            Violation::InvalidDataVolume { stage_id } => {
                write!(f, "stage {stage_id} has negative or non-finite data volume")
            }
            Violation::InvalidArrival => write!(f, "arrival time must be finite and non-negative"),
            Violation::Cycle => write!(f, "stage dependencies contain a cycle"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid workload spec field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("expected work per application is zero")]
    ZeroExpectedWork,
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: application {app_id} has cyclic stage dependencies")]
    Cycle { line: usize, app_id: u64 },
    #[error("line {line}: application {app_id} is invalid: {}", join(.violations))]
    Invalid {
        line: usize,
        app_id: u64,
        violations: Vec<Violation>,
    },
}

fn join(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ApplicationDag {
    /// Children adjacency by stage index. Assumes a validated DAG.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.stages.len()];
        for s in &self.stages {
            for &p in &s.parent_ids {
                out[p as usize].push(s.stage_id as usize);
            }
        }
        for c in &mut out {
            c.sort_unstable();
        }
        out
    }

    /// Kahn topological order (parents first), smallest ready id first.
    /// `None` if the parent relation has a cycle or dangling ids.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.stages.len();
        let mut indegree = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for (i, s) in self.stages.iter().enumerate() {
            for &p in &s.parent_ids {
                let p = p as usize;
                if p >= n {
                    return None;
                }
                indegree[i] += 1;
                children[p].push(i);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn total_work(&self) -> f64 {
        self.stages.iter().map(|s| s.task_work * s.task_count as f64).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.stages.iter().map(|s| s.parent_ids.len()).sum()
    }
}

/// Checks every structural invariant and reports all violations found.
pub fn validate_dag(dag: &ApplicationDag) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let n = dag.stages.len();
    if n == 0 {
        violations.push(Violation::Empty);
    }
    if !(dag.arrival_time.is_finite() && dag.arrival_time >= 0.0) {
        violations.push(Violation::InvalidArrival);
    }
    let mut seen = vec![false; n];
    for s in &dag.stages {
        let id = s.stage_id as usize;
        if id >= n {
            violations.push(Violation::IdOutOfRange { stage_id: s.stage_id });
        } else if seen[id] {
            violations.push(Violation::DuplicateId { stage_id: s.stage_id });
        } else {
            seen[id] = true;
        }
        if s.task_count == 0 {
            violations.push(Violation::ZeroTasks { stage_id: s.stage_id });
        }
        if !(s.task_work.is_finite() && s.task_work > 0.0) {
            violations.push(Violation::NonPositiveWork { stage_id: s.stage_id });
        }
        if !(s.data_volume.is_finite() && s.data_volume >= 0.0) {
            violations.push(Violation::InvalidDataVolume { stage_id: s.stage_id });
        }
        let mut parents = s.parent_ids.clone();
        parents.sort_unstable();
        for (k, &p) in parents.iter().enumerate() {
            if p == s.stage_id {
                violations.push(Violation::SelfReference { stage_id: s.stage_id });
            } else if p as usize >= n {
                violations.push(Violation::DanglingParent {
                    stage_id: s.stage_id,
                    parent: p,
                });
            }
            if k > 0 && parents[k - 1] == p {
                violations.push(Violation::DuplicateParent {
                    stage_id: s.stage_id,
                    parent: p,
                });
            }
        }
    }
    let structurally_sound = !violations.iter().any(|v| {
        matches!(
            v,
            Violation::Empty
                | Violation::DuplicateId { .. }
                | Violation::IdOutOfRange { .. }
                | Violation::DanglingParent { .. }
                | Violation::SelfReference { .. }
        )
    });
    if structurally_sound && !stage_ids_are_positions(dag) {
        // ids are a dense permutation but not listed in order
        let mut sorted = dag.clone();
        sorted.stages.sort_by_key(|s| s.stage_id);
        if sorted.topological_order().is_none() {
            violations.push(Violation::Cycle);
        }
    } else if structurally_sound && dag.topological_order().is_none() {
        violations.push(Violation::Cycle);
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn stage_ids_are_positions(dag: &ApplicationDag) -> bool {
    dag.stages.iter().enumerate().all(|(i, s)| s.stage_id as usize == i)
}

/// Hand-built DAGs used by tests and examples.
pub mod fixtures {
    use super::{ApplicationDag, StageSpec};

    fn stage(id: u32, work: f64, parents: &[u32]) -> StageSpec {
        StageSpec {
            stage_id: id,
            task_count: 1,
            task_work: work,
            data_volume: 0.0,
            parent_ids: parents.to_vec(),
        }
    }

    /// Five single-task stages: 0 → {1, 2, 3} → 4.
    pub fn fork_join(app_id: u64, arrival_time: f64, works: [f64; 5]) -> ApplicationDag {
        ApplicationDag {
            app_id,
            arrival_time,
            stages: vec![
                stage(0, works[0], &[]),
                stage(1, works[1], &[0]),
                stage(2, works[2], &[0]),
                stage(3, works[3], &[0]),
                stage(4, works[4], &[1, 2, 3]),
            ],
        }
    }

    /// Single-task stages in a line: 0 → 1 → … → n-1.
    pub fn chain(app_id: u64, arrival_time: f64, works: &[f64]) -> ApplicationDag {
        ApplicationDag {
            app_id,
            arrival_time,
            stages: works
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let parents: Vec<u32> = if i == 0 { vec![] } else { vec![i as u32 - 1] };
                    stage(i as u32, w, &parents)
                })
                .collect(),
        }
    }

    /// One stage with `task_count` tasks of `work` each.
    pub fn single_stage(app_id: u64, arrival_time: f64, task_count: u32, work: f64) -> ApplicationDag {
        ApplicationDag {
            app_id,
            arrival_time,
            stages: vec![StageSpec {
                stage_id: 0,
                task_count,
                task_work: work,
                data_volume: 0.0,
                parent_ids: vec![],
            }],
        }
    }
}
