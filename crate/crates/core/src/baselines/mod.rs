//! Reference schedulers and an exact oracle for tiny instances.

mod oracle;

pub use oracle::{brute_force_oracle, OracleError, OracleSolution, ORACLE_MAX_EXECUTORS, ORACLE_MAX_STAGES, ORACLE_MAX_TASKS};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::{AppRuntime, ClusterState, DecisionPoint, Policy, PolicyError, SchedAction, StageRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    RoundRobin,
    FairShare,
    CriticalPath,
    Random,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 4] = [
        HeuristicKind::RoundRobin,
        HeuristicKind::FairShare,
        HeuristicKind::CriticalPath,
        HeuristicKind::Random,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            HeuristicKind::RoundRobin => "rr",
            HeuristicKind::FairShare => "fair",
            HeuristicKind::CriticalPath => "cp",
            HeuristicKind::Random => "random",
        }
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for HeuristicKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rr" | "round_robin" => Ok(HeuristicKind::RoundRobin),
            "fair" | "fair_share" => Ok(HeuristicKind::FairShare),
            "cp" | "critical_path" => Ok(HeuristicKind::CriticalPath),
            "random" => Ok(HeuristicKind::Random),
            other => Err(format!("unknown scheduler {other:?}")),
        }
    }
}

/// A fixed-rule scheduler usable with [`crate::sim::run_episode`].
#[derive(Debug, Clone)]
pub struct HeuristicPolicy {
    kind: HeuristicKind,
    /// Parallelism limit for every action; `None` means the cluster maximum.
    /// Fair share computes its own limit and ignores this.
    limit: Option<usize>,
    rng: ChaCha8Rng,
    /// (arrival, app_id) of the application served last by round robin.
    cursor: Option<(f64, u64)>,
}

impl HeuristicPolicy {
    pub fn new(kind: HeuristicKind) -> Self {
        Self::with_options(kind, None, 0)
    }

    pub fn with_options(kind: HeuristicKind, limit: Option<usize>, seed: u64) -> Self {
        Self {
            kind,
            limit,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cursor: None,
        }
    }

    pub fn kind(&self) -> HeuristicKind {
        self.kind
    }

    fn fixed_limit(&self, state: &ClusterState) -> usize {
        self.limit.unwrap_or(state.max_limit()).clamp(1, state.max_limit())
    }

    pub fn choose(&mut self, state: &ClusterState, candidates: &[StageRef]) -> Option<SchedAction> {
        if candidates.is_empty() {
            return None;
        }
        let action = match self.kind {
            HeuristicKind::RoundRobin => {
                let stage = self.round_robin(state, candidates);
                SchedAction {
                    stage,
                    limit: self.fixed_limit(state),
                }
            }
            HeuristicKind::FairShare => fair_share(state, candidates),
            HeuristicKind::CriticalPath => SchedAction {
                stage: critical_path_choice(state, candidates),
                limit: state.max_limit(),
            },
            HeuristicKind::Random => SchedAction {
                stage: candidates[self.rng.random_range(0..candidates.len())],
                limit: self.fixed_limit(state),
            },
        };
        Some(action)
    }

    fn round_robin(&mut self, state: &ClusterState, candidates: &[StageRef]) -> StageRef {
        let lowest = lowest_stage_per_app(candidates);
        let mut order: Vec<((f64, u64), StageRef)> = lowest
            .into_iter()
            .map(|(app, stage)| {
                let arrival = state.app(app).map(AppRuntime::arrival_time).unwrap_or(0.0);
                ((arrival, app), stage)
            })
            .collect();
        order.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.cmp(&b.0 .1)));
        let next = self
            .cursor
            .and_then(|cur| {
                order
                    .iter()
                    .find(|(key, _)| key.0.total_cmp(&cur.0).then(key.1.cmp(&cur.1)).is_gt())
            })
            .unwrap_or(&order[0]);
        self.cursor = Some(next.0);
        next.1
    }
}

impl Policy for HeuristicPolicy {
    fn decide(&mut self, point: &DecisionPoint<'_>) -> Result<SchedAction, PolicyError> {
        self.choose(point.state, point.candidates)
            .ok_or_else(|| PolicyError("no schedulable stage".into()))
    }
}

fn lowest_stage_per_app(candidates: &[StageRef]) -> BTreeMap<u64, StageRef> {
    let mut out: BTreeMap<u64, StageRef> = BTreeMap::new();
    for c in candidates {
        out.entry(c.app_id)
            .and_modify(|s| {
                if c.stage_id < s.stage_id {
                    *s = *c
                }
            })
            .or_insert(*c);
    }
    out
}

/// Lowest schedulable stage of the application holding the fewest
/// executors; the limit splits the cluster evenly over active applications,
/// capped at the state's maximum limit.
pub fn fair_share(state: &ClusterState, candidates: &[StageRef]) -> SchedAction {
    let lowest = lowest_stage_per_app(candidates);
    let (_, stage) = lowest
        .iter()
        .map(|(&app, &stage)| (state.app(app).map(|a| a.held).unwrap_or(0), stage))
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.app_id.cmp(&b.1.app_id)))
        .expect("candidates are non-empty");
    SchedAction {
        stage,
        limit: fair_limit(state.total_executors(), state.active_apps().len()).min(state.max_limit()),
    }
}

pub fn fair_limit(total_executors: usize, active_apps: usize) -> usize {
    total_executors.div_ceil(active_apps.max(1)).max(1)
}

/// Longest path of remaining stage work (divided by mean executor speed)
/// from `stage` down to any leaf of its application.
pub fn critical_path_length(state: &ClusterState, stage: StageRef) -> f64 {
    let Some(app) = state.app(stage.app_id) else { return 0.0 };
    let servers = state.servers();
    let executors: usize = servers.iter().map(|s| s.executor_count).sum();
    let mean_speed = servers.iter().map(|s| s.speed * s.executor_count as f64).sum::<f64>() / executors as f64;
    let order = app.dag.topological_order().expect("validated on arrival");
    let mut longest = vec![0.0f64; app.stages.len()];
    for &j in order.iter().rev() {
        let own = app.dag.stages[j].task_work * app.stages[j].remaining_tasks() as f64 / mean_speed;
        let below = app.children[j].iter().map(|&u| longest[u]).fold(0.0, f64::max);
        longest[j] = own + below;
    }
    longest[stage.stage_id as usize]
}

fn critical_path_choice(state: &ClusterState, candidates: &[StageRef]) -> StageRef {
    let mut best = candidates[0];
    let mut best_len = critical_path_length(state, best);
    for &c in &candidates[1..] {
        let len = critical_path_length(state, c);
        if len > best_len || (len == best_len && c < best) {
            best = c;
            best_len = len;
        }
    }
    best
}
