use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cluster::{ArrivalStream, ClusterState, SimEvent, Step};
use super::{SchedAction, Server, SimError, StageRef, TaskRun};
use crate::trace::ApplicationDag;

/// What a policy sees at a scheduling event.
#[derive(Debug, Clone, Copy)]
pub struct DecisionPoint<'a> {
    pub state: &'a ClusterState,
    /// Stages the policy may pick from, ordered by (app_id, stage_id).
    pub candidates: &'a [StageRef],
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct PolicyError(pub String);

/// Scheduling decision callback.
pub trait Policy {
    fn decide(&mut self, point: &DecisionPoint<'_>) -> Result<SchedAction, PolicyError>;
}

impl<F> Policy for F
where
    F: FnMut(&DecisionPoint<'_>) -> Result<SchedAction, PolicyError>,
{
    fn decide(&mut self, point: &DecisionPoint<'_>) -> Result<SchedAction, PolicyError> {
        self(point)
    }
}

/// Episode cut-off. Unset fields mean "run until drained".
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub max_time: Option<f64>,
    pub max_actions: Option<usize>,
}

impl Horizon {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn actions(n: usize) -> Self {
        Self {
            max_time: None,
            max_actions: Some(n),
        }
    }

    pub fn time(t: f64) -> Self {
        Self {
            max_time: Some(t),
            max_actions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeOptions {
    /// Run [`ClusterState::audit`] after every transition.
    pub audit: bool,
    /// Keep every simulator event in the trace.
    pub event_log: bool,
    /// Largest parallelism limit; total executors when `None`.
    pub max_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time: f64,
    pub idle_executors: usize,
    pub candidates: Vec<StageRef>,
    pub action: SchedAction,
    /// Tasks placed by this action.
    pub placed: usize,
    /// `−∫ n(t) dt` from this decision to the next one (or the episode end).
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppOutcome {
    pub app_id: u64,
    pub arrival: f64,
    pub completion: Option<f64>,
}

/// Everything recorded during one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub decisions: Vec<DecisionRecord>,
    /// Task placements in the order they were made.
    pub runs: Vec<TaskRun>,
    /// Arrived applications sorted by id.
    pub apps: Vec<AppOutcome>,
    pub end_time: f64,
    /// `∫ n(t) dt` over the whole episode.
    pub residence: f64,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<SimEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit_failures: Vec<String>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.decisions.iter().map(|d| d.reward).sum()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.decisions.iter().map(|d| d.reward).collect()
    }

    pub fn all_finished(&self) -> bool {
        self.apps.iter().all(|a| a.completion.is_some())
    }
}

/// Simulates `workload` on `servers`, asking `policy` for an action whenever
/// executors are idle and some stage is schedulable.
///
/// All events sharing a timestamp are processed before the decision round.
/// Within a round, a stage whose action placed no task is withheld from the
/// candidates until the next event, so every round terminates.
pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    workload: &[ApplicationDag],
    servers: &[Server],
    horizon: Horizon,
    options: EpisodeOptions,
) -> Result<EpisodeTrace, SimError> {
    if horizon.max_time.is_some_and(|t| !(t > 0.0)) || horizon.max_actions == Some(0) {
        return Err(SimError::InvalidHorizon);
    }
    let mut state = ClusterState::new(servers.to_vec())?;
    if let Some(m) = options.max_limit {
        state = state.with_max_limit(m);
    }
    let mut stream = ArrivalStream::new(workload.to_vec())?;

    let mut decisions: Vec<DecisionRecord> = Vec::new();
    let mut marks: Vec<f64> = Vec::new();
    let mut runs = Vec::new();
    let mut events = Vec::new();
    let mut audit_failures = Vec::new();
    let mut truncated = false;
    let mut last_clock = 0.0;

    'episode: loop {
        let Some(next) = state.next_event_time(&stream) else {
            break;
        };
        if let Some(limit) = horizon.max_time {
            if next > limit {
                state.advance_clock_to(limit);
                truncated = true;
                break;
            }
        }
        let Step::Advanced(new_events) = state.advance(&mut stream) else {
            break;
        };
        if options.audit {
            if state.clock() < last_clock {
                audit_failures.push(format!("clock went back from {last_clock} to {}", state.clock()));
            }
            audit_failures.extend(state.audit());
        }
        last_clock = state.clock();
        if options.event_log {
            events.extend(new_events);
        }
        if state.next_event_time(&stream) == Some(state.clock()) {
            continue;
        }

        let mut withheld: BTreeSet<StageRef> = BTreeSet::new();
        loop {
            if state.idle_total() == 0 {
                break;
            }
            let candidates: Vec<StageRef> = state.schedulable_set().into_iter().filter(|s| !withheld.contains(s)).collect();
            if candidates.is_empty() {
                break;
            }
            if horizon.max_actions.is_some_and(|m| decisions.len() >= m) {
                truncated = true;
                break 'episode;
            }
            let clock = state.clock();
            let action = policy
                .decide(&DecisionPoint {
                    state: &state,
                    candidates: &candidates,
                })
                .map_err(|e| SimError::Policy { clock, message: e.0 })?;
            if !candidates.contains(&action.stage) {
                return Err(SimError::Policy {
                    clock,
                    message: format!("chose {:?}, which is not among the candidates", action.stage),
                });
            }
            let idle = state.idle_total();
            let placed = state.apply_action(action).map_err(|e| SimError::Policy {
                clock,
                message: e.to_string(),
            })?;
            if placed.is_empty() {
                withheld.insert(action.stage);
            }
            marks.push(state.residence());
            decisions.push(DecisionRecord {
                time: clock,
                idle_executors: idle,
                candidates,
                action,
                placed: placed.len(),
                reward: 0.0,
            });
            runs.extend(placed);
            if options.audit {
                audit_failures.extend(state.audit());
            }
        }
    }

    let end_residence = state.residence();
    for k in 0..decisions.len() {
        let from = if k == 0 { 0.0 } else { marks[k] };
        let to = marks.get(k + 1).copied().unwrap_or(end_residence);
        decisions[k].reward = -(to - from);
    }

    let mut apps: Vec<AppOutcome> = state
        .finished()
        .iter()
        .map(|&(app_id, arrival, completion)| AppOutcome {
            app_id,
            arrival,
            completion: Some(completion),
        })
        .chain(state.active_apps().values().map(|a| AppOutcome {
            app_id: a.app_id(),
            arrival: a.arrival_time(),
            completion: None,
        }))
        .collect();
    apps.sort_by_key(|a| a.app_id);

    Ok(EpisodeTrace {
        decisions,
        runs,
        apps,
        end_time: state.clock(),
        residence: end_residence,
        truncated,
        events,
        audit_failures,
    })
}
