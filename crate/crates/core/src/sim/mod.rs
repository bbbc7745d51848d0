//! Event-driven simulation of a heterogeneous executor cluster.
//!
//! [`ClusterState`] holds the mechanics (task placement, executor release,
//! dependency tracking); [`run_episode`] drives it with a [`Policy`] and
//! records an [`EpisodeTrace`].

mod cluster;
mod episode;
mod metrics;

pub use cluster::{compute_reward, AppRuntime, ArrivalStream, ClusterState, SimEvent, StageState, Step};
pub use episode::{run_episode, AppOutcome, DecisionPoint, DecisionRecord, EpisodeOptions, EpisodeTrace, Horizon, Policy, PolicyError};
pub use metrics::{audit_trace, metrics, write_event_log, write_jct_csv, AppMetrics, InvariantViolation, Metrics};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One machine: `executor_count` slots, each running one task at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Server {
    pub server_id: usize,
    /// Work units processed per second by one executor.
    pub speed: f64,
    pub executor_count: usize,
}

impl Server {
    pub fn new(server_id: usize, speed: f64, executor_count: usize) -> Self {
        Self {
            server_id,
            speed,
            executor_count,
        }
    }
}

pub fn total_executors(servers: &[Server]) -> usize {
    servers.iter().map(|s| s.executor_count).sum()
}

/// Work units per second when every executor is busy.
pub fn cluster_capacity(servers: &[Server]) -> f64 {
    servers.iter().map(|s| s.speed * s.executor_count as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StageRef {
    pub app_id: u64,
    pub stage_id: u32,
}

impl StageRef {
    pub fn new(app_id: u64, stage_id: u32) -> Self {
        Self { app_id, stage_id }
    }
}

/// Pick a stage and (re)set its application's parallelism limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedAction {
    pub stage: StageRef,
    pub limit: usize,
}

/// One task occupying one executor from `start` to `finish`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub app_id: u64,
    pub stage_id: u32,
    pub task_index: u32,
    pub server_id: usize,
    pub start: f64,
    pub finish: f64,
    /// Parallelism limit of the application when this task was placed.
    pub limit: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cluster needs at least one server")]
    NoServers,
    #[error("server {server_id} is invalid: {reason}")]
    InvalidServer { server_id: usize, reason: String },
    #[error("stage {0:?} is not schedulable")]
    NotSchedulable(StageRef),
    #[error("parallelism limit {limit} outside [1, {max}]")]
    LimitOutOfRange { limit: usize, max: usize },
    #[error("application {app_id} is invalid: {reason}")]
    InvalidApplication { app_id: u64, reason: String },
    #[error("policy failed at t={clock}: {message}")]
    Policy { clock: f64, message: String },
    #[error("horizon must be positive")]
    InvalidHorizon,
}
