//! Ready-made clusters and workloads.

use crate::agent::ModelConfig;
use crate::gnn::FeatureScale;
use crate::sim::{cluster_capacity, total_executors, Server};
use crate::trace::{calibrate_arrival_rate, IntRange, TraceError, WorkDistribution, WorkloadSpec};
use crate::train::{TrainConfig, TrainEnv};

/// Two servers: four fast executors and eight slow ones.
pub fn desk_cluster() -> Vec<Server> {
    vec![Server::new(0, 2.0, 4), Server::new(1, 1.0, 8)]
}

/// Heavy-tailed DAG workload with the arrival rate calibrated so the
/// offered work is `load` times the capacity of `servers`.
pub fn desk_workload(app_count: usize, load: f64, servers: &[Server], seed: u64) -> Result<WorkloadSpec, TraceError> {
    let mut spec = WorkloadSpec {
        app_count,
        arrival_rate: 1.0,
        stage_count_range: IntRange::new(2, 6),
        task_count_range: IntRange::new(1, 12),
        task_work_distribution: WorkDistribution::LogNormal { mu: 0.0, sigma: 1.0 },
        scale_factors: vec![0.2, 1.0, 5.0],
        target_load: load,
        seed,
    };
    spec.arrival_rate = calibrate_arrival_rate(&spec, cluster_capacity(servers))?;
    Ok(spec)
}

/// Policy shape for `servers`, with feature scales taken from `workload`.
pub fn model_for(servers: &[Server], workload: &WorkloadSpec) -> ModelConfig {
    ModelConfig {
        feature_scale: FeatureScale::from_spec(workload),
        ..ModelConfig::new(total_executors(servers))
    }
}

/// 20 applications at 40% load on [`desk_cluster`].
pub fn desk_env(seed: u64) -> TrainEnv {
    let servers = desk_cluster();
    let workload = desk_workload(20, 0.4, &servers, seed).expect("desk recipe is valid");
    TrainEnv { servers, workload }
}

/// Training settings used for the desk-scale runs: the tuned defaults with
/// returns scaled into the range where the critic stays stable.
pub fn desk_train_config(seed: u64, iterations: usize) -> TrainConfig {
    TrainConfig {
        seed,
        iterations,
        reward_scale: DESK_REWARD_SCALE,
        ..TrainConfig::default()
    }
}

/// Reward multiplier for desk episodes, whose raw returns reach the hundreds.
pub const DESK_REWARD_SCALE: f64 = 0.1;
