//! Synchronous advantage actor-critic training.
//!
//! Each iteration draws an episode length and one arrival sequence, runs
//! `num_agents` sampling episodes on the same parameter snapshot (in
//! parallel), turns their rewards into GAE advantages, and applies one
//! averaged gradient step to the actor and the critic.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, LearnedPolicy, PolicyParameters, StepRecord};
use crate::diff::{DiffError, Gradients, Var};
use crate::sim::{run_episode, EpisodeOptions, Horizon, Server, SimError};
use crate::trace::{generate_workload, ApplicationDag, TraceError, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_agents: usize,
    /// Mean episode length, in scheduling actions, at iteration 0.
    pub mu_mean_init: f64,
    /// Added to the mean episode length after every iteration.
    pub mu_step: f64,
    pub max_episode_len: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Multiplier applied to every reward before advantages are computed.
    pub reward_scale: f64,
    pub entropy_coef: f64,
    /// An iteration whose mean absolute gradient exceeds this is rejected.
    pub grad_ceiling: f64,
    /// Consecutive rejected iterations tolerated before training fails.
    pub max_rejections: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_agents: 16,
            mu_mean_init: 50.0,
            mu_step: 1.0,
            max_episode_len: 2000,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr_actor: 0.001,
            lr_critic: 0.01,
            iterations: 2000,
            seed: 0,
            reward_scale: 1.0,
            entropy_coef: 0.0,
            grad_ceiling: 1e3,
            max_rejections: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &'static str, reason: String| Err(TrainError::InvalidConfig { field, reason });
        if self.num_agents == 0 {
            return bad("num_agents", "must be positive".into());
        }
        if self.iterations == 0 {
            return bad("iterations", "must be positive".into());
        }
        if !(self.mu_mean_init.is_finite() && self.mu_mean_init > 0.0) {
            return bad("mu_mean_init", format!("{} is not positive", self.mu_mean_init));
        }
        if !(self.mu_step.is_finite() && self.mu_step >= 0.0) {
            return bad("mu_step", format!("{} is negative", self.mu_step));
        }
        if self.max_episode_len == 0 {
            return bad("max_episode_len", "must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", format!("{} is outside (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", format!("{} is outside [0, 1]", self.gae_lambda));
        }
        for (field, v) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("entropy_coef", self.entropy_coef),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, format!("{v} is not a non-negative rate"));
            }
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad("reward_scale", format!("{} is not positive", self.reward_scale));
        }
        if !(self.grad_ceiling > 0.0) {
            return bad("grad_ceiling", format!("{} is not positive", self.grad_ceiling));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("rewards and values differ in length: {rewards} rewards need {} values, got {values}", rewards + 1)]
    LengthMismatch { rewards: usize, values: usize },
    #[error("worker {worker} ran on snapshot {got}, expected {expected}")]
    SnapshotMismatch { worker: usize, expected: u64, got: u64 },
    #[error("training diverged: {0} consecutive iterations rejected by the gradient guard")]
    Diverged(usize),
    #[error("non-finite parameter after update at iteration {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Workload(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Cluster and arrival process the agent is trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEnv {
    pub servers: Vec<Server>,
    /// Template; its seed is replaced every iteration.
    pub workload: WorkloadSpec,
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub policy: PolicyParameters,
    /// Iterations completed so far.
    pub iteration: usize,
    pub mu_mean: f64,
}

impl TrainState {
    pub fn new(policy: PolicyParameters, config: &TrainConfig) -> Self {
        Self {
            policy,
            iteration: 0,
            mu_mean: config.mu_mean_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub iteration: usize,
    /// Mean over workers of the undiscounted, unscaled episode reward.
    pub mean_return: f64,
    /// Mean completion time of applications finished in this iteration's episodes.
    pub mean_jct: Option<f64>,
    /// Mean entropy of the action distribution over all decisions.
    pub entropy: f64,
    pub grad_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
}

impl TrainReport {
    pub fn rejected(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.iter().filter(|r| !r.accepted).map(|r| r.iteration)
    }

    /// `iteration,mean_return,mean_jct,entropy,grad_norm`, `NA` for missing values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,mean_return,mean_jct,entropy,grad_norm")?;
        for r in &self.rows {
            write_row(&mut out, r)?;
        }
        Ok(())
    }
}

pub fn write_row<W: Write>(mut out: W, r: &TrainRow) -> std::io::Result<()> {
    let jct = r.mean_jct.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
    writeln!(out, "{},{},{},{},{}", r.iteration, r.mean_return, jct, r.entropy, r.grad_norm)
}

/// Generalized advantage estimates. `values` carries one extra trailing
/// entry, the bootstrap value of the state after the last reward.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, TrainError> {
    if values.len() != rewards.len() + 1 {
        return Err(TrainError::LengthMismatch {
            rewards: rewards.len(),
            values: values.len(),
        });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for k in (0..rewards.len()).rev() {
        let delta = rewards[k] + gamma * values[k + 1] - values[k];
        running = delta + gamma * lambda * running;
        adv[k] = running;
    }
    Ok(adv)
}

/// `⌈X⌉` for `X ~ Exp(mean = mu_mean)`, clamped to `[1, max_len]`.
pub fn sample_episode_length(mu_mean: f64, max_len: usize, rng: &mut impl Rng) -> usize {
    let x: f64 = Exp1.sample(rng);
    let len = (x * mu_mean).ceil();
    if len.is_nan() || len < 1.0 {
        1
    } else {
        (len.min(max_len as f64)) as usize
    }
}

/// Result of one sampling episode, reduced to what the update needs.
#[derive(Debug, Clone)]
pub struct WorkerRollout {
    pub worker: usize,
    /// Parameter version the episode ran on.
    pub snapshot: u64,
    /// `Σ_k A_k ∇log π + (target_k − V_k) ∇V (+ entropy term)`.
    pub grads: Gradients,
    pub steps: usize,
    pub total_reward: f64,
    pub completions: Vec<f64>,
    pub entropy_sum: f64,
}

/// Per-iteration randomness: episode length, workload seed, worker seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationPlan {
    pub episode_len: usize,
    pub workload_seed: u64,
    pub worker_seeds: Vec<u64>,
}

pub fn plan_iteration(config: &TrainConfig, iteration: usize, mu_mean: f64) -> IterationPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(iteration as u64 + 2);
    let episode_len = sample_episode_length(mu_mean, config.max_episode_len, &mut rng);
    let workload_seed = rng.random();
    let worker_seeds = (0..config.num_agents).map(|_| rng.random()).collect();
    IterationPlan {
        episode_len,
        workload_seed,
        worker_seeds,
    }
}

/// Runs one sampling episode and backpropagates every decision.
pub fn run_worker(
    policy: &PolicyParameters,
    servers: &[Server],
    workload: &[ApplicationDag],
    episode_len: usize,
    worker: usize,
    seed: u64,
    config: &TrainConfig,
) -> Result<WorkerRollout, TrainError> {
    let mut agent = LearnedPolicy::recording(policy, seed);
    let options = EpisodeOptions {
        max_limit: Some(policy.max_limit()),
        ..Default::default()
    };
    let trace = run_episode(&mut agent, workload, servers, Horizon::actions(episode_len), options)?;
    let steps = agent.into_steps();
    let rewards: Vec<f64> = trace.rewards().iter().map(|r| r * config.reward_scale).collect();
    let mut values: Vec<f64> = steps.iter().map(|s| s.value_estimate()).collect();
    values.push(0.0);
    let adv = compute_gae(&rewards, &values, config.gamma, config.gae_lambda)?;

    let mut grads = Gradients::zeros(policy.params.len());
    backprop_steps(policy, &steps, &adv, &values, config, &mut grads)?;
    let entropy_sum = steps.iter().map(|s| s.entropy_value()).sum();
    Ok(WorkerRollout {
        worker,
        snapshot: policy.params.version(),
        grads,
        steps: steps.len(),
        total_reward: trace.total_reward(),
        completions: trace.apps.iter().filter_map(|a| a.completion.map(|c| c - a.arrival)).collect(),
        entropy_sum,
    })
}

/// Adds `A_k ∇log π_k + (A_k + V_k − V_k) ∇V_k` for every step to `grads`,
/// plus the entropy bonus when configured. `values` may carry the trailing
/// bootstrap entry.
pub fn backprop_steps(
    policy: &PolicyParameters,
    steps: &[StepRecord],
    advantages: &[f64],
    values: &[f64],
    config: &TrainConfig,
    grads: &mut Gradients,
) -> Result<(), TrainError> {
    for (k, step) in steps.iter().enumerate() {
        let target = advantages[k] + values[k];
        let mut seeds: Vec<(Var, Vec<f64>)> = vec![
            (step.log_prob, vec![advantages[k]]),
            (step.value, vec![target - step.value_estimate()]),
        ];
        if config.entropy_coef > 0.0 {
            seeds.push((step.entropy, vec![config.entropy_coef]));
        }
        step.tape.backward_into(&policy.params, &seeds, grads)?;
    }
    Ok(())
}

/// Sum of worker gradients divided by the total number of decisions.
pub fn aggregate_gradients(rollouts: &[WorkerRollout], param_len: usize) -> Result<Gradients, TrainError> {
    let mut total = Gradients::zeros(param_len);
    let Some(first) = rollouts.first() else {
        return Ok(total);
    };
    let mut steps = 0;
    for r in rollouts {
        if r.snapshot != first.snapshot {
            return Err(TrainError::SnapshotMismatch {
                worker: r.worker,
                expected: first.snapshot,
                got: r.snapshot,
            });
        }
        total.add_assign(&r.grads);
        steps += r.steps;
    }
    if steps > 0 {
        total.scale(1.0 / steps as f64);
    }
    Ok(total)
}

/// Applies an aggregated gradient: ascent on the actor with `lr_actor`, on
/// the critic with `lr_critic`.
pub fn apply_update(policy: &mut PolicyParameters, delta: &Gradients, config: &TrainConfig) -> Result<(), DiffError> {
    let actor = policy.actor_range();
    let critic = policy.critic_range();
    policy.params.ascend(delta, config.lr_actor, actor)?;
    policy.params.ascend(delta, config.lr_critic, critic)
}

/// One full iteration on `state`; returns its report row.
pub fn train_iteration(config: &TrainConfig, env: &TrainEnv, state: &mut TrainState) -> Result<TrainRow, TrainError> {
    let iteration = state.iteration;
    let plan = plan_iteration(config, iteration, state.mu_mean);
    let mut spec = env.workload.clone();
    spec.seed = plan.workload_seed;
    let workload = generate_workload(&spec)?;

    let policy = &state.policy;
    let rollouts: Vec<WorkerRollout> = plan
        .worker_seeds
        .par_iter()
        .enumerate()
        .map(|(w, &seed)| run_worker(policy, &env.servers, &workload, plan.episode_len, w, seed, config))
        .collect::<Result<_, _>>()?;
    let delta = aggregate_gradients(&rollouts, policy.params.len())?;

    let n = rollouts.len() as f64;
    let steps: usize = rollouts.iter().map(|r| r.steps).sum();
    let completions: Vec<f64> = rollouts.iter().flat_map(|r| r.completions.iter().copied()).collect();
    let mean_abs = delta.mean_abs();
    let accepted = mean_abs.is_finite() && mean_abs <= config.grad_ceiling;
    let row = TrainRow {
        iteration,
        mean_return: rollouts.iter().map(|r| r.total_reward).sum::<f64>() / n,
        mean_jct: (!completions.is_empty()).then(|| completions.iter().sum::<f64>() / completions.len() as f64),
        entropy: if steps > 0 {
            rollouts.iter().map(|r| r.entropy_sum).sum::<f64>() / steps as f64
        } else {
            0.0
        },
        grad_norm: delta.norm(state.policy.params.full_range()),
        accepted,
    };
    if accepted {
        apply_update(&mut state.policy, &delta, config).map_err(|_| TrainError::NonFinite(iteration))?;
        if !state.policy.params.all_finite() {
            return Err(TrainError::NonFinite(iteration));
        }
    }
    state.iteration += 1;
    state.mu_mean = config.mu_mean_init + state.iteration as f64 * config.mu_step;
    Ok(row)
}

/// Trains until `config.iterations` iterations have completed in total,
/// calling `observe` after each one.
pub fn train<F>(
    config: &TrainConfig,
    env: &TrainEnv,
    mut state: TrainState,
    mut observe: F,
) -> Result<(TrainState, TrainReport), TrainError>
where
    F: FnMut(&TrainRow, &TrainState) -> Result<(), TrainError>,
{
    config.validate()?;
    env.workload.validate()?;
    let mut report = TrainReport::default();
    let mut rejected_run = 0;
    while state.iteration < config.iterations {
        let row = train_iteration(config, env, &mut state)?;
        rejected_run = if row.accepted { 0 } else { rejected_run + 1 };
        observe(&row, &state)?;
        report.rows.push(row);
        if rejected_run > config.max_rejections {
            return Err(TrainError::Diverged(rejected_run));
        }
    }
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{build_priority_list, ModelConfig, Observation};
    use crate::sim::{ArrivalStream, ClusterState, StageRef, Step};
    use crate::trace::{fixtures, IntRange, WorkDistribution};

    /// `A_k = Σ_j (γλ)^j δ_{k+j}` summed directly.
    fn gae_oracle(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = r.len();
        (0..n)
            .map(|k| {
                let mut total = 0.0;
                let mut w = 1.0;
                for j in k..n {
                    let delta = r[j] + gamma * v[j + 1] - v[j];
                    total += w * delta;
                    w *= gamma * lambda;
                }
                total
            })
            .collect()
    }

    #[test]
    fn gae_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..1.0)).collect();
            let mut v: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
            v.push(0.0);
            let (g, l) = (rng.random_range(0.5..1.0), rng.random_range(0.0..1.0));
            let got = compute_gae(&r, &v, g, l).unwrap();
            for (a, b) in got.iter().zip(gae_oracle(&r, &v, g, l)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, -0.7, 2.0, 0.0];
        let got = compute_gae(&r, &v, 0.9, 0.0).unwrap();
        for k in 0..3 {
            assert_eq!(got[k], r[k] + 0.9 * v[k + 1] - v[k]);
        }
    }

    #[test]
    fn gae_lambda_one_with_zero_values_is_return_to_go() {
        let r = [1.0, -2.0, 0.5, 4.0];
        let got = compute_gae(&r, &[0.0; 5], 0.9, 1.0).unwrap();
        for k in 0..4 {
            let ret: f64 = (k..4).map(|j| 0.9f64.powi((j - k) as i32) * r[j]).sum();
            assert!((got[k] - ret).abs() <= 1e-12);
        }
    }

    #[test]
    fn gae_length_mismatch() {
        assert!(matches!(
            compute_gae(&[1.0, 2.0], &[0.0, 0.0], 0.9, 0.9),
            Err(TrainError::LengthMismatch { rewards: 2, values: 2 })
        ));
    }

    #[test]
    fn episode_length_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_episode_length(100.0, usize::MAX, &mut rng) as f64)
            .sum::<f64>()
            / n as f64;
        // the ceiling adds about one half
        assert!((mean - 100.0).abs() / 100.0 < 0.02, "{mean}");
        assert!((0..1000).all(|_| sample_episode_length(0.01, 10, &mut rng) >= 1));
        assert!((0..1000).all(|_| sample_episode_length(1e6, 10, &mut rng) <= 10));
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| sample_episode_length(20.0, 2000, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    fn tiny_env() -> TrainEnv {
        TrainEnv {
            servers: vec![Server::new(0, 1.5, 2), Server::new(1, 1.0, 2)],
            workload: WorkloadSpec {
                app_count: 4,
                arrival_rate: 0.5,
                stage_count_range: IntRange::new(1, 3),
                task_count_range: IntRange::new(1, 3),
                task_work_distribution: WorkDistribution::LogNormal { mu: 0.0, sigma: 0.5 },
                scale_factors: vec![1.0],
                target_load: 0.4,
                seed: 0,
            },
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            num_agents: 3,
            mu_mean_init: 5.0,
            mu_step: 0.5,
            iterations: 4,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn tiny_state(config: &TrainConfig) -> TrainState {
        let policy = PolicyParameters::new(ModelConfig::new(4), 1).unwrap();
        TrainState::new(policy, config)
    }

    #[test]
    fn zero_rates_leave_parameters_unchanged() {
        let config = TrainConfig {
            lr_actor: 0.0,
            lr_critic: 0.0,
            ..tiny_config()
        };
        let state = tiny_state(&config);
        let before = state.policy.params.values().to_vec();
        let (after, report) = train(&config, &tiny_env(), state, |_, _| Ok(())).unwrap();
        assert_eq!(after.policy.params.values(), before.as_slice());
        assert_eq!(report.rows.len(), 4);
    }

    #[test]
    fn curriculum_adds_step_each_iteration() {
        let config = tiny_config();
        let (after, report) = train(&config, &tiny_env(), tiny_state(&config), |_, _| Ok(())).unwrap();
        assert_eq!(after.mu_mean, config.mu_mean_init + 4.0 * config.mu_step);
        let idx: Vec<usize> = report.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let config = tiny_config();
        let (a, ra) = train(&config, &tiny_env(), tiny_state(&config), |_, _| Ok(())).unwrap();
        let (b, rb) = train(&config, &tiny_env(), tiny_state(&config), |_, _| Ok(())).unwrap();
        assert_eq!(a.policy.params.values(), b.policy.params.values());
        assert_eq!(ra, rb);

        let half = TrainConfig {
            iterations: 2,
            ..config.clone()
        };
        let (mid, _) = train(&half, &tiny_env(), tiny_state(&config), |_, _| Ok(())).unwrap();
        let (resumed, rr) = train(&config, &tiny_env(), mid, |_, _| Ok(())).unwrap();
        assert_eq!(rr.rows[0].iteration, 2);
        assert_eq!(resumed.policy.params.values(), a.policy.params.values());
    }

    #[test]
    fn parallel_workers_equal_sequential_replay() {
        let config = tiny_config();
        let env = tiny_env();
        let mut state = tiny_state(&config);
        let start = state.clone();
        train_iteration(&config, &env, &mut state).unwrap();

        let plan = plan_iteration(&config, 0, start.mu_mean);
        let mut spec = env.workload.clone();
        spec.seed = plan.workload_seed;
        let wl = generate_workload(&spec).unwrap();
        let mut manual = start.policy.clone();
        let mut rollouts = Vec::new();
        for (w, &seed) in plan.worker_seeds.iter().enumerate() {
            rollouts.push(run_worker(&manual, &env.servers, &wl, plan.episode_len, w, seed, &config).unwrap());
        }
        let delta = aggregate_gradients(&rollouts, manual.params.len()).unwrap();
        apply_update(&mut manual, &delta, &config).unwrap();
        assert_eq!(manual.params.values(), state.policy.params.values());
    }

    #[test]
    fn identical_workers_aggregate_to_one() {
        let config = tiny_config();
        let env = tiny_env();
        let state = tiny_state(&config);
        let wl = generate_workload(&env.workload).unwrap();
        let one = run_worker(&state.policy, &env.servers, &wl, 20, 0, 5, &config).unwrap();
        let single = aggregate_gradients(std::slice::from_ref(&one), state.policy.params.len()).unwrap();
        let many = aggregate_gradients(&[one.clone(), one.clone(), one], state.policy.params.len()).unwrap();
        for (a, b) in single.values().iter().zip(many.values()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn snapshot_mismatch_is_refused() {
        let config = tiny_config();
        let env = tiny_env();
        let mut state = tiny_state(&config);
        let wl = generate_workload(&env.workload).unwrap();
        let a = run_worker(&state.policy, &env.servers, &wl, 5, 0, 1, &config).unwrap();
        state.policy.params.set(0, 0.5);
        let b = run_worker(&state.policy, &env.servers, &wl, 5, 1, 1, &config).unwrap();
        assert!(matches!(
            aggregate_gradients(&[a, b], state.policy.params.len()),
            Err(TrainError::SnapshotMismatch { worker: 1, .. })
        ));
    }

    #[test]
    fn zero_advantages_give_zero_update() {
        let config = tiny_config();
        let env = tiny_env();
        let policy = PolicyParameters::new(ModelConfig::new(4), 3).unwrap();
        let wl = generate_workload(&env.workload).unwrap();
        let mut agent = LearnedPolicy::recording(&policy, 9);
        let opts = EpisodeOptions {
            max_limit: Some(4),
            ..Default::default()
        };
        run_episode(&mut agent, &wl, &env.servers, Horizon::actions(15), opts).unwrap();
        let steps = agent.into_steps();
        assert!(!steps.is_empty());
        let values: Vec<f64> = steps.iter().map(|s| s.value_estimate()).collect();
        let mut grads = Gradients::zeros(policy.params.len());
        backprop_steps(&policy, &steps, &vec![0.0; steps.len()], &values, &config, &mut grads).unwrap();
        assert!(grads.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn guard_rejects_huge_gradients() {
        let config = TrainConfig {
            grad_ceiling: 1e-300,
            max_rejections: 1,
            ..tiny_config()
        };
        let state = tiny_state(&config);
        let before = state.policy.params.values().to_vec();
        let err = train(&config, &tiny_env(), state, |row, st| {
            assert!(!row.accepted);
            assert_eq!(st.policy.params.values(), before.as_slice());
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, TrainError::Diverged(2)));
    }

    #[test]
    fn report_csv_layout() {
        let report = TrainReport {
            rows: vec![TrainRow {
                iteration: 0,
                mean_return: -3.5,
                mean_jct: None,
                entropy: 1.25,
                grad_norm: 0.5,
                accepted: true,
            }],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,mean_return,mean_jct,entropy,grad_norm\n0,-3.5,NA,1.25,0.5\n"
        );
    }

    /// Probability of serving the short job first in the two-job bandit.
    fn short_first_probability(policy: &PolicyParameters, servers: &[Server], wl: &[ApplicationDag]) -> f64 {
        let mut state = ClusterState::new(servers.to_vec()).unwrap().with_max_limit(policy.max_limit());
        let mut stream = ArrivalStream::new(wl.to_vec()).unwrap();
        while state.next_event_time(&stream) == Some(0.0) {
            assert!(matches!(state.advance(&mut stream), Step::Advanced(_)));
        }
        let cands = state.schedulable_set();
        let mut obs = Observation::from_state(&state, &cands, policy).unwrap();
        let list = build_priority_list(&mut obs, policy).unwrap();
        list.entries()
            .iter()
            .filter(|e| e.stage == StageRef::new(0, 0))
            .map(|e| e.probability)
            .sum()
    }

    #[test]
    fn bandit_probability_of_better_action_rises() {
        // one executor, a short and a long job: serving the short one first
        // costs 1 + 6 = 7 instead of 5 + 6 = 11
        let servers = vec![Server::new(0, 1.0, 1)];
        let wl = vec![fixtures::single_stage(0, 0.0, 1, 1.0), fixtures::single_stage(1, 0.0, 1, 5.0)];
        let config = TrainConfig {
            num_agents: 16,
            lr_actor: 0.02,
            lr_critic: 0.01,
            mu_mean_init: 10.0,
            ..TrainConfig::default()
        };
        let mut curves = Vec::new();
        for seed in 0..5 {
            let mut policy = PolicyParameters::new(ModelConfig::new(1), seed).unwrap();
            let mut curve = vec![short_first_probability(&policy, &servers, &wl)];
            for it in 0..100 {
                let plan = plan_iteration(&TrainConfig { seed, ..config.clone() }, it, config.mu_mean_init);
                let rollouts: Vec<WorkerRollout> = plan
                    .worker_seeds
                    .iter()
                    .enumerate()
                    .map(|(w, &s)| run_worker(&policy, &servers, &wl, 10, w, s, &config).unwrap())
                    .collect();
                let delta = aggregate_gradients(&rollouts, policy.params.len()).unwrap();
                apply_update(&mut policy, &delta, &config).unwrap();
                curve.push(short_first_probability(&policy, &servers, &wl));
            }
            curves.push(curve);
        }
        let median: Vec<f64> = (0..=100)
            .map(|i| {
                let mut v: Vec<f64> = curves.iter().map(|c| c[i]).collect();
                v.sort_by(f64::total_cmp);
                v[2]
            })
            .collect();
        assert!(median[100] > median[0] + 0.1, "{} → {}", median[0], median[100]);
        let checkpoints: Vec<f64> = median.iter().step_by(10).copied().collect();
        // saturated probabilities jitter in the fourth decimal
        assert!(checkpoints.windows(2).all(|w| w[1] >= w[0] - 1e-3), "{checkpoints:?}");
    }
}
