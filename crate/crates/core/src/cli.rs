//! Command-line surface: `generate`, `train`, `evaluate` and `compare`.
//!
//! Every command loads a [`RunConfig`] (TOML, or the built-in default),
//! applies flag overrides, validates everything, and only then touches the
//! filesystem. Exit codes: 0 success, 1 validation error, 2 runtime error.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{LearnedPolicy, ModelConfig, PolicyParameters};
use crate::baselines::{HeuristicKind, HeuristicPolicy};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::gnn::FeatureScale;
use crate::recipes;
use crate::sim::{cluster_capacity, metrics, run_episode, total_executors, EpisodeOptions, Horizon, Metrics, Policy, Server};
use crate::trace::{calibrate_arrival_rate, expected_app_work, generate_workload, load_trace, save_trace, ApplicationDag, WorkloadSpec};
use crate::train::{train, write_row, TrainConfig, TrainEnv, TrainError, TrainReport, TrainState};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn invalid(msg: impl fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

fn runtime(msg: impl fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| runtime(format!("cannot write {}: {e}", path.display()))
}

/// A scheduler selectable on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchedulerName {
    Learned,
    Heuristic(HeuristicKind),
}

impl SchedulerName {
    pub const ALL: [SchedulerName; 5] = [
        SchedulerName::Learned,
        SchedulerName::Heuristic(HeuristicKind::RoundRobin),
        SchedulerName::Heuristic(HeuristicKind::FairShare),
        SchedulerName::Heuristic(HeuristicKind::CriticalPath),
        SchedulerName::Heuristic(HeuristicKind::Random),
    ];
}

impl fmt::Display for SchedulerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerName::Learned => f.write_str("learned"),
            SchedulerName::Heuristic(k) => f.write_str(k.short_name()),
        }
    }
}

impl FromStr for SchedulerName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "learned" {
            return Ok(SchedulerName::Learned);
        }
        s.parse::<HeuristicKind>()
            .map(SchedulerName::Heuristic)
            .map_err(|_| format!("unknown scheduler `{s}` (expected learned, rr, fair, cp or random)"))
    }
}

impl TryFrom<String> for SchedulerName {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SchedulerName> for String {
    fn from(s: SchedulerName) -> Self {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub servers: Vec<Server>,
}

/// Where applications come from: a synthetic spec or a trace file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub spec: Option<WorkloadSpec>,
    pub trace: Option<PathBuf>,
    /// Recompute `spec.arrival_rate` from `spec.target_load` and the cluster.
    #[serde(default = "yes")]
    pub calibrate: bool,
}

fn yes() -> bool {
    true
}

/// Network shape knobs; the action space follows the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelKnobs {
    /// Hidden widths of the task, limit and value heads, ending in 1.
    pub scorer_dims: Vec<usize>,
    pub embed_hidden: Vec<usize>,
    pub attention_hidden: Vec<usize>,
    pub max_depth: usize,
    /// Largest parallelism limit; total executors when absent.
    pub max_limit: Option<usize>,
}

impl Default for ModelKnobs {
    fn default() -> Self {
        let m = ModelConfig::new(1);
        Self {
            scorer_dims: m.scorer_dims,
            embed_hidden: m.embed_hidden,
            attention_hidden: m.attention_hidden,
            max_depth: m.max_depth,
            max_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Episodes per seed; each draws its own workload from the spec.
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub scheduler: SchedulerName,
    pub checkpoint: Option<PathBuf>,
    /// Rows of the `compare` table.
    pub compare: Vec<SchedulerName>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 1,
            seeds: vec![0],
            scheduler: SchedulerName::Heuristic(HeuristicKind::RoundRobin),
            checkpoint: None,
            compare: SchedulerName::ALL.to_vec(),
        }
    }
}

/// Everything one invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub cluster: ClusterConfig,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub model: ModelKnobs,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    /// The desk cluster with a 1000-application synthetic stream at 40% load.
    fn default() -> Self {
        let servers = recipes::desk_cluster();
        let spec = recipes::desk_workload(1000, 0.4, &servers, 0).expect("desk recipe is valid");
        Self {
            out: default_out(),
            cluster: ClusterConfig { servers },
            workload: WorkloadConfig {
                spec: Some(spec),
                trace: None,
                calibrate: true,
            },
            model: ModelKnobs::default(),
            train: TrainConfig {
                reward_scale: recipes::DESK_REWARD_SCALE,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string().trim_end()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    /// Checks every field and referenced file; recalibrates the arrival rate.
    pub fn validate(&mut self) -> Result<(), CliError> {
        let servers = &self.cluster.servers;
        if servers.is_empty() {
            return Err(invalid("cluster.servers is empty"));
        }
        for s in servers {
            if !(s.speed.is_finite() && s.speed > 0.0) || s.executor_count == 0 {
                return Err(invalid(format!("server {} needs a positive speed and executor_count", s.server_id)));
            }
        }
        match (&mut self.workload.spec, &self.workload.trace) {
            (Some(spec), None) => {
                if self.workload.calibrate {
                    spec.arrival_rate = 1.0;
                    spec.validate().map_err(invalid)?;
                    spec.arrival_rate = calibrate_arrival_rate(spec, cluster_capacity(servers)).map_err(invalid)?;
                }
                spec.validate().map_err(invalid)?;
            }
            (None, Some(path)) => {
                if !path.is_file() {
                    return Err(invalid(format!("trace file {} does not exist", path.display())));
                }
            }
            _ => return Err(invalid("workload needs exactly one of `spec` or `trace`")),
        }
        self.model_config()?.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        if self.eval.episodes == 0 {
            return Err(invalid("eval.episodes must be positive"));
        }
        if self.eval.seeds.is_empty() {
            return Err(invalid("eval.seeds is empty"));
        }
        if let Some(path) = &self.eval.checkpoint {
            if !path.is_file() {
                return Err(invalid(format!("checkpoint {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let total = total_executors(&self.cluster.servers);
        let max_limit = self.model.max_limit.unwrap_or(total);
        if max_limit > total {
            return Err(invalid(format!(
                "model.max_limit {max_limit} exceeds the {total} executors of the cluster"
            )));
        }
        let feature_scale = match &self.workload.spec {
            Some(spec) => FeatureScale::from_spec(spec),
            None => FeatureScale::unit(),
        };
        Ok(ModelConfig {
            scorer_dims: self.model.scorer_dims.clone(),
            embed_hidden: self.model.embed_hidden.clone(),
            attention_hidden: self.model.attention_hidden.clone(),
            max_depth: self.model.max_depth,
            max_limit,
            feature_scale,
        })
    }

    /// The applications of one evaluation episode.
    fn eval_workload(&self, seed: u64, episode: usize) -> Result<Vec<ApplicationDag>, CliError> {
        match (&self.workload.spec, &self.workload.trace) {
            (Some(spec), _) => {
                let mut spec = spec.clone();
                spec.seed = episode_seed(seed, episode);
                generate_workload(&spec).map_err(runtime)
            }
            (None, Some(path)) => load_trace(path).map_err(runtime),
            (None, None) => Err(invalid("workload needs exactly one of `spec` or `trace`")),
        }
    }
}

/// Workload seed of evaluation `episode` under `seed`; episode 0 uses `seed` itself.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    if episode == 0 {
        return seed;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng.random()
}

#[derive(Debug, Parser)]
#[command(name = "streamsched", version, about = "Simulate, train and compare DAG schedulers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic workload as a trace file.
    Generate(CommonArgs),
    /// Train the learned scheduler.
    Train(TrainArgs),
    /// Evaluate one scheduler: per-app JCTs, summary and CDF.
    Evaluate(CommonArgs),
    /// Evaluate several schedulers on the same episodes.
    Compare(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration; the built-in desk setup when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Offered load as a fraction of cluster capacity.
    #[arg(long, value_parser = parse_load)]
    pub workload: Option<f64>,
    /// Scheduler to evaluate; repeat to choose the rows of `compare`.
    #[arg(long)]
    pub scheduler: Vec<SchedulerName>,
    /// Policy checkpoint for the learned scheduler.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub agents: Option<usize>,
    /// Write `checkpoint-<iteration>.json` every N iterations.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

fn parse_load(s: &str) -> Result<f64, String> {
    match s {
        "0.2" | "0.4" | "0.6" | "0.8" => Ok(s.parse().unwrap()),
        _ => Err(format!("`{s}` is not one of 0.2, 0.4, 0.6, 0.8")),
    }
}

impl CommonArgs {
    /// Loads the config and applies the flag overrides, then validates.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(seed) = self.seed {
            if let Some(spec) = &mut config.workload.spec {
                spec.seed = seed;
            }
            config.train.seed = seed;
            config.eval.seeds = vec![seed];
        }
        if let Some(load) = self.workload {
            let spec = config
                .workload
                .spec
                .as_mut()
                .ok_or_else(|| invalid("--workload needs a synthetic workload spec, not a trace file"))?;
            spec.target_load = load;
            config.workload.calibrate = true;
        }
        match self.scheduler.as_slice() {
            [] => {}
            [one] => {
                config.eval.scheduler = *one;
                config.eval.compare = vec![*one];
            }
            many => config.eval.compare = many.to_vec(),
        }
        if let Some(path) = &self.checkpoint {
            config.eval.checkpoint = Some(path.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(message) => {
            println!("{message}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns its one-line report.
pub fn run(command: &Command) -> Result<String, CliError> {
    match command {
        Command::Generate(args) => cmd_generate(&args.resolve()?).map(|g| g.summary),
        Command::Train(args) => {
            let (config, opts) = resolve_train(args)?;
            let report = cmd_train(&config, &opts)?;
            Ok(format!(
                "trained {} iterations ({} rejected); report and checkpoint in {}",
                report.rows.len(),
                report.rejected().count(),
                config.out.display()
            ))
        }
        Command::Evaluate(args) => {
            let config = args.resolve()?;
            let summary = cmd_evaluate(&config)?;
            Ok(format!(
                "{}: mean JCT {} over {} applications, utilization {:.4}",
                config.eval.scheduler,
                fmt_opt(summary.mean_jct),
                summary.finished,
                summary.utilization
            ))
        }
        Command::Compare(args) => {
            let rows = cmd_compare(&args.resolve()?)?;
            let lines: Vec<String> = rows
                .iter()
                .map(|r| format!("{:<8} {}", r.scheduler.to_string(), fmt_opt(r.mean_jct)))
                .collect();
            Ok(lines.join("\n"))
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

pub struct Generated {
    pub path: PathBuf,
    pub summary: String,
}

/// Writes `<out>/trace.jsonl`.
pub fn cmd_generate(config: &RunConfig) -> Result<Generated, CliError> {
    let spec = config
        .workload
        .spec
        .as_ref()
        .ok_or_else(|| invalid("generate needs a synthetic workload spec"))?;
    let apps = generate_workload(spec).map_err(runtime)?;
    fs::create_dir_all(&config.out).map_err(write_err(&config.out))?;
    let path = config.out.join("trace.jsonl");
    save_trace(&path, &apps).map_err(runtime)?;
    let capacity = cluster_capacity(&config.cluster.servers);
    let offered = expected_app_work(spec) * spec.arrival_rate / capacity;
    let work: f64 = apps.iter().map(|a| a.total_work()).sum();
    let span = apps.last().map(|a| a.arrival_time).unwrap_or(0.0);
    let realized = if span > 0.0 { work / span / capacity } else { 0.0 };
    Ok(Generated {
        summary: format!(
            "wrote {} applications to {} (arrival rate {:.6}/s, offered load {:.3}, realized {:.3})",
            apps.len(),
            path.display(),
            spec.arrival_rate,
            offered,
            realized
        ),
        path,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

fn resolve_train(args: &TrainArgs) -> Result<(RunConfig, TrainOptions), CliError> {
    // --checkpoint names the state to resume from, not an evaluation policy
    let mut common = args.common.clone();
    let resume = common.checkpoint.take();
    let mut config = common.resolve()?;
    if let Some(n) = args.iterations {
        config.train.iterations = n;
    }
    if let Some(n) = args.agents {
        config.train.num_agents = n;
    }
    config.train.validate().map_err(invalid)?;
    if let Some(path) = &resume {
        if !path.is_file() {
            return Err(invalid(format!("checkpoint {} does not exist", path.display())));
        }
    }
    if args.checkpoint_every == Some(0) {
        return Err(invalid("--checkpoint-every must be positive"));
    }
    Ok((
        config,
        TrainOptions {
            resume,
            checkpoint_every: args.checkpoint_every,
        },
    ))
}

/// Trains, writing `train.csv`, periodic checkpoints and `checkpoint.json`.
pub fn cmd_train(config: &RunConfig, opts: &TrainOptions) -> Result<TrainReport, CliError> {
    let workload = config
        .workload
        .spec
        .clone()
        .ok_or_else(|| invalid("training needs a synthetic workload spec"))?;
    let env = TrainEnv {
        servers: config.cluster.servers.clone(),
        workload,
    };
    let model = config.model_config()?;
    let state = match &opts.resume {
        Some(path) => {
            let state = Checkpoint::load(path).and_then(Checkpoint::into_state).map_err(invalid)?;
            if state.policy.config.max_limit > total_executors(&env.servers) {
                return Err(invalid("checkpoint policy needs more executors than the cluster has"));
            }
            state
        }
        None => TrainState::new(PolicyParameters::new(model, config.train.seed).map_err(invalid)?, &config.train),
    };

    fs::create_dir_all(&config.out).map_err(write_err(&config.out))?;
    let csv_path = config.out.join("train.csv");
    let file = fs::File::create(&csv_path).map_err(write_err(&csv_path))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "iteration,mean_return,mean_jct,entropy,grad_norm").map_err(write_err(&csv_path))?;
    let out = config.out.clone();
    let every = opts.checkpoint_every;
    let result = train(&config.train, &env, state, |row, state| {
        write_row(&mut csv, row)?;
        if let Some(n) = every {
            if state.iteration % n == 0 {
                let path = out.join(format!("checkpoint-{}.json", state.iteration));
                Checkpoint::from_state(state).save(&path).map_err(ckpt_io)?;
            }
        }
        Ok(())
    });
    csv.flush().map_err(write_err(&csv_path))?;
    let (state, report) = result.map_err(|e| match e {
        TrainError::Diverged(n) => runtime(format!("training diverged: the gradient guard rejected {n} consecutive iterations")),
        other => runtime(other),
    })?;
    let path = config.out.join("checkpoint.json");
    Checkpoint::from_state(&state).save(&path).map_err(runtime)?;
    Ok(report)
}

fn ckpt_io(e: CheckpointError) -> TrainError {
    TrainError::Io(std::io::Error::other(e.to_string()))
}

/// Aggregate over all evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean_jct: Option<f64>,
    pub finished: usize,
    pub unfinished: usize,
    pub utilization: f64,
}

/// One evaluation episode's metrics.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub seed: u64,
    pub episode: usize,
    pub metrics: Metrics,
}

fn load_policy(config: &RunConfig) -> Result<PolicyParameters, CliError> {
    let path = config
        .eval
        .checkpoint
        .as_ref()
        .ok_or_else(|| invalid("the learned scheduler needs --checkpoint"))?;
    let policy = Checkpoint::load(path).and_then(|c| c.policy()).map_err(invalid)?;
    let total = total_executors(&config.cluster.servers);
    if policy.max_limit() > total {
        return Err(invalid(format!(
            "checkpoint expects {} executors but the cluster has {total}",
            policy.max_limit()
        )));
    }
    Ok(policy)
}

/// Greedy evaluation of `scheduler` over every (seed, episode).
pub fn evaluate_scheduler(
    config: &RunConfig,
    scheduler: SchedulerName,
    policy: Option<&PolicyParameters>,
) -> Result<Vec<EpisodeResult>, CliError> {
    let servers = &config.cluster.servers;
    let mut results = Vec::new();
    for &seed in &config.eval.seeds {
        for episode in 0..config.eval.episodes {
            let workload = config.eval_workload(seed, episode)?;
            let mut options = EpisodeOptions::default();
            let mut agent: Box<dyn Policy + '_> = match scheduler {
                SchedulerName::Learned => {
                    let policy = policy.ok_or_else(|| invalid("the learned scheduler needs --checkpoint"))?;
                    options.max_limit = Some(policy.max_limit());
                    Box::new(LearnedPolicy::greedy(policy))
                }
                SchedulerName::Heuristic(kind) => Box::new(HeuristicPolicy::with_options(kind, None, episode_seed(seed, episode))),
            };
            let trace = run_episode(agent.as_mut(), &workload, servers, Horizon::unbounded(), options).map_err(runtime)?;
            results.push(EpisodeResult {
                seed,
                episode,
                metrics: metrics(&trace, servers),
            });
        }
    }
    Ok(results)
}

pub fn summarize(results: &[EpisodeResult]) -> EvalSummary {
    let jcts: Vec<f64> = all_jcts(results);
    let finished = jcts.len();
    let unfinished = results.iter().map(|r| r.metrics.unfinished).sum();
    let utilization = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.metrics.utilization).sum::<f64>() / results.len() as f64
    };
    EvalSummary {
        mean_jct: (finished > 0).then(|| jcts.iter().sum::<f64>() / finished as f64),
        finished,
        unfinished,
        utilization,
    }
}

fn all_jcts(results: &[EpisodeResult]) -> Vec<f64> {
    results
        .iter()
        .flat_map(|r| r.metrics.per_app.iter().filter_map(|a| a.jct))
        .collect()
}

/// Sorted completion times with cumulative fractions `k/n`.
pub fn cdf_table(jcts: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = jcts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.into_iter().enumerate().map(|(k, v)| (v, (k + 1) as f64 / n)).collect()
}

/// Writes `jct.csv`, `summary.csv` and `cdf.csv` under the output directory.
pub fn cmd_evaluate(config: &RunConfig) -> Result<EvalSummary, CliError> {
    let scheduler = config.eval.scheduler;
    let policy = match scheduler {
        SchedulerName::Learned => Some(load_policy(config)?),
        SchedulerName::Heuristic(_) => None,
    };
    let results = evaluate_scheduler(config, scheduler, policy.as_ref())?;
    let summary = summarize(&results);

    fs::create_dir_all(&config.out).map_err(write_err(&config.out))?;
    let path = config.out.join("jct.csv");
    write_csv(&path, |out| {
        writeln!(out, "seed,episode,app_id,arrival,completion,jct")?;
        for r in &results {
            for a in &r.metrics.per_app {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.seed,
                    r.episode,
                    a.app_id,
                    a.arrival,
                    a.completion.map(|v| v.to_string()).unwrap_or_default(),
                    a.jct.map(|v| v.to_string()).unwrap_or_default()
                )?;
            }
        }
        Ok(())
    })?;

    let path = config.out.join("summary.csv");
    write_csv(&path, |out| {
        writeln!(out, "scheduler,seed,episode,finished,unfinished,mean_jct,utilization")?;
        for r in &results {
            let m = &r.metrics;
            writeln!(
                out,
                "{scheduler},{},{},{},{},{},{}",
                r.seed,
                r.episode,
                m.finished,
                m.unfinished,
                fmt_opt(m.avg_completion),
                m.utilization
            )?;
        }
        writeln!(
            out,
            "{scheduler},all,all,{},{},{},{}",
            summary.finished,
            summary.unfinished,
            fmt_opt(summary.mean_jct),
            summary.utilization
        )
    })?;

    let path = config.out.join("cdf.csv");
    let cdf = cdf_table(&all_jcts(&results));
    write_csv(&path, |out| {
        writeln!(out, "jct,cumulative_fraction")?;
        for (v, f) in &cdf {
            writeln!(out, "{v},{f}")?;
        }
        Ok(())
    })?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub scheduler: SchedulerName,
    pub mean_jct: Option<f64>,
    pub utilization: f64,
}

/// Writes `compare.csv`: one row per scheduler on the shared episodes.
pub fn cmd_compare(config: &RunConfig) -> Result<Vec<CompareRow>, CliError> {
    let wants_learned = config.eval.compare.contains(&SchedulerName::Learned);
    let policy = match (wants_learned, &config.eval.checkpoint) {
        (true, Some(_)) => Some(load_policy(config)?),
        _ => None,
    };
    // without a checkpoint the learned row is skipped rather than failing the table
    let schedulers: Vec<SchedulerName> = config
        .eval
        .compare
        .iter()
        .copied()
        .filter(|s| *s != SchedulerName::Learned || policy.is_some())
        .collect();
    if schedulers.is_empty() {
        return Err(invalid("nothing to compare: the learned scheduler needs --checkpoint"));
    }
    let mut rows = Vec::new();
    for &s in &schedulers {
        let summary = summarize(&evaluate_scheduler(config, s, policy.as_ref())?);
        rows.push(CompareRow {
            scheduler: s,
            mean_jct: summary.mean_jct,
            utilization: summary.utilization,
        });
    }
    fs::create_dir_all(&config.out).map_err(write_err(&config.out))?;
    let path = config.out.join("compare.csv");
    write_csv(&path, |out| {
        writeln!(out, "scheduler,completion_time,utilization")?;
        for r in &rows {
            writeln!(out, "{},{},{}", r.scheduler, fmt_opt(r.mean_jct), r.utilization)?;
        }
        Ok(())
    })?;
    Ok(rows)
}

fn write_csv(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(write_err(path))?;
    let mut out = BufWriter::new(file);
    body(&mut out).and_then(|_| out.flush()).map_err(write_err(path))
}
