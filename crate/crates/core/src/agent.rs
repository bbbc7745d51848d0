//! Actor-critic scheduling agent.
//!
//! The actor scores every schedulable stage with `q(H, y, z)` and every
//! parallelism limit of an application with `w(y, z, l)`. The product of the
//! two softmax probabilities gives the priority list that actions are drawn
//! from. The critic reads the global embedding (detached from the graph
//! network) plus a few cluster counters.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{Activation, DenseNet, DiffError, Gradients, LayoutBuilder, ParamRange, Params, Tape, Var};
use crate::gnn::{embed_all, AppGraph, EmbeddingSet, EmbeddingVars, FeatureScale, GnnError, GnnParams, FEATURE_DIM};
use crate::sim::{ClusterState, DecisionPoint, Policy, PolicyError, SchedAction, StageRef};

/// Width of the counter summary the critic sees next to `z`.
pub const SUMMARY_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("observation was built for parameter version {observation}, parameters are at {params}")]
    StaleObservation { observation: u64, params: u64 },
    #[error("no schedulable stage")]
    NoCandidates,
    #[error("application {0} is not active")]
    UnknownApp(u64),
    #[error("action {0:?} is not legal here")]
    IllegalAction(SchedAction),
    #[error("cluster allows limits up to {cluster}, policy uses up to {policy}")]
    LimitMismatch { cluster: usize, policy: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Network widths and action space of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Layer widths after the input for `q`, `w` and the critic; must end in 1.
    pub scorer_dims: Vec<usize>,
    /// Hidden widths of the graph transforms `f` and `g`.
    pub embed_hidden: Vec<usize>,
    /// Hidden widths of the attention scorers.
    pub attention_hidden: Vec<usize>,
    pub max_depth: usize,
    /// Largest parallelism limit; limits are `1..=max_limit`.
    pub max_limit: usize,
    pub feature_scale: FeatureScale,
}

impl ModelConfig {
    pub fn new(max_limit: usize) -> Self {
        Self {
            scorer_dims: vec![32, 16, 8, 1],
            embed_hidden: vec![16, 8],
            attention_hidden: vec![8],
            max_depth: 8,
            max_limit,
            feature_scale: FeatureScale::unit(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if self.scorer_dims.last() != Some(&1) {
            return bad("scorer_dims must end in 1");
        }
        if self.scorer_dims.contains(&0) || self.embed_hidden.contains(&0) || self.attention_hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if self.max_limit == 0 {
            return bad("max_limit must be positive");
        }
        let s = &self.feature_scale;
        if ![s.tasks, s.work, s.data].iter().all(|v| v.is_finite() && *v > 0.0) {
            return bad("feature scales must be positive");
        }
        Ok(())
    }
}

/// Every trainable weight of the agent, with the layout that reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub config: ModelConfig,
    pub gnn: GnnParams,
    pub task_scorer: DenseNet,
    pub limit_scorer: DenseNet,
    pub critic: DenseNet,
    pub limits: Vec<usize>,
    pub params: Params,
}

impl PolicyParameters {
    /// All-zero weights: every score is 0 and every distribution uniform.
    pub fn zeros(config: ModelConfig) -> Result<Self, AgentError> {
        config.validate()?;
        let mut b = LayoutBuilder::new();
        let gnn = GnnParams::layout(&mut b, &config.embed_hidden, &config.attention_hidden, config.max_depth);
        let scorer = |b: &mut LayoutBuilder, input: usize| {
            let mut dims = vec![input];
            dims.extend_from_slice(&config.scorer_dims);
            b.dense(dims, Activation::LeakyRelu)
        };
        let task_scorer = scorer(&mut b, 3 * FEATURE_DIM);
        let limit_scorer = scorer(&mut b, 2 * FEATURE_DIM + 1);
        // critic last, so the actor owns one contiguous prefix
        let critic = scorer(&mut b, FEATURE_DIM + SUMMARY_DIM);
        let limits = (1..=config.max_limit).collect();
        Ok(Self {
            params: Params::zeros(b.len()),
            config,
            gnn,
            task_scorer,
            limit_scorer,
            critic,
            limits,
        })
    }

    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, AgentError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.gnn.init(&mut p.params, &mut rng);
        p.task_scorer.init(&mut p.params, &mut rng);
        p.limit_scorer.init(&mut p.params, &mut rng);
        p.critic.init(&mut p.params, &mut rng);
        // both heads start uniform
        for net in [&p.task_scorer, &p.limit_scorer] {
            net.zero_layer(&mut p.params, net.layer_count() - 1);
        }
        Ok(p)
    }

    pub fn actor_range(&self) -> ParamRange {
        ParamRange {
            start: 0,
            len: self.critic.range().start,
        }
    }

    pub fn critic_range(&self) -> ParamRange {
        self.critic.range()
    }

    pub fn max_limit(&self) -> usize {
        self.config.max_limit
    }
}

/// A decision state with its embeddings recorded on a private tape.
#[derive(Debug, Clone)]
pub struct Observation {
    tape: Tape,
    embeddings: EmbeddingVars,
    candidates: Vec<StageRef>,
    holdings: BTreeMap<u64, usize>,
    idle: usize,
    clock: f64,
    summary: Vec<f64>,
}

impl Observation {
    pub fn build(point: &DecisionPoint<'_>, policy: &PolicyParameters) -> Result<Self, AgentError> {
        Self::from_state(point.state, point.candidates, policy)
    }

    pub fn from_state(state: &ClusterState, candidates: &[StageRef], policy: &PolicyParameters) -> Result<Self, AgentError> {
        let total = state.total_executors();
        let scale = &policy.config.feature_scale;
        let graphs: Vec<AppGraph> = state
            .active_apps()
            .values()
            .map(|a| AppGraph::from_runtime(a, total, scale))
            .collect();
        let mut tape = Tape::new(&policy.params);
        let embeddings = embed_all(&mut tape, &policy.params, &policy.gnn, &graphs)?;
        let remaining: f64 = state.active_apps().values().map(|a| a.remaining_work()).sum();
        let summary = vec![
            state.in_system() as f64 / 10.0,
            remaining / (scale.data * 10.0),
            state.idle_total() as f64 / total.max(1) as f64,
            candidates.len() as f64 / 10.0,
        ];
        Ok(Self {
            tape,
            embeddings,
            candidates: candidates.to_vec(),
            holdings: state.active_apps().iter().map(|(&id, a)| (id, a.held)).collect(),
            idle: state.idle_total(),
            clock: state.clock(),
            summary,
        })
    }

    pub fn embeddings(&self) -> EmbeddingSet {
        self.embeddings.values(&self.tape)
    }

    pub fn candidates(&self) -> &[StageRef] {
        &self.candidates
    }

    pub fn holdings(&self) -> &BTreeMap<u64, usize> {
        &self.holdings
    }

    pub fn idle(&self) -> usize {
        self.idle
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    fn check_fresh(&self, policy: &PolicyParameters) -> Result<(), AgentError> {
        if self.tape.version() != policy.params.version() {
            return Err(AgentError::StaleObservation {
                observation: self.tape.version(),
                params: policy.params.version(),
            });
        }
        Ok(())
    }

    fn task_score_vars(&mut self, policy: &PolicyParameters) -> Result<Vec<Var>, AgentError> {
        self.check_fresh(policy)?;
        let mut out = Vec::with_capacity(self.candidates.len());
        for c in &self.candidates {
            let app = self.embeddings.app(c.app_id).ok_or(AgentError::UnknownApp(c.app_id))?;
            let h = *app
                .nodes
                .get(c.stage_id as usize)
                .ok_or(AgentError::IllegalAction(SchedAction { stage: *c, limit: 1 }))?;
            let input = self.tape.concat(&[h, app.dag, self.embeddings.global]);
            out.push(policy.task_scorer.forward(&mut self.tape, &policy.params, input)?);
        }
        Ok(out)
    }

    /// Limits that can place at least one task for `app_id`: those above
    /// its current holding. Falls back to every limit when none qualifies.
    fn allowed_limits(&self, app_id: u64, policy: &PolicyParameters) -> Vec<usize> {
        let held = self.holdings.get(&app_id).copied().unwrap_or(0);
        let above: Vec<usize> = policy.limits.iter().copied().filter(|&l| l > held).collect();
        if above.is_empty() {
            policy.limits.clone()
        } else {
            above
        }
    }

    fn limit_score_vars(&mut self, app_id: u64, limits: &[usize], policy: &PolicyParameters) -> Result<Vec<Var>, AgentError> {
        self.check_fresh(policy)?;
        let y = self.embeddings.app(app_id).ok_or(AgentError::UnknownApp(app_id))?.dag;
        let l_max = policy.max_limit() as f64;
        let mut out = Vec::with_capacity(limits.len());
        for &l in limits {
            let lv = self.tape.input(vec![l as f64 / l_max]);
            let input = self.tape.concat(&[y, self.embeddings.global, lv]);
            out.push(policy.limit_scorer.forward(&mut self.tape, &policy.params, input)?);
        }
        Ok(out)
    }

    /// Log-probabilities of both heads, recorded on the tape.
    fn heads(&mut self, policy: &PolicyParameters) -> Result<Heads, AgentError> {
        if self.candidates.is_empty() {
            return Err(AgentError::NoCandidates);
        }
        let scores = self.task_score_vars(policy)?;
        let scores = self.tape.concat(&scores);
        let task_logp = self.tape.log_softmax(scores);
        let mut limit_logp = BTreeMap::new();
        let apps: Vec<u64> = self.candidates.iter().map(|c| c.app_id).collect();
        for app in apps {
            if let std::collections::btree_map::Entry::Vacant(slot) = limit_logp.entry(app) {
                let limits = self.allowed_limits(app, policy);
                let w = self.limit_score_vars(app, &limits, policy)?;
                let w = self.tape.concat(&w);
                slot.insert((limits, self.tape.log_softmax(w)));
            }
        }
        Ok(Heads {
            scores,
            task_logp,
            limit_logp,
        })
    }

    fn priority_list(&self, heads: &Heads) -> PriorityList {
        let task_logp = self.tape.value(heads.task_logp);
        let mut entries = Vec::new();
        for (t, c) in self.candidates.iter().enumerate() {
            let pt = task_logp[t].exp();
            let (limits, logp) = &heads.limit_logp[&c.app_id];
            let limit_logp = self.tape.value(*logp);
            for (k, &l) in limits.iter().enumerate() {
                entries.push(PriorityEntry {
                    stage: *c,
                    limit: l,
                    probability: pt * limit_logp[k].exp(),
                });
            }
        }
        PriorityList::new(entries)
    }

    fn log_prob_var(&mut self, heads: &Heads, action: SchedAction) -> Result<Var, AgentError> {
        let t = self
            .candidates
            .iter()
            .position(|c| *c == action.stage)
            .ok_or(AgentError::IllegalAction(action))?;
        let (limits, logp) = &heads.limit_logp[&action.stage.app_id];
        let k = limits
            .iter()
            .position(|&l| l == action.limit)
            .ok_or(AgentError::IllegalAction(action))?;
        let a = self.tape.pick(heads.task_logp, t);
        let b = self.tape.pick(*logp, k);
        Ok(self.tape.add(a, b)?)
    }

    /// Entropy of the joint action distribution.
    fn entropy_var(&mut self, heads: &Heads) -> Result<Var, AgentError> {
        let pt = self.tape.softmax(heads.scores);
        let cross = self.tape.dot(pt, heads.task_logp)?;
        let mut per_app = BTreeMap::new();
        for (&app, &(_, logp)) in &heads.limit_logp {
            let w = self.tape.softmax(logp);
            let d = self.tape.dot(w, logp)?;
            per_app.insert(app, d);
        }
        let per_candidate: Vec<Var> = self.candidates.iter().map(|c| per_app[&c.app_id]).collect();
        let per_candidate = self.tape.concat(&per_candidate);
        let limit_part = self.tape.dot(pt, per_candidate)?;
        let neg = self.tape.add(cross, limit_part)?;
        Ok(self.tape.scale(neg, -1.0))
    }

    fn value_var(&mut self, policy: &PolicyParameters) -> Result<Var, AgentError> {
        self.check_fresh(policy)?;
        // z enters as a constant: the critic does not train the graph network
        let mut input = self.tape.value(self.embeddings.global).to_vec();
        input.extend_from_slice(&self.summary);
        let x = self.tape.input(input);
        Ok(policy.critic.forward(&mut self.tape, &policy.params, x)?)
    }
}

struct Heads {
    scores: Var,
    task_logp: Var,
    /// Allowed limits and their log-probabilities, per candidate app.
    limit_logp: BTreeMap<u64, (Vec<usize>, Var)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityEntry {
    pub stage: StageRef,
    pub limit: usize,
    pub probability: f64,
}

/// Joint (stage, limit) entries, most probable first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityList {
    entries: Vec<PriorityEntry>,
}

impl PriorityList {
    /// Sorts by probability, descending; ties by (app, stage, limit).
    pub fn new(mut entries: Vec<PriorityEntry>) -> Self {
        entries.sort_by(|a, b| {
            b.probability
                .total_cmp(&a.probability)
                .then(a.stage.cmp(&b.stage))
                .then(a.limit.cmp(&b.limit))
        });
        Self { entries }
    }

    pub fn entries(&self) -> &[PriorityEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|e| e.probability).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Draw from the priority list (training).
    Sample,
    /// Take the top entry (evaluation).
    Greedy,
}

pub fn select_action(list: &PriorityList, mode: SelectionMode, rng: &mut impl Rng) -> SchedAction {
    let pick = match mode {
        SelectionMode::Greedy => &list.entries[0],
        SelectionMode::Sample => {
            let u: f64 = rng.random::<f64>() * list.total_probability();
            let mut acc = 0.0;
            list.entries
                .iter()
                .find(|e| {
                    acc += e.probability;
                    u < acc
                })
                .unwrap_or_else(|| list.entries.last().unwrap())
        }
    };
    SchedAction {
        stage: pick.stage,
        limit: pick.limit,
    }
}

pub fn score_tasks(obs: &mut Observation, policy: &PolicyParameters) -> Result<BTreeMap<StageRef, f64>, AgentError> {
    let vars = obs.task_score_vars(policy)?;
    Ok(obs.candidates.iter().zip(vars).map(|(c, v)| (*c, obs.tape.scalar(v))).collect())
}

pub fn score_parallelism(obs: &mut Observation, app_id: u64, policy: &PolicyParameters) -> Result<BTreeMap<usize, f64>, AgentError> {
    let limits = obs.allowed_limits(app_id, policy);
    let vars = obs.limit_score_vars(app_id, &limits, policy)?;
    Ok(limits.iter().zip(vars).map(|(&l, v)| (l, obs.tape.scalar(v))).collect())
}

pub fn build_priority_list(obs: &mut Observation, policy: &PolicyParameters) -> Result<PriorityList, AgentError> {
    let heads = obs.heads(policy)?;
    Ok(obs.priority_list(&heads))
}

/// Critic estimate `V(s)`.
pub fn value(obs: &mut Observation, policy: &PolicyParameters) -> Result<f64, AgentError> {
    let v = obs.value_var(policy)?;
    Ok(obs.tape.scalar(v))
}

/// `log π(a|s)` and its gradient with respect to every parameter.
pub fn log_prob_and_grad(obs: &mut Observation, action: SchedAction, policy: &PolicyParameters) -> Result<(f64, Gradients), AgentError> {
    let heads = obs.heads(policy)?;
    let lp = obs.log_prob_var(&heads, action)?;
    let grads = obs.tape.backward(&policy.params, lp, &[1.0])?;
    Ok((obs.tape.scalar(lp), grads))
}

/// One recorded decision, kept for the backward pass after the episode.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub tape: Tape,
    pub log_prob: Var,
    pub value: Var,
    pub entropy: Var,
}

impl StepRecord {
    pub fn value_estimate(&self) -> f64 {
        self.tape.scalar(self.value)
    }

    pub fn entropy_value(&self) -> f64 {
        self.tape.scalar(self.entropy)
    }
}

/// The agent as a simulator [`Policy`].
pub struct LearnedPolicy<'a> {
    policy: &'a PolicyParameters,
    mode: SelectionMode,
    rng: ChaCha8Rng,
    record: bool,
    steps: Vec<StepRecord>,
}

impl<'a> LearnedPolicy<'a> {
    pub fn greedy(policy: &'a PolicyParameters) -> Self {
        Self {
            policy,
            mode: SelectionMode::Greedy,
            rng: ChaCha8Rng::seed_from_u64(0),
            record: false,
            steps: Vec::new(),
        }
    }

    /// Sampling policy that keeps a [`StepRecord`] per decision.
    pub fn recording(policy: &'a PolicyParameters, seed: u64) -> Self {
        Self {
            policy,
            mode: SelectionMode::Sample,
            rng: ChaCha8Rng::seed_from_u64(seed),
            record: true,
            steps: Vec::new(),
        }
    }

    pub fn sampling(policy: &'a PolicyParameters, seed: u64) -> Self {
        Self {
            record: false,
            ..Self::recording(policy, seed)
        }
    }

    pub fn into_steps(self) -> Vec<StepRecord> {
        self.steps
    }

    fn decide_inner(&mut self, point: &DecisionPoint<'_>) -> Result<SchedAction, AgentError> {
        if point.state.max_limit() < self.policy.max_limit() {
            return Err(AgentError::LimitMismatch {
                cluster: point.state.max_limit(),
                policy: self.policy.max_limit(),
            });
        }
        let mut obs = Observation::build(point, self.policy)?;
        let heads = obs.heads(self.policy)?;
        let list = obs.priority_list(&heads);
        let action = select_action(&list, self.mode, &mut self.rng);
        if self.record {
            let log_prob = obs.log_prob_var(&heads, action)?;
            let entropy = obs.entropy_var(&heads)?;
            let value = obs.value_var(self.policy)?;
            self.steps.push(StepRecord {
                tape: obs.tape,
                log_prob,
                value,
                entropy,
            });
        }
        Ok(action)
    }
}

impl Policy for LearnedPolicy<'_> {
    fn decide(&mut self, point: &DecisionPoint<'_>) -> Result<SchedAction, PolicyError> {
        self.decide_inner(point).map_err(|e| PolicyError(e.to_string()))
    }
}
