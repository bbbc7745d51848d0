//! Message-passing embeddings over application DAGs.
//!
//! Three levels: per-stage embeddings `H` propagated from leaves to roots,
//! one embedding `y` per application, and a global embedding `z` over all
//! active applications. Everything is recorded on a [`Tape`] so gradients
//! reach every parameter.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{Activation, DenseNet, DiffError, LayoutBuilder, Params, Tape, Var};
use crate::sim::{AppRuntime, StageRef};
use crate::trace::{ApplicationDag, WorkloadSpec};

/// Width of the per-stage feature vector, and of every embedding.
pub const FEATURE_DIM: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnnError {
    #[error("application {0} has a dependency cycle")]
    Cycle(u64),
    #[error("application {0} has no stages")]
    EmptyApp(u64),
    #[error("application {app_id}: expected {expected} feature rows, got {got}")]
    FeatureCount { app_id: u64, expected: usize, got: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Divisors that bring raw stage features to order one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub tasks: f64,
    pub work: f64,
    pub data: f64,
}

impl FeatureScale {
    pub fn unit() -> Self {
        Self {
            tasks: 1.0,
            work: 1.0,
            data: 1.0,
        }
    }

    /// Mean task count, mean per-task work, and their product.
    pub fn from_spec(spec: &WorkloadSpec) -> Self {
        let tasks = spec.task_count_range.mean().max(1.0);
        let scale_mean = spec.scale_factors.iter().sum::<f64>() / spec.scale_factors.len().max(1) as f64;
        let work = (spec.task_work_distribution.mean() * scale_mean).max(f64::MIN_POSITIVE);
        Self {
            tasks,
            work,
            data: tasks * work,
        }
    }
}

impl Default for FeatureScale {
    fn default() -> Self {
        Self::unit()
    }
}

/// Graph and features of one application, ready for embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AppGraph {
    pub app_id: u64,
    /// One row of [`FEATURE_DIM`] values per stage, indexed by stage id.
    pub features: Vec<[f64; FEATURE_DIM]>,
    /// Normalized task count per stage, fed to the attention scorer.
    pub task_counts: Vec<f64>,
    pub children: Vec<Vec<usize>>,
}

impl AppGraph {
    /// Features of a running application: remaining tasks, per-task work,
    /// share of executors held, ready flag, data volume.
    pub fn from_runtime(app: &AppRuntime, total_executors: usize, scale: &FeatureScale) -> Self {
        let held = app.held as f64 / total_executors.max(1) as f64;
        let features = app
            .dag
            .stages
            .iter()
            .zip(&app.stages)
            .map(|(spec, st)| {
                [
                    st.remaining_tasks() as f64 / scale.tasks,
                    spec.task_work / scale.work,
                    held,
                    if st.ready { 1.0 } else { 0.0 },
                    spec.data_volume / scale.data,
                ]
            })
            .collect();
        Self {
            app_id: app.app_id(),
            features,
            task_counts: app.dag.stages.iter().map(|s| s.task_count as f64 / scale.tasks).collect(),
            children: app.children.clone(),
        }
    }

    /// Features of an application that has just arrived and holds nothing.
    pub fn from_dag(dag: &ApplicationDag, scale: &FeatureScale) -> Self {
        let features = dag
            .stages
            .iter()
            .map(|s| {
                [
                    s.task_count as f64 / scale.tasks,
                    s.task_work / scale.work,
                    0.0,
                    if s.parent_ids.is_empty() { 1.0 } else { 0.0 },
                    s.data_volume / scale.data,
                ]
            })
            .collect();
        Self {
            app_id: dag.app_id,
            features,
            task_counts: dag.stages.iter().map(|s| s.task_count as f64 / scale.tasks).collect(),
            children: dag.children(),
        }
    }

    fn len(&self) -> usize {
        self.features.len()
    }

    /// Leaves-first order, or `None` on a cycle.
    fn reverse_topological(&self) -> Option<Vec<usize>> {
        let n = self.len();
        let mut pending: Vec<usize> = self.children.iter().map(Vec::len).collect();
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, ch) in self.children.iter().enumerate() {
            for &u in ch {
                parents[u].push(j);
            }
        }
        let mut stack: Vec<usize> = (0..n).rev().filter(|&j| pending[j] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(u) = stack.pop() {
            order.push(u);
            for &p in &parents[u] {
                pending[p] -= 1;
                if pending[p] == 0 {
                    stack.push(p);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

/// Aggregator triple: attention scorer plus the two transforms `f` and `g`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregator {
    pub transform_f: DenseNet,
    pub transform_g: DenseNet,
    pub attention: DenseNet,
}

impl Aggregator {
    fn layout(builder: &mut LayoutBuilder, hidden: &[usize], attention_in: usize, attention_hidden: &[usize]) -> Self {
        let transform = |b: &mut LayoutBuilder| {
            let mut dims = vec![FEATURE_DIM];
            dims.extend_from_slice(hidden);
            dims.push(FEATURE_DIM);
            b.dense(dims, Activation::LeakyRelu)
        };
        let transform_f = transform(builder);
        let transform_g = transform(builder);
        let mut dims = vec![attention_in];
        dims.extend_from_slice(attention_hidden);
        dims.push(1);
        let attention = builder.dense(dims, Activation::LeakyRelu);
        Self {
            transform_f,
            transform_g,
            attention,
        }
    }

    fn init(&self, params: &mut Params, rng: &mut impl Rng) {
        self.transform_f.init(params, rng);
        self.transform_g.init(params, rng);
        self.attention.init(params, rng);
    }

    /// `g(Σ softmax(score) ⊙ f(item))` with one attention input per item.
    fn aggregate(&self, tape: &mut Tape, params: &Params, items: &[Var], attention_inputs: &[Var]) -> Result<Var, DiffError> {
        let mut scores = Vec::with_capacity(items.len());
        for &a in attention_inputs {
            scores.push(self.attention.forward(tape, params, a)?);
        }
        let scores = tape.concat(&scores);
        let alpha = tape.softmax(scores);
        let mut messages = Vec::with_capacity(items.len());
        for &h in items {
            messages.push(self.transform_f.forward(tape, params, h)?);
        }
        let pooled = tape.weighted_sum(alpha, &messages)?;
        self.transform_g.forward(tape, params, pooled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnParams {
    pub node: Aggregator,
    pub dag: Aggregator,
    pub global: Aggregator,
    pub max_depth: usize,
}

impl GnnParams {
    /// `hidden` are the hidden widths shared by every `f` and `g`.
    pub fn layout(builder: &mut LayoutBuilder, hidden: &[usize], attention_hidden: &[usize], max_depth: usize) -> Self {
        Self {
            node: Aggregator::layout(builder, hidden, 2 * FEATURE_DIM + 1, attention_hidden),
            dag: Aggregator::layout(builder, hidden, FEATURE_DIM, attention_hidden),
            global: Aggregator::layout(builder, hidden, FEATURE_DIM, attention_hidden),
            max_depth,
        }
    }

    pub fn init(&self, params: &mut Params, rng: &mut impl Rng) {
        self.node.init(params, rng);
        self.dag.init(params, rng);
        self.global.init(params, rng);
    }
}

/// Tape handles for one application's embeddings.
#[derive(Debug, Clone)]
pub struct AppVars {
    pub app_id: u64,
    /// Raw feature inputs, one per stage.
    pub features: Vec<Var>,
    /// `H`, one per stage.
    pub nodes: Vec<Var>,
    /// `y`.
    pub dag: Var,
}

/// Tape handles for a full set of embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingVars {
    pub apps: Vec<AppVars>,
    /// `z`; an input of zeros when no application is active.
    pub global: Var,
}

impl EmbeddingVars {
    pub fn values(&self, tape: &Tape) -> EmbeddingSet {
        let mut per_node = BTreeMap::new();
        let mut per_dag = BTreeMap::new();
        for app in &self.apps {
            for (s, &h) in app.nodes.iter().enumerate() {
                per_node.insert(StageRef::new(app.app_id, s as u32), tape.value(h).to_vec());
            }
            per_dag.insert(app.app_id, tape.value(app.dag).to_vec());
        }
        EmbeddingSet {
            per_node,
            per_dag,
            global: tape.value(self.global).to_vec(),
        }
    }

    pub fn app(&self, app_id: u64) -> Option<&AppVars> {
        self.apps.iter().find(|a| a.app_id == app_id)
    }
}

/// Plain values of every embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub per_node: BTreeMap<StageRef, Vec<f64>>,
    pub per_dag: BTreeMap<u64, Vec<f64>>,
    pub global: Vec<f64>,
}

/// Per-stage embeddings `H_j = g(Σ_u α_uj f(H_u)) + x_j` over the children
/// `u` of `j`, each node seeing at most `max_depth` hops below it.
///
/// `leaf_base` must hold `g(0)`, the aggregate of an empty child set; it is
/// shared across applications on one tape.
pub fn embed_nodes(
    tape: &mut Tape,
    params: &Params,
    gnn: &GnnParams,
    app: &AppGraph,
    leaf_base: Var,
) -> Result<(Vec<Var>, Vec<Var>), GnnError> {
    let n = app.len();
    if n == 0 {
        return Err(GnnError::EmptyApp(app.app_id));
    }
    if app.children.len() != n || app.task_counts.len() != n {
        return Err(GnnError::FeatureCount {
            app_id: app.app_id,
            expected: n,
            got: app.children.len().min(app.task_counts.len()),
        });
    }
    let order = app.reverse_topological().ok_or(GnnError::Cycle(app.app_id))?;

    let x: Vec<Var> = app.features.iter().map(|f| tape.input(f.to_vec())).collect();
    // height = longest path to a leaf; budgets beyond it change nothing
    let mut height = vec![0usize; n];
    for &j in &order {
        height[j] = app.children[j].iter().map(|&u| height[u] + 1).max().unwrap_or(0);
    }

    // memo[j][k] = H of node j with hop budget k, k ≤ min(max_depth, height)
    let mut memo: Vec<Vec<Option<Var>>> = (0..n).map(|j| vec![None; height[j].min(gnn.max_depth) + 1]).collect();
    let mut attention: Vec<Option<Vec<Var>>> = vec![None; n];
    let mut fcache: Vec<BTreeMap<usize, Var>> = vec![BTreeMap::new(); n];

    // Budgets needed per node, propagated top-down from the full budget.
    let mut needed: Vec<Vec<bool>> = memo.iter().map(|m| vec![false; m.len()]).collect();
    for j in 0..n {
        let k = gnn.max_depth.min(height[j]);
        needed[j][k] = true;
    }
    for &j in order.iter().rev() {
        for k in (1..needed[j].len()).rev() {
            if !needed[j][k] {
                continue;
            }
            for &u in &app.children[j] {
                let ku = (k - 1).min(height[u]);
                needed[u][ku] = true;
            }
        }
    }

    for &j in &order {
        for k in 0..needed[j].len() {
            if !needed[j][k] {
                continue;
            }
            let h = if k == 0 || app.children[j].is_empty() {
                tape.add(leaf_base, x[j])?
            } else {
                if attention[j].is_none() {
                    let mut inputs = Vec::with_capacity(app.children[j].len());
                    for &u in &app.children[j] {
                        let tc = tape.input(vec![app.task_counts[u]]);
                        inputs.push(tape.concat(&[x[j], x[u], tc]));
                    }
                    attention[j] = Some(inputs);
                }
                let mut messages = Vec::with_capacity(app.children[j].len());
                for &u in &app.children[j] {
                    let ku = (k - 1).min(height[u]);
                    let f = match fcache[u].get(&ku) {
                        Some(&v) => v,
                        None => {
                            let hu = memo[u][ku].expect("children are embedded first");
                            let v = gnn.node.transform_f.forward(tape, params, hu)?;
                            fcache[u].insert(ku, v);
                            v
                        }
                    };
                    messages.push(f);
                }
                let inputs = attention[j].clone().unwrap();
                let mut scores = Vec::with_capacity(inputs.len());
                for a in inputs {
                    scores.push(gnn.node.attention.forward(tape, params, a)?);
                }
                let scores = tape.concat(&scores);
                let alpha = tape.softmax(scores);
                let pooled = tape.weighted_sum(alpha, &messages)?;
                let g = gnn.node.transform_g.forward(tape, params, pooled)?;
                tape.add(g, x[j])?
            };
            memo[j][k] = Some(h);
        }
    }
    let nodes = (0..n)
        .map(|j| memo[j][gnn.max_depth.min(height[j])].expect("top budget is always needed"))
        .collect();
    Ok((x, nodes))
}

/// `g(0)` for the node-level aggregator.
pub fn leaf_base(tape: &mut Tape, params: &Params, gnn: &GnnParams) -> Result<Var, GnnError> {
    let zero = tape.input(vec![0.0; FEATURE_DIM]);
    Ok(gnn.node.transform_g.forward(tape, params, zero)?)
}

/// DAG embedding `y` from the node embeddings of one application.
pub fn embed_dag(tape: &mut Tape, params: &Params, gnn: &GnnParams, nodes: &[Var]) -> Result<Var, GnnError> {
    if nodes.is_empty() {
        return Err(GnnError::EmptyApp(u64::MAX));
    }
    Ok(gnn.dag.aggregate(tape, params, nodes, nodes)?)
}

/// Global embedding `z`; the zero vector when there are no applications.
pub fn embed_global(tape: &mut Tape, params: &Params, gnn: &GnnParams, dags: &[Var]) -> Result<Var, GnnError> {
    if dags.is_empty() {
        return Ok(tape.input(vec![0.0; FEATURE_DIM]));
    }
    Ok(gnn.global.aggregate(tape, params, dags, dags)?)
}

/// All three levels for a set of applications, in the given order.
pub fn embed_all(tape: &mut Tape, params: &Params, gnn: &GnnParams, apps: &[AppGraph]) -> Result<EmbeddingVars, GnnError> {
    let base = if apps.is_empty() {
        None
    } else {
        Some(leaf_base(tape, params, gnn)?)
    };
    let mut out = Vec::with_capacity(apps.len());
    for app in apps {
        let (features, nodes) = embed_nodes(tape, params, gnn, app, base.unwrap())?;
        let dag = embed_dag(tape, params, gnn, &nodes).map_err(|e| match e {
            GnnError::EmptyApp(_) => GnnError::EmptyApp(app.app_id),
            other => other,
        })?;
        out.push(AppVars {
            app_id: app.app_id,
            features,
            nodes,
            dag,
        });
    }
    let dags: Vec<Var> = out.iter().map(|a| a.dag).collect();
    let global = embed_global(tape, params, gnn, &dags)?;
    Ok(EmbeddingVars { apps: out, global })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Gradients;
    use crate::trace::fixtures;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(max_depth: usize, seed: u64) -> (GnnParams, Params) {
        let mut b = LayoutBuilder::new();
        let gnn = GnnParams::layout(&mut b, &[16, 8], &[8], max_depth);
        let mut params = Params::zeros(b.len());
        gnn.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        (gnn, params)
    }

    fn embed(gnn: &GnnParams, params: &Params, apps: &[AppGraph]) -> (Tape, EmbeddingVars) {
        let mut tape = Tape::new(params);
        let vars = embed_all(&mut tape, params, gnn, apps).unwrap();
        (tape, vars)
    }

    fn chain_graph(n: usize, rng: &mut ChaCha8Rng) -> AppGraph {
        let works: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        AppGraph::from_dag(&fixtures::chain(0, 0.0, &works), &FeatureScale::unit())
    }

    #[test]
    fn single_node_is_its_features_under_zero_bias() {
        let (gnn, params) = setup(8, 1);
        let app = AppGraph::from_dag(&fixtures::single_stage(0, 0.0, 3, 2.0), &FeatureScale::unit());
        let (tape, vars) = embed(&gnn, &params, std::slice::from_ref(&app));
        // g(0) = 0 when every bias is zero
        assert_eq!(tape.value(vars.apps[0].nodes[0]), &app.features[0]);
    }

    #[test]
    fn singleton_child_gets_full_weight() {
        let (gnn, params) = setup(8, 2);
        let app = AppGraph::from_dag(&fixtures::chain(0, 0.0, &[1.0, 2.0]), &FeatureScale::unit());
        let (tape, vars) = embed(&gnn, &params, std::slice::from_ref(&app));
        // with α = 1, H_0 = g(f(H_1)) + x_0
        let h1 = tape.value(vars.apps[0].nodes[1]).to_vec();
        let (f, _, _) = gnn.node.transform_f.eval(&params, &h1).unwrap();
        let (g, _, _) = gnn.node.transform_g.eval(&params, &f).unwrap();
        let h0 = tape.value(vars.apps[0].nodes[0]);
        for k in 0..FEATURE_DIM {
            assert!((h0[k] - (g[k] + app.features[0][k])).abs() < 1e-14);
        }
    }

    #[test]
    fn depth_limit_hides_far_descendants() {
        let (gnn, params) = setup(8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let app = chain_graph(10, &mut rng);
        let (tape, vars) = embed(&gnn, &params, std::slice::from_ref(&app));
        let root = tape.value(vars.apps[0].nodes[0]).to_vec();

        let mut far = app.clone();
        far.features[9] = [7.0, -3.0, 0.5, 1.0, 9.0];
        far.task_counts[9] = 11.0;
        let (tape2, vars2) = embed(&gnn, &params, std::slice::from_ref(&far));
        assert_eq!(tape2.value(vars2.apps[0].nodes[0]), root.as_slice());

        let mut near = app.clone();
        near.features[8] = [7.0, -3.0, 0.5, 1.0, 9.0];
        let (tape3, vars3) = embed(&gnn, &params, std::slice::from_ref(&near));
        assert_ne!(tape3.value(vars3.apps[0].nodes[0]), root.as_slice());
    }

    #[test]
    fn truncated_node_gets_zero_gradient() {
        let (gnn, params) = setup(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let app = chain_graph(5, &mut rng);
        let mut tape = Tape::new(&params);
        let vars = embed_all(&mut tape, &params, &gnn, std::slice::from_ref(&app)).unwrap();
        let root = vars.apps[0].nodes[0];
        let mut grads = Gradients::zeros(params.len());
        let adj = tape.backward_into(&params, &[(root, vec![1.0; FEATURE_DIM])], &mut grads).unwrap();
        let beyond = adj.get(vars.apps[0].features[3], FEATURE_DIM);
        assert!(beyond.iter().all(|&v| v == 0.0));
        let within = adj.get(vars.apps[0].features[2], FEATURE_DIM);
        assert!(within.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn child_order_does_not_matter() {
        let (gnn, params) = setup(8, 7);
        let app = AppGraph::from_dag(&fixtures::fork_join(0, 0.0, [1.0, 2.0, 3.0, 0.5, 1.5]), &FeatureScale::unit());
        let (tape, vars) = embed(&gnn, &params, std::slice::from_ref(&app));
        let mut shuffled = app.clone();
        shuffled.children[0].reverse();
        let (tape2, vars2) = embed(&gnn, &params, std::slice::from_ref(&shuffled));
        let a = tape.value(vars.apps[0].nodes[0]);
        let b = tape2.value(vars2.apps[0].nodes[0]);
        for k in 0..FEATURE_DIM {
            assert!((a[k] - b[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn app_order_does_not_change_global() {
        let (gnn, params) = setup(8, 8);
        let scale = FeatureScale::unit();
        let a = AppGraph::from_dag(&fixtures::fork_join(0, 0.0, [1.0, 2.0, 3.0, 0.5, 1.5]), &scale);
        let b = AppGraph::from_dag(&fixtures::chain(1, 0.0, &[2.0, 1.0, 4.0]), &scale);
        let (t1, v1) = embed(&gnn, &params, &[a.clone(), b.clone()]);
        let (t2, v2) = embed(&gnn, &params, &[b, a]);
        let (z1, z2) = (t1.value(v1.global), t2.value(v2.global));
        for k in 0..FEATURE_DIM {
            assert!((z1[k] - z2[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn identical_apps_have_identical_dag_embeddings() {
        let (gnn, params) = setup(8, 9);
        let scale = FeatureScale::unit();
        let a = AppGraph::from_dag(&fixtures::fork_join(0, 0.0, [1.0, 2.0, 3.0, 0.5, 1.5]), &scale);
        let mut b = a.clone();
        b.app_id = 1;
        let (tape, vars) = embed(&gnn, &params, &[a, b]);
        let set = vars.values(&tape);
        assert_eq!(set.per_dag[&0], set.per_dag[&1]);
        assert_eq!(set.per_node.len(), 10);
    }

    #[test]
    fn no_apps_gives_zero_global() {
        let (gnn, params) = setup(8, 10);
        let (tape, vars) = embed(&gnn, &params, &[]);
        assert_eq!(tape.value(vars.global), &[0.0; FEATURE_DIM]);
    }

    #[test]
    fn zero_feature_app_only_acts_through_its_embedding() {
        let (gnn, params) = setup(8, 11);
        let scale = FeatureScale::unit();
        let a = AppGraph::from_dag(&fixtures::chain(0, 0.0, &[2.0, 1.0]), &scale);
        let mut blank = AppGraph::from_dag(&fixtures::single_stage(1, 0.0, 1, 1.0), &scale);
        blank.features[0] = [0.0; FEATURE_DIM];
        blank.task_counts[0] = 0.0;
        let (tape, vars) = embed(&gnn, &params, &[a, blank]);
        // recompute z by hand from the two y vectors
        let ys: Vec<Vec<f64>> = vars.apps.iter().map(|v| tape.value(v.dag).to_vec()).collect();
        let scores: Vec<f64> = ys.iter().map(|y| gnn.global.attention.eval(&params, y).unwrap().0[0]).collect();
        let w = crate::diff::masked_softmax(&scores, &[true, true]).unwrap();
        let mut pooled = vec![0.0; FEATURE_DIM];
        for (wi, y) in w.iter().zip(&ys) {
            let f = gnn.global.transform_f.eval(&params, y).unwrap().0;
            for k in 0..FEATURE_DIM {
                pooled[k] += wi * f[k];
            }
        }
        let z = gnn.global.transform_g.eval(&params, &pooled).unwrap().0;
        for k in 0..FEATURE_DIM {
            assert!((z[k] - tape.value(vars.global)[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let (gnn, params) = setup(8, 12);
        let mut app = AppGraph::from_dag(&fixtures::chain(0, 0.0, &[1.0, 1.0]), &FeatureScale::unit());
        app.children[1].push(0);
        let mut tape = Tape::new(&params);
        assert!(matches!(embed_all(&mut tape, &params, &gnn, &[app]), Err(GnnError::Cycle(0))));
    }

    #[test]
    fn recomputation_is_bit_identical() {
        let (gnn, params) = setup(8, 13);
        let app = AppGraph::from_dag(&fixtures::fork_join(0, 0.0, [1.0, 2.0, 3.0, 0.5, 1.5]), &FeatureScale::unit());
        let (t1, v1) = embed(&gnn, &params, std::slice::from_ref(&app));
        let (t2, v2) = embed(&gnn, &params, std::slice::from_ref(&app));
        assert_eq!(v1.values(&t1), v2.values(&t2));
    }

    /// Central differences on a scalar loss `Σ z` for every parameter.
    fn finite_difference_check(app: AppGraph, seed: u64) {
        let (gnn, mut params) = setup(8, seed);
        // nonzero biases so the leaf path is exercised too
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for v in params.values_mut() {
            if *v == 0.0 {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        let loss = |p: &Params| -> f64 {
            let mut tape = Tape::new(p);
            let vars = embed_all(&mut tape, p, &gnn, std::slice::from_ref(&app)).unwrap();
            let root: f64 = tape.value(vars.apps[0].nodes[0]).iter().sum();
            root + tape.value(vars.global).iter().sum::<f64>()
        };
        let mut tape = Tape::new(&params);
        let vars = embed_all(&mut tape, &params, &gnn, std::slice::from_ref(&app)).unwrap();
        let mut grads = Gradients::zeros(params.len());
        tape.backward_into(
            &params,
            &[
                (vars.apps[0].nodes[0], vec![1.0; FEATURE_DIM]),
                (vars.global, vec![1.0; FEATURE_DIM]),
            ],
            &mut grads,
        )
        .unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let orig = params.values()[i];
            params.set(i, orig + h);
            let up = loss(&params);
            params.set(i, orig - h);
            let down = loss(&params);
            params.set(i, orig);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.values()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences_on_chain() {
        let app = AppGraph::from_dag(&fixtures::chain(0, 0.0, &[1.0, 2.0]), &FeatureScale::unit());
        finite_difference_check(app, 21);
    }

    #[test]
    fn gradient_matches_finite_differences_on_fork_join() {
        let app = AppGraph::from_dag(&fixtures::fork_join(0, 0.0, [1.0, 2.0, 3.0, 0.5, 1.5]), &FeatureScale::unit());
        finite_difference_check(app, 22);
    }

    #[test]
    fn attention_weights_are_distributions() {
        let (gnn, params) = setup(8, 23);
        let app = AppGraph::from_dag(&fixtures::fork_join(0, 0.0, [1.0, 2.0, 3.0, 0.5, 1.5]), &FeatureScale::unit());
        let scores: Vec<f64> = app.children[0]
            .iter()
            .map(|&u| {
                let mut input = app.features[0].to_vec();
                input.extend_from_slice(&app.features[u]);
                input.push(app.task_counts[u]);
                gnn.node.attention.eval(&params, &input).unwrap().0[0]
            })
            .collect();
        let alpha = crate::diff::masked_softmax(&scores, &[true; 3]).unwrap();
        assert!(alpha.iter().all(|&a| a >= 0.0));
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
