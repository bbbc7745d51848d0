use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::{SchedAction, Server, SimError, StageRef, TaskRun};
use crate::trace::{validate_dag, ApplicationDag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    /// Tasks not yet placed on an executor.
    pub pending: u32,
    pub running: u32,
    pub completed: u32,
    /// All parents fully completed.
    pub ready: bool,
    pub completion_time: Option<f64>,
}

impl StageState {
    /// Tasks not yet finished.
    pub fn remaining_tasks(&self) -> u32 {
        self.pending + self.running
    }

    pub fn is_complete(&self) -> bool {
        self.completion_time.is_some()
    }
}

/// Runtime bookkeeping for one arrived, unfinished application.
#[derive(Debug, Clone, PartialEq)]
pub struct AppRuntime {
    pub dag: ApplicationDag,
    pub children: Vec<Vec<usize>>,
    pub stages: Vec<StageState>,
    /// Executors currently running tasks of this application.
    pub held: usize,
    pub first_start: Option<f64>,
    pub completion_time: Option<f64>,
    incomplete_stages: usize,
}

impl AppRuntime {
    fn new(dag: ApplicationDag) -> Self {
        let children = dag.children();
        let stages = dag
            .stages
            .iter()
            .map(|s| StageState {
                pending: s.task_count,
                running: 0,
                completed: 0,
                ready: s.parent_ids.is_empty(),
                completion_time: None,
            })
            .collect();
        let incomplete_stages = dag.stages.len();
        Self {
            dag,
            children,
            stages,
            held: 0,
            first_start: None,
            completion_time: None,
            incomplete_stages,
        }
    }

    pub fn app_id(&self) -> u64 {
        self.dag.app_id
    }

    pub fn arrival_time(&self) -> f64 {
        self.dag.arrival_time
    }

    /// Work of tasks not yet finished (running tasks counted in full).
    pub fn remaining_work(&self) -> f64 {
        self.dag
            .stages
            .iter()
            .zip(&self.stages)
            .map(|(spec, st)| spec.task_work * st.remaining_tasks() as f64)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FinishEvent {
    time: f64,
    app_id: u64,
    stage_id: u32,
    task_index: u32,
    server: usize,
}

impl Eq for FinishEvent {}

impl Ord for FinishEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.app_id.cmp(&other.app_id))
            .then(self.stage_id.cmp(&other.stage_id))
            .then(self.task_index.cmp(&other.task_index))
    }
}

impl PartialOrd for FinishEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Applications not yet released into the cluster, in arrival order.
#[derive(Debug, Clone)]
pub struct ArrivalStream {
    apps: Vec<ApplicationDag>,
    next: usize,
}

impl ArrivalStream {
    /// Validates every application; order is (arrival_time, app_id).
    pub fn new(mut apps: Vec<ApplicationDag>) -> Result<Self, SimError> {
        for app in &mut apps {
            validate_dag(app).map_err(|v| SimError::InvalidApplication {
                app_id: app.app_id,
                reason: v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            })?;
            app.stages.sort_by_key(|s| s.stage_id);
        }
        apps.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.app_id.cmp(&b.app_id)));
        if let Some(w) = apps.windows(2).find(|w| w[0].app_id == w[1].app_id) {
            return Err(SimError::InvalidApplication {
                app_id: w[0].app_id,
                reason: "duplicate app_id in workload".into(),
            });
        }
        Ok(Self { apps, next: 0 })
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.apps.get(self.next).map(|a| a.arrival_time)
    }

    pub fn remaining(&self) -> usize {
        self.apps.len() - self.next
    }

    fn pop(&mut self) -> Option<ApplicationDag> {
        let app = self.apps.get(self.next).cloned();
        if app.is_some() {
            self.next += 1;
        }
        app
    }
}

/// Something that happened while advancing the clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Arrival {
        time: f64,
        app_id: u64,
    },
    TaskFinished {
        time: f64,
        app_id: u64,
        stage_id: u32,
        task_index: u32,
        server_id: usize,
    },
    StageCompleted {
        time: f64,
        app_id: u64,
        stage_id: u32,
    },
    AppCompleted {
        time: f64,
        app_id: u64,
        arrival: f64,
    },
}

/// Result of one [`ClusterState::advance`] call.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Advanced(Vec<SimEvent>),
    /// No running tasks and no future arrivals.
    Drained,
}

/// Full simulator state: executor pools, active applications, event queue.
#[derive(Debug, Clone)]
pub struct ClusterState {
    servers: Vec<Server>,
    placement_order: Vec<usize>,
    clock: f64,
    idle: Vec<usize>,
    running: BinaryHeap<Reverse<FinishEvent>>,
    active: BTreeMap<u64, AppRuntime>,
    parallelism_limit: BTreeMap<u64, usize>,
    max_limit: usize,
    finished: Vec<(u64, f64, f64)>,
    residence: f64,
}

impl ClusterState {
    /// All executors idle, clock at zero.
    pub fn new(servers: Vec<Server>) -> Result<Self, SimError> {
        if servers.is_empty() {
            return Err(SimError::NoServers);
        }
        for (i, s) in servers.iter().enumerate() {
            let reason = if s.server_id != i {
                Some(format!("server ids must be 0..n in order, found {} at {i}", s.server_id))
            } else if !(s.speed.is_finite() && s.speed > 0.0) {
                Some(format!("speed {} is not positive", s.speed))
            } else if s.executor_count == 0 {
                Some("needs at least one executor".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(SimError::InvalidServer {
                    server_id: s.server_id,
                    reason,
                });
            }
        }
        let mut placement_order: Vec<usize> = (0..servers.len()).collect();
        placement_order.sort_by(|&a, &b| servers[b].speed.total_cmp(&servers[a].speed).then(a.cmp(&b)));
        let idle = servers.iter().map(|s| s.executor_count).collect();
        let max_limit = super::total_executors(&servers);
        Ok(Self {
            servers,
            placement_order,
            clock: 0.0,
            idle,
            running: BinaryHeap::new(),
            active: BTreeMap::new(),
            parallelism_limit: BTreeMap::new(),
            max_limit,
            finished: Vec::new(),
            residence: 0.0,
        })
    }

    /// Overrides the largest allowed parallelism limit (defaults to total executors).
    pub fn with_max_limit(mut self, max_limit: usize) -> Self {
        self.max_limit = max_limit.max(1);
        self
    }

    pub fn servers(&self) -> &[Server] {
        &self.servers
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn max_limit(&self) -> usize {
        self.max_limit
    }

    pub fn total_executors(&self) -> usize {
        super::total_executors(&self.servers)
    }

    pub fn idle_executors(&self) -> &[usize] {
        &self.idle
    }

    pub fn idle_total(&self) -> usize {
        self.idle.iter().sum()
    }

    pub fn running_count(&self) -> usize {
        self.running.len()
    }

    /// Arrived, unfinished applications keyed by id.
    pub fn active_apps(&self) -> &BTreeMap<u64, AppRuntime> {
        &self.active
    }

    pub fn app(&self, app_id: u64) -> Option<&AppRuntime> {
        self.active.get(&app_id)
    }

    pub fn parallelism_limit(&self, app_id: u64) -> Option<usize> {
        self.parallelism_limit.get(&app_id).copied()
    }

    /// Applications in the system (arrived, not complete).
    pub fn in_system(&self) -> usize {
        self.active.len()
    }

    /// (app_id, arrival, completion) of finished applications, in completion order.
    pub fn finished(&self) -> &[(u64, f64, f64)] {
        &self.finished
    }

    /// ∫ (applications in system) dt accumulated so far.
    pub fn residence(&self) -> f64 {
        self.residence
    }

    /// Stages whose parents are all complete and that still have unplaced
    /// tasks, ordered by (app_id, stage_id).
    pub fn schedulable_set(&self) -> Vec<StageRef> {
        let mut out = Vec::new();
        for (&app_id, app) in &self.active {
            for (i, st) in app.stages.iter().enumerate() {
                if st.ready && st.pending > 0 {
                    out.push(StageRef::new(app_id, i as u32));
                }
            }
        }
        out
    }

    pub fn is_schedulable(&self, stage: StageRef) -> bool {
        self.active
            .get(&stage.app_id)
            .and_then(|a| a.stages.get(stage.stage_id as usize))
            .is_some_and(|st| st.ready && st.pending > 0)
    }

    /// Earliest pending event time (task finish or arrival).
    pub fn next_event_time(&self, stream: &ArrivalStream) -> Option<f64> {
        let finish = self.running.peek().map(|Reverse(e)| e.time);
        match (finish, stream.peek_time()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Sets the application's limit and places as many pending tasks of the
    /// stage as idle supply, pending count, and the limit allow. Fastest
    /// servers are filled first.
    pub fn apply_action(&mut self, action: SchedAction) -> Result<Vec<TaskRun>, SimError> {
        if !self.is_schedulable(action.stage) {
            return Err(SimError::NotSchedulable(action.stage));
        }
        if action.limit == 0 || action.limit > self.max_limit {
            return Err(SimError::LimitOutOfRange {
                limit: action.limit,
                max: self.max_limit,
            });
        }
        let StageRef { app_id, stage_id } = action.stage;
        self.parallelism_limit.insert(app_id, action.limit);
        let clock = self.clock;
        let app = self.active.get_mut(&app_id).expect("schedulable implies active");
        let spec = &app.dag.stages[stage_id as usize];
        let task_work = spec.task_work;
        let task_count = spec.task_count;
        let st = &mut app.stages[stage_id as usize];
        let idle_total: usize = self.idle.iter().sum();
        let headroom = action.limit.saturating_sub(app.held);
        let n = idle_total.min(st.pending as usize).min(headroom);

        let mut runs = Vec::with_capacity(n);
        let mut order = self.placement_order.iter().copied();
        let mut server = order.next();
        for _ in 0..n {
            while let Some(s) = server {
                if self.idle[s] > 0 {
                    break;
                }
                server = order.next();
            }
            let s = server.expect("idle supply counted above");
            self.idle[s] -= 1;
            let task_index = task_count - st.pending;
            st.pending -= 1;
            st.running += 1;
            app.held += 1;
            let finish = clock + task_work / self.servers[s].speed;
            self.running.push(Reverse(FinishEvent {
                time: finish,
                app_id,
                stage_id,
                task_index,
                server: s,
            }));
            runs.push(TaskRun {
                app_id,
                stage_id,
                task_index,
                server_id: s,
                start: clock,
                finish,
                limit: action.limit,
            });
        }
        if n > 0 && app.first_start.is_none() {
            app.first_start = Some(clock);
        }
        Ok(runs)
    }

    /// Moves the clock forward without processing events; `time` must not
    /// pass the next pending event.
    pub fn advance_clock_to(&mut self, time: f64) {
        debug_assert!(time >= self.clock, "clock moves forward only");
        if time > self.clock {
            self.residence -= compute_reward(self.clock, time, self);
            self.clock = time;
        }
    }

    /// Processes the single earliest event. Task finishes are handled before
    /// arrivals at the same instant; simultaneous finishes follow
    /// (app_id, stage_id, task_index).
    pub fn advance(&mut self, stream: &mut ArrivalStream) -> Step {
        let finish = self.running.peek().map(|Reverse(e)| e.time);
        let take_finish = match (finish, stream.peek_time()) {
            (None, None) => return Step::Drained,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(f), Some(a)) => f <= a,
        };
        let mut events = Vec::new();
        if take_finish {
            let Reverse(ev) = self.running.pop().expect("peeked");
            self.advance_clock_to(ev.time);
            self.finish_task(ev, &mut events);
        } else {
            let dag = stream.pop().expect("peeked");
            self.advance_clock_to(dag.arrival_time);
            let app_id = dag.app_id;
            events.push(SimEvent::Arrival { time: self.clock, app_id });
            self.parallelism_limit.insert(app_id, self.max_limit);
            self.active.insert(app_id, AppRuntime::new(dag));
        }
        Step::Advanced(events)
    }

    fn finish_task(&mut self, ev: FinishEvent, events: &mut Vec<SimEvent>) {
        let clock = self.clock;
        self.idle[ev.server] += 1;
        events.push(SimEvent::TaskFinished {
            time: clock,
            app_id: ev.app_id,
            stage_id: ev.stage_id,
            task_index: ev.task_index,
            server_id: ev.server,
        });
        let app = self.active.get_mut(&ev.app_id).expect("running task of active app");
        app.held -= 1;
        let stage = ev.stage_id as usize;
        let st = &mut app.stages[stage];
        st.running -= 1;
        st.completed += 1;
        if st.completed < app.dag.stages[stage].task_count {
            return;
        }
        st.completion_time = Some(clock);
        app.incomplete_stages -= 1;
        events.push(SimEvent::StageCompleted {
            time: clock,
            app_id: ev.app_id,
            stage_id: ev.stage_id,
        });
        for &c in &app.children[stage] {
            let ready = app.dag.stages[c].parent_ids.iter().all(|&p| app.stages[p as usize].is_complete());
            app.stages[c].ready = ready;
        }
        if app.incomplete_stages == 0 {
            app.completion_time = Some(clock);
            let arrival = app.arrival_time();
            self.active.remove(&ev.app_id);
            self.parallelism_limit.remove(&ev.app_id);
            self.finished.push((ev.app_id, arrival, clock));
            events.push(SimEvent::AppCompleted {
                time: clock,
                app_id: ev.app_id,
                arrival,
            });
        }
    }

    /// Structural self-check; empty when all bookkeeping is consistent.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut busy = vec![0usize; self.servers.len()];
        let mut held: BTreeMap<u64, usize> = BTreeMap::new();
        for Reverse(e) in self.running.iter() {
            busy[e.server] += 1;
            *held.entry(e.app_id).or_default() += 1;
            if e.time < self.clock {
                problems.push(format!("task {e:?} finishes before the clock {}", self.clock));
            }
        }
        for (s, server) in self.servers.iter().enumerate() {
            if self.idle[s] + busy[s] != server.executor_count {
                problems.push(format!(
                    "server {s}: idle {} + busy {} != {}",
                    self.idle[s], busy[s], server.executor_count
                ));
            }
        }
        for (&id, app) in &self.active {
            let h = held.get(&id).copied().unwrap_or(0);
            if h != app.held {
                problems.push(format!("app {id}: held counter {} but {h} tasks running", app.held));
            }
            for (i, st) in app.stages.iter().enumerate() {
                let parents_done = app.dag.stages[i].parent_ids.iter().all(|&p| app.stages[p as usize].is_complete());
                if st.ready != parents_done {
                    problems.push(format!("app {id} stage {i}: ready flag {} is stale", st.ready));
                }
                if (st.running > 0 || st.completed > 0) && !parents_done {
                    problems.push(format!("app {id} stage {i}: started before its parents finished"));
                }
            }
        }
        problems
    }
}

/// `−(new_clock − prev_clock) × applications in system`, with the count
/// taken from `state` (it must be constant over the interval).
pub fn compute_reward(prev_clock: f64, new_clock: f64, state: &ClusterState) -> f64 {
    -(new_clock - prev_clock) * state.in_system() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::fixtures;

    fn servers(counts: &[usize]) -> Vec<Server> {
        counts.iter().enumerate().map(|(i, &c)| Server::new(i, 1.0, c)).collect()
    }

    fn drain_events(state: &mut ClusterState, stream: &mut ArrivalStream) {
        while let Step::Advanced(_) = state.advance(stream) {
            if state.next_event_time(stream) != Some(state.clock()) {
                break;
            }
        }
    }

    #[test]
    fn init_cluster() {
        let state = ClusterState::new(servers(&[4, 8])).unwrap();
        assert_eq!(state.idle_executors(), &[4, 8]);
        assert_eq!(state.idle_total(), 12);
        assert_eq!(state.clock(), 0.0);
        assert!(state.active_apps().is_empty());
        assert_eq!(state.running_count(), 0);
        assert!(matches!(ClusterState::new(vec![]), Err(SimError::NoServers)));
        let one = ClusterState::new(vec![Server::new(0, 2.0, 3)]).unwrap();
        assert_eq!(one.idle_executors(), &[3]);
    }

    #[test]
    fn single_task_finish_time() {
        let mut state = ClusterState::new(servers(&[1])).unwrap();
        let mut stream = ArrivalStream::new(vec![fixtures::single_stage(0, 0.0, 1, 5.0)]).unwrap();
        drain_events(&mut state, &mut stream);
        let runs = state
            .apply_action(SchedAction {
                stage: StageRef::new(0, 0),
                limit: 1,
            })
            .unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].finish, 5.0);
    }

    #[test]
    fn assignments_bounded_by_remaining_tasks() {
        let mut state = ClusterState::new(servers(&[4])).unwrap().with_max_limit(8);
        let mut stream = ArrivalStream::new(vec![fixtures::single_stage(0, 0.0, 2, 1.0)]).unwrap();
        drain_events(&mut state, &mut stream);
        let runs = state
            .apply_action(SchedAction {
                stage: StageRef::new(0, 0),
                limit: 8,
            })
            .unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(state.idle_total(), 2);
    }

    #[test]
    fn binding_limit_places_nothing() {
        let mut state = ClusterState::new(servers(&[8])).unwrap();
        let mut stream = ArrivalStream::new(vec![fixtures::single_stage(0, 0.0, 6, 1.0)]).unwrap();
        drain_events(&mut state, &mut stream);
        let act = |limit| SchedAction {
            stage: StageRef::new(0, 0),
            limit,
        };
        assert_eq!(state.apply_action(act(3)).unwrap().len(), 3);
        assert_eq!(state.apply_action(act(3)).unwrap().len(), 0);
        assert_eq!(state.app(0).unwrap().held, 3);
        assert_eq!(state.apply_action(act(4)).unwrap().len(), 1);
    }

    #[test]
    fn invalid_actions_rejected() {
        let mut state = ClusterState::new(servers(&[2])).unwrap();
        let mut stream = ArrivalStream::new(vec![fixtures::fork_join(0, 0.0, [1.0; 5])]).unwrap();
        drain_events(&mut state, &mut stream);
        assert_eq!(
            state.apply_action(SchedAction {
                stage: StageRef::new(0, 4),
                limit: 1
            }),
            Err(SimError::NotSchedulable(StageRef::new(0, 4)))
        );
        assert_eq!(
            state.apply_action(SchedAction {
                stage: StageRef::new(0, 0),
                limit: 3
            }),
            Err(SimError::LimitOutOfRange { limit: 3, max: 2 })
        );
    }

    #[test]
    fn fork_join_schedulable_progression() {
        let mut state = ClusterState::new(servers(&[2])).unwrap();
        let mut stream = ArrivalStream::new(vec![fixtures::fork_join(0, 0.0, [1.0; 5])]).unwrap();
        drain_events(&mut state, &mut stream);
        assert_eq!(state.schedulable_set(), vec![StageRef::new(0, 0)]);
        state
            .apply_action(SchedAction {
                stage: StageRef::new(0, 0),
                limit: 2,
            })
            .unwrap();
        assert!(state.schedulable_set().is_empty());
        drain_events(&mut state, &mut stream);
        assert_eq!(state.clock(), 1.0);
        assert_eq!(
            state.schedulable_set(),
            vec![StageRef::new(0, 1), StageRef::new(0, 2), StageRef::new(0, 3)]
        );
        assert!(state.audit().is_empty());
    }

    #[test]
    fn task_finish_releases_executor_and_readies_child() {
        let mut state = ClusterState::new(servers(&[1])).unwrap();
        let mut stream = ArrivalStream::new(vec![fixtures::chain(0, 0.0, &[5.0, 1.0])]).unwrap();
        drain_events(&mut state, &mut stream);
        state
            .apply_action(SchedAction {
                stage: StageRef::new(0, 0),
                limit: 1,
            })
            .unwrap();
        assert_eq!(state.idle_total(), 0);
        let Step::Advanced(events) = state.advance(&mut stream) else {
            panic!("expected an event")
        };
        assert_eq!(state.clock(), 5.0);
        assert_eq!(state.idle_total(), 1);
        assert!(events.contains(&SimEvent::StageCompleted {
            time: 5.0,
            app_id: 0,
            stage_id: 0
        }));
        assert!(state.app(0).unwrap().stages[1].ready);
    }

    #[test]
    fn drained_when_idle_and_no_arrivals() {
        let mut state = ClusterState::new(servers(&[1])).unwrap();
        let mut stream = ArrivalStream::new(vec![]).unwrap();
        assert_eq!(state.advance(&mut stream), Step::Drained);
    }

    #[test]
    fn reward_formula() {
        let mut state = ClusterState::new(servers(&[1])).unwrap();
        assert_eq!(compute_reward(1.0, 1.0, &state), 0.0);
        let mut stream = ArrivalStream::new(vec![
            fixtures::single_stage(0, 0.0, 1, 1.0),
            fixtures::single_stage(1, 0.0, 1, 1.0),
            fixtures::single_stage(2, 0.0, 1, 1.0),
        ])
        .unwrap();
        drain_events(&mut state, &mut stream);
        assert_eq!(compute_reward(1.0, 3.0, &state), -6.0);
    }

    #[test]
    fn placement_prefers_fast_servers() {
        let mut state = ClusterState::new(vec![Server::new(0, 1.0, 2), Server::new(1, 2.0, 1)]).unwrap();
        let mut stream = ArrivalStream::new(vec![fixtures::single_stage(0, 0.0, 2, 4.0)]).unwrap();
        drain_events(&mut state, &mut stream);
        let runs = state
            .apply_action(SchedAction {
                stage: StageRef::new(0, 0),
                limit: 3,
            })
            .unwrap();
        assert_eq!(runs[0].server_id, 1);
        assert_eq!(runs[0].finish, 2.0);
        assert_eq!(runs[1].server_id, 0);
        assert_eq!(runs[1].finish, 4.0);
    }
}
