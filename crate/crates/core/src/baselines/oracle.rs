use thiserror::Error;

use crate::sim::{Server, TaskRun};
use crate::trace::{validate_dag, ApplicationDag};

pub const ORACLE_MAX_STAGES: usize = 6;
pub const ORACLE_MAX_TASKS: usize = 8;
pub const ORACLE_MAX_EXECUTORS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(
        "instance has {stages} stages, {tasks} tasks and {executors} executors; \
         the oracle accepts at most {ORACLE_MAX_STAGES}, {ORACLE_MAX_TASKS} and {ORACLE_MAX_EXECUTORS}"
    )]
    TooLarge { stages: usize, tasks: usize, executors: usize },
    #[error("invalid instance: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Minimum of `Σ (completion − arrival)` over all applications.
    pub cost: f64,
    /// One schedule attaining `cost`.
    pub schedule: Vec<TaskRun>,
}

#[derive(Debug, Clone)]
struct Task {
    app: usize,
    stage: u32,
    index: u32,
    work: f64,
    parents: Vec<usize>,
    /// Previous task of the same stage; identical tasks are placed in index order.
    sibling: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Machine {
    server: usize,
    speed: f64,
}

struct Search<'a> {
    tasks: Vec<Task>,
    machines: Vec<Machine>,
    arrivals: Vec<f64>,
    apps: &'a [ApplicationDag],
    max_speed: f64,
    free: Vec<f64>,
    finish: Vec<f64>,
    machine_of: Vec<usize>,
    start: Vec<f64>,
    done: Vec<bool>,
    best: f64,
    best_schedule: Vec<(usize, usize, f64, f64)>,
}

/// Exact minimum total completion time over every non-preemptive schedule
/// of the given applications on the given executors.
///
/// Depth-first search over (next task, executor) pairs with each task
/// started as early as its executor and parents allow; every semi-active
/// schedule is reachable this way.
pub fn brute_force_oracle(apps: &[ApplicationDag], servers: &[Server]) -> Result<OracleSolution, OracleError> {
    let stages: usize = apps.iter().map(|a| a.stages.len()).sum();
    let task_total: usize = apps.iter().flat_map(|a| &a.stages).map(|s| s.task_count as usize).sum();
    let executors: usize = servers.iter().map(|s| s.executor_count).sum();
    if stages > ORACLE_MAX_STAGES || task_total > ORACLE_MAX_TASKS || executors > ORACLE_MAX_EXECUTORS {
        return Err(OracleError::TooLarge {
            stages,
            tasks: task_total,
            executors,
        });
    }
    if executors == 0 {
        return Err(OracleError::Invalid("no executors".into()));
    }
    for a in apps {
        validate_dag(a).map_err(|v| OracleError::Invalid(format!("app {}: {:?}", a.app_id, v)))?;
    }

    let mut tasks = Vec::with_capacity(task_total);
    for (ai, app) in apps.iter().enumerate() {
        let mut first_of_stage = Vec::with_capacity(app.stages.len());
        for s in &app.stages {
            first_of_stage.push(tasks.len());
            for i in 0..s.task_count {
                tasks.push(Task {
                    app: ai,
                    stage: s.stage_id,
                    index: i,
                    work: s.task_work,
                    parents: Vec::new(),
                    sibling: (i > 0).then(|| tasks.len() - 1),
                });
            }
        }
        for (si, s) in app.stages.iter().enumerate() {
            let parents: Vec<usize> = s
                .parent_ids
                .iter()
                .flat_map(|&p| {
                    let first = first_of_stage[p as usize];
                    first..first + app.stages[p as usize].task_count as usize
                })
                .collect();
            for t in first_of_stage[si]..first_of_stage[si] + s.task_count as usize {
                tasks[t].parents = parents.clone();
            }
        }
    }
    let machines: Vec<Machine> = servers
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.executor_count).map(move |_| Machine { server: i, speed: s.speed }))
        .collect();
    let n = tasks.len();
    let mut search = Search {
        max_speed: machines.iter().map(|m| m.speed).fold(0.0, f64::max),
        free: vec![0.0; machines.len()],
        finish: vec![0.0; n],
        machine_of: vec![0; n],
        start: vec![0.0; n],
        done: vec![false; n],
        best: f64::INFINITY,
        best_schedule: Vec::new(),
        arrivals: apps.iter().map(|a| a.arrival_time).collect(),
        tasks,
        machines,
        apps,
    };
    search.dfs(0);

    let mut schedule: Vec<TaskRun> = search
        .best_schedule
        .iter()
        .map(|&(t, m, start, finish)| {
            let task = &search.tasks[t];
            TaskRun {
                app_id: search.apps[task.app].app_id,
                stage_id: task.stage,
                task_index: task.index,
                server_id: search.machines[m].server,
                start,
                finish,
                limit: executors,
            }
        })
        .collect();
    schedule.sort_by(|a, b| a.start.total_cmp(&b.start));
    Ok(OracleSolution {
        cost: search.best,
        schedule,
    })
}

impl Search<'_> {
    fn cost_bound(&self) -> f64 {
        let min_free = self.free.iter().copied().fold(f64::INFINITY, f64::min);
        let mut completion: Vec<f64> = self.arrivals.clone();
        for (t, task) in self.tasks.iter().enumerate() {
            let end = if self.done[t] {
                self.finish[t]
            } else {
                let ready = task
                    .parents
                    .iter()
                    .filter(|&&p| self.done[p])
                    .map(|&p| self.finish[p])
                    .fold(self.arrivals[task.app].max(min_free), f64::max);
                ready + task.work / self.max_speed
            };
            completion[task.app] = completion[task.app].max(end);
        }
        completion.iter().zip(&self.arrivals).map(|(c, a)| c - a).sum()
    }

    fn dfs(&mut self, placed: usize) {
        if placed == self.tasks.len() {
            let cost = self.cost_bound();
            if cost < self.best {
                self.best = cost;
                self.best_schedule = (0..self.tasks.len())
                    .map(|t| (t, self.machine_of[t], self.start[t], self.finish[t]))
                    .collect();
            }
            return;
        }
        if self.cost_bound() >= self.best {
            return;
        }
        for t in 0..self.tasks.len() {
            if self.done[t] {
                continue;
            }
            let task = &self.tasks[t];
            if task.sibling.is_some_and(|s| !self.done[s]) || task.parents.iter().any(|&p| !self.done[p]) {
                continue;
            }
            let ready = task.parents.iter().map(|&p| self.finish[p]).fold(self.arrivals[task.app], f64::max);
            let work = task.work;
            for m in 0..self.machines.len() {
                // executors with equal speed and equal free time are interchangeable
                let twin = (0..m).any(|k| self.machines[k].speed == self.machines[m].speed && self.free[k] == self.free[m]);
                if twin {
                    continue;
                }
                let start = self.free[m].max(ready);
                let finish = start + work / self.machines[m].speed;
                let saved = self.free[m];
                self.free[m] = finish;
                self.done[t] = true;
                self.start[t] = start;
                self.finish[t] = finish;
                self.machine_of[t] = m;
                self.dfs(placed + 1);
                self.done[t] = false;
                self.free[m] = saved;
            }
        }
    }
}
