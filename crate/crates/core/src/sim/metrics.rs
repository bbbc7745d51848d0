use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::cluster::SimEvent;
use super::{EpisodeTrace, Server};
use crate::trace::ApplicationDag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppMetrics {
    pub app_id: u64,
    pub arrival: f64,
    pub completion: Option<f64>,
    pub jct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean of `completion − arrival` over finished applications.
    pub avg_completion: Option<f64>,
    pub finished: usize,
    pub unfinished: usize,
    /// Busy executor-seconds over `total executors × span`, where the span
    /// runs from the first arrival to the end of the episode.
    pub utilization: f64,
    pub per_app: Vec<AppMetrics>,
}

pub fn metrics(trace: &EpisodeTrace, cluster: &[Server]) -> Metrics {
    let per_app: Vec<AppMetrics> = trace
        .apps
        .iter()
        .map(|a| AppMetrics {
            app_id: a.app_id,
            arrival: a.arrival,
            completion: a.completion,
            jct: a.completion.map(|c| c - a.arrival),
        })
        .collect();
    let jcts: Vec<f64> = per_app.iter().filter_map(|a| a.jct).collect();
    let finished = jcts.len();
    let avg_completion = (finished > 0).then(|| jcts.iter().sum::<f64>() / finished as f64);

    let start = trace.apps.iter().map(|a| a.arrival).fold(f64::INFINITY, f64::min);
    let span = trace.end_time - start;
    let executors = super::total_executors(cluster) as f64;
    let utilization = if span > 0.0 && executors > 0.0 {
        let busy: f64 = trace.runs.iter().map(|r| (r.finish.min(trace.end_time) - r.start).max(0.0)).sum();
        busy / (executors * span)
    } else {
        0.0
    };
    Metrics {
        avg_completion,
        finished,
        unfinished: per_app.len() - finished,
        utilization,
        per_app,
    }
}

/// `app_id,arrival,completion,jct` rows (empty fields for unfinished
/// applications) followed by one `#summary` line.
pub fn write_jct_csv<W: Write>(mut out: W, m: &Metrics) -> std::io::Result<()> {
    writeln!(out, "app_id,arrival,completion,jct")?;
    for a in &m.per_app {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", a.app_id, a.arrival, opt(a.completion), opt(a.jct))?;
    }
    writeln!(
        out,
        "#summary finished={} unfinished={} mean_jct={} utilization={}",
        m.finished,
        m.unfinished,
        m.avg_completion.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
        m.utilization
    )
}

/// Newline-delimited JSON, one simulator event per line.
pub fn write_event_log<W: Write>(mut out: W, events: &[SimEvent]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub enum InvariantViolation {
    /// A task started before one of its parent stages had finished.
    Dependency {
        app_id: u64,
        stage_id: u32,
        start: f64,
        parent: u32,
    },
    StartBeforeArrival {
        app_id: u64,
        stage_id: u32,
        start: f64,
    },
    /// More concurrent tasks on a server than it has executors.
    ExecutorOverflow {
        server_id: usize,
        time: f64,
        busy: usize,
    },
    ParallelismCap {
        app_id: u64,
        time: f64,
        held: usize,
        limit: usize,
    },
    Duration {
        app_id: u64,
        stage_id: u32,
        task_index: u32,
    },
    ClockRegression {
        at: f64,
        previous: f64,
    },
    RewardIdentity {
        total_reward: f64,
        total_jct: f64,
    },
    Audit(String),
}

/// Re-derives the simulator invariants from a finished trace, independently
/// of the state machine that produced it.
pub fn audit_trace(trace: &EpisodeTrace, servers: &[Server], workload: &[ApplicationDag]) -> Vec<InvariantViolation> {
    let mut out: Vec<InvariantViolation> = trace.audit_failures.iter().cloned().map(InvariantViolation::Audit).collect();
    let dags: BTreeMap<u64, &ApplicationDag> = workload.iter().map(|d| (d.app_id, d)).collect();

    // stage completion = last finish, if every task ran and finished by the end
    let mut stage_runs: BTreeMap<(u64, u32), (u32, f64)> = BTreeMap::new();
    for r in &trace.runs {
        let e = stage_runs.entry((r.app_id, r.stage_id)).or_insert((0, f64::NEG_INFINITY));
        if r.finish <= trace.end_time {
            e.0 += 1;
        }
        e.1 = e.1.max(r.finish);
    }
    let stage_done = |app: u64, stage: u32| -> Option<f64> {
        let dag = dags.get(&app)?;
        let want = dag.stages.get(stage as usize)?.task_count;
        stage_runs.get(&(app, stage)).and_then(|&(n, t)| (n == want).then_some(t))
    };

    for r in &trace.runs {
        let Some(dag) = dags.get(&r.app_id) else { continue };
        let spec = &dag.stages[r.stage_id as usize];
        if r.start < dag.arrival_time {
            out.push(InvariantViolation::StartBeforeArrival {
                app_id: r.app_id,
                stage_id: r.stage_id,
                start: r.start,
            });
        }
        for &p in &spec.parent_ids {
            if stage_done(r.app_id, p).is_none_or(|done| done > r.start) {
                out.push(InvariantViolation::Dependency {
                    app_id: r.app_id,
                    stage_id: r.stage_id,
                    start: r.start,
                    parent: p,
                });
            }
        }
        let expected = r.start + spec.task_work / servers[r.server_id].speed;
        if (r.finish - expected).abs() > 1e-9 * expected.abs().max(1.0) {
            out.push(InvariantViolation::Duration {
                app_id: r.app_id,
                stage_id: r.stage_id,
                task_index: r.task_index,
            });
        }
    }

    // per-server sweep: releases before acquisitions at equal times
    for (s, server) in servers.iter().enumerate() {
        let mut points: Vec<(f64, i32)> = Vec::new();
        for r in trace.runs.iter().filter(|r| r.server_id == s) {
            points.push((r.start, 1));
            points.push((r.finish, -1));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut busy = 0i64;
        for (t, d) in points {
            busy += d as i64;
            if busy > server.executor_count as i64 {
                out.push(InvariantViolation::ExecutorOverflow {
                    server_id: s,
                    time: t,
                    busy: busy as usize,
                });
            }
        }
    }

    // holdings right after each placement, in placement order
    let mut placed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in &trace.runs {
        let finishes = placed.entry(r.app_id).or_default();
        finishes.push(r.finish);
        let held = finishes.iter().filter(|&&f| f > r.start).count();
        if held > r.limit {
            out.push(InvariantViolation::ParallelismCap {
                app_id: r.app_id,
                time: r.start,
                held,
                limit: r.limit,
            });
        }
    }

    let mut prev = f64::NEG_INFINITY;
    for d in &trace.decisions {
        if d.time < prev {
            out.push(InvariantViolation::ClockRegression {
                at: d.time,
                previous: prev,
            });
        }
        prev = d.time;
    }
    let mut prev = f64::NEG_INFINITY;
    for r in &trace.runs {
        if r.start < prev {
            out.push(InvariantViolation::ClockRegression {
                at: r.start,
                previous: prev,
            });
        }
        prev = r.start;
    }

    if trace.all_finished() {
        let total_jct: f64 = trace.apps.iter().map(|a| a.completion.unwrap() - a.arrival).sum();
        let total_reward = trace.total_reward();
        if (total_reward + total_jct).abs() > 1e-9 * total_jct.abs().max(1.0) {
            out.push(InvariantViolation::RewardIdentity { total_reward, total_jct });
        }
    }
    out
}
