//! Train the learned scheduler on 20-application desk traces, then compare
//! its greedy policy against round robin and fair share on held-out traces.
//!
//! Also reports the training-curve trend: mean return over the last quarter
//! of iterations against the first quarter, median over seeds.
//!
//! `cargo run --release --example train_desk -- [iterations] [seeds]`

use streamsched::agent::{LearnedPolicy, PolicyParameters};
use streamsched::baselines::{HeuristicKind, HeuristicPolicy};
use streamsched::recipes::{desk_cluster, desk_env, desk_train_config, desk_workload, model_for};
use streamsched::sim::{metrics, run_episode, EpisodeOptions, Horizon, Policy};
use streamsched::trace::{generate_workload, ApplicationDag};
use streamsched::train::{train, TrainState};

fn mean_jct<'a>(traces: &[Vec<ApplicationDag>], make: &mut dyn FnMut() -> Box<dyn Policy + 'a>) -> f64 {
    let servers = desk_cluster();
    let (mut total, mut n) = (0.0, 0);
    for wl in traces {
        let trace = run_episode(make().as_mut(), wl, &servers, Horizon::unbounded(), EpisodeOptions::default()).unwrap();
        for a in metrics(&trace, &servers).per_app {
            total += a.jct.unwrap();
            n += 1;
        }
    }
    total / n as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(200);
    let seeds: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(5);

    let servers = desk_cluster();
    let held_out: Vec<Vec<ApplicationDag>> = (0..5)
        .map(|k| generate_workload(&desk_workload(20, 0.4, &servers, 1_000_000 + k).unwrap()).unwrap())
        .collect();
    let rr = mean_jct(&held_out, &mut || Box::new(HeuristicPolicy::new(HeuristicKind::RoundRobin)));
    let fair = mean_jct(&held_out, &mut || Box::new(HeuristicPolicy::new(HeuristicKind::FairShare)));
    println!("held-out mean JCT: rr {rr:.3}, fair {fair:.3}");

    let (mut trends, mut ratios) = (Vec::new(), Vec::new());
    for seed in 0..seeds {
        let env = desk_env(seed);
        let config = desk_train_config(seed, iterations);
        let policy = PolicyParameters::new(model_for(&env.servers, &env.workload), seed)?;
        let (state, report) = train(&config, &env, TrainState::new(policy, &config), |row, _| {
            if (row.iteration + 1) % 50 == 0 {
                println!(
                    "  seed {seed} iteration {:>4}: return {:>9.3}, entropy {:.3}, |grad| {:.3e}",
                    row.iteration + 1,
                    row.mean_return,
                    row.entropy,
                    row.grad_norm
                );
            }
            Ok(())
        })?;
        let returns: Vec<f64> = report.rows.iter().map(|r| r.mean_return).collect();
        let q = (returns.len() / 4).max(1);
        let first = returns[..q].iter().sum::<f64>() / q as f64;
        let last = returns[returns.len() - q..].iter().sum::<f64>() / q as f64;
        let learned = mean_jct(&held_out, &mut || Box::new(LearnedPolicy::greedy(&state.policy)));
        println!(
            "seed {seed}: return first quarter {first:.3}, last quarter {last:.3}; learned {learned:.3} = {:.3}×rr, {:.3}×fair",
            learned / rr,
            learned / fair
        );
        trends.push(last - first);
        ratios.push(learned / rr);
    }
    println!(
        "median last−first quarter return {:+.3}; median learned/rr {:.3}",
        median(trends),
        median(ratios)
    );
    Ok(())
}
