//! Brute-force the optimal total completion time of a small two-app
//! instance and compare each heuristic against it.

use streamsched::baselines::{brute_force_oracle, HeuristicKind, HeuristicPolicy};
use streamsched::sim::{metrics, run_episode, EpisodeOptions, Horizon, Server};
use streamsched::trace::fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let servers = vec![Server::new(0, 1.0, 1), Server::new(1, 2.0, 1)];
    let apps = vec![
        fixtures::chain(0, 0.0, &[3.0, 2.0]),
        fixtures::single_stage(1, 0.0, 2, 1.0),
        fixtures::single_stage(2, 0.5, 1, 4.0),
    ];
    let best = brute_force_oracle(&apps, &servers)?;
    println!("optimum {:.3}", best.cost);
    for run in &best.schedule {
        println!(
            "  app {} stage {} task {} on server {}: {:.3} -> {:.3}",
            run.app_id, run.stage_id, run.task_index, run.server_id, run.start, run.finish
        );
    }
    for kind in [
        HeuristicKind::RoundRobin,
        HeuristicKind::FairShare,
        HeuristicKind::CriticalPath,
        HeuristicKind::Random,
    ] {
        let mut policy = HeuristicPolicy::new(kind);
        let trace = run_episode(&mut policy, &apps, &servers, Horizon::unbounded(), EpisodeOptions::default())?;
        let cost: f64 = metrics(&trace, &servers).per_app.iter().filter_map(|a| a.jct).sum();
        println!("{:<6} {cost:.3} (gap {:+.3})", kind.to_string(), cost - best.cost);
    }
    Ok(())
}
