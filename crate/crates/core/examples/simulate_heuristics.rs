//! Run every heuristic scheduler on the same desk trace and report mean
//! completion time and utilization, with the simulator's audit enabled.

use streamsched::baselines::{HeuristicKind, HeuristicPolicy};
use streamsched::recipes::{desk_cluster, desk_workload};
use streamsched::sim::{metrics, run_episode, EpisodeOptions, Horizon};
use streamsched::trace::generate_workload;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let servers = desk_cluster();
    let workload = generate_workload(&desk_workload(100, 0.6, &servers, 7)?)?;
    println!("{:<8} {:>10} {:>12} {:>9}", "policy", "mean JCT", "utilization", "decisions");
    for kind in [
        HeuristicKind::RoundRobin,
        HeuristicKind::FairShare,
        HeuristicKind::CriticalPath,
        HeuristicKind::Random,
    ] {
        let mut policy = HeuristicPolicy::with_options(kind, None, 7);
        let options = EpisodeOptions {
            audit: true,
            ..EpisodeOptions::default()
        };
        let trace = run_episode(&mut policy, &workload, &servers, Horizon::unbounded(), options)?;
        assert!(trace.audit_failures.is_empty(), "{:?}", trace.audit_failures);
        let m = metrics(&trace, &servers);
        println!(
            "{:<8} {:>10.3} {:>12.3} {:>9}",
            kind.to_string(),
            m.avg_completion.unwrap_or(f64::NAN),
            m.utilization,
            trace.decisions.len()
        );
    }
    Ok(())
}
