//! Generate a heavy-tailed DAG workload calibrated to 40% of the desk
//! cluster's capacity and write it as a JSON-lines trace.
//!
//! `cargo run --example generate_workload -- [apps] [out.jsonl]`

use streamsched::recipes::{desk_cluster, desk_workload};
use streamsched::sim::cluster_capacity;
use streamsched::trace::{generate_workload, load_trace, save_trace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let apps: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(200);
    let path = args
        .next()
        .unwrap_or_else(|| std::env::temp_dir().join("desk-trace.jsonl").display().to_string());

    let servers = desk_cluster();
    let spec = desk_workload(apps, 0.4, &servers, 42)?;
    let workload = generate_workload(&spec)?;
    save_trace(path.as_ref(), &workload)?;
    assert_eq!(load_trace(path.as_ref())?, workload);

    let stages: usize = workload.iter().map(|a| a.stages.len()).sum();
    let tasks: u32 = workload.iter().flat_map(|a| a.stages.iter().map(|s| s.task_count)).sum();
    let work: f64 = workload.iter().map(|a| a.total_work()).sum();
    let span = workload.last().map(|a| a.arrival_time).unwrap_or(0.0);
    println!("{} applications, {stages} stages, {tasks} tasks -> {path}", workload.len());
    println!("arrival rate {:.4}/s over {span:.1}s", spec.arrival_rate);
    println!(
        "realized load {:.3} (target {})",
        work / span / cluster_capacity(&servers),
        spec.target_load
    );
    Ok(())
}
