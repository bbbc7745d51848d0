//! Build a run configuration in code and produce the comparison table the
//! `compare` command writes, for heuristics only.

use streamsched::cli::{cmd_compare, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig {
        out: std::env::temp_dir().join("streamsched-compare"),
        ..RunConfig::default()
    };
    if let Some(spec) = &mut config.workload.spec {
        spec.app_count = 200;
        spec.target_load = 0.8;
    }
    config.eval.seeds = vec![0, 1, 2];
    config.validate()?;
    for row in cmd_compare(&config)? {
        println!(
            "{:<7} {:.3}  utilization {:.3}",
            row.scheduler.to_string(),
            row.mean_jct.unwrap_or(f64::NAN),
            row.utilization
        );
    }
    println!("table in {}", config.out.join("compare.csv").display());
    Ok(())
}
