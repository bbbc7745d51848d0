//! Embed the five-stage fork-join application (one source, three parallel
//! stages, one sink) and print per-node, per-DAG and global summaries.

use streamsched::agent::{ModelConfig, PolicyParameters};
use streamsched::diff::Tape;
use streamsched::gnn::{embed_all, AppGraph, FeatureScale};
use streamsched::trace::fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let policy = PolicyParameters::new(ModelConfig::new(4), 1)?;
    let app = fixtures::fork_join(0, 0.0, [1.0, 2.0, 3.0, 0.5, 1.5]);
    let graph = AppGraph::from_dag(&app, &FeatureScale::unit());

    let mut tape = Tape::new(&policy.params);
    let vars = embed_all(&mut tape, &policy.params, &policy.gnn, &[graph])?;
    let set = vars.values(&tape);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join(" ");
    for (stage, h) in &set.per_node {
        println!("stage {}  {}", stage.stage_id, fmt(h));
    }
    println!("dag      {}", fmt(&set.per_dag[&0]));
    println!("global   {}", fmt(&set.global));
    println!("{} tape nodes", tape.len());
    Ok(())
}
