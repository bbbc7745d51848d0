//! Train a couple of iterations, save a checkpoint, reload it and check the
//! parameters survive bit for bit.

use streamsched::agent::PolicyParameters;
use streamsched::checkpoint::Checkpoint;
use streamsched::recipes::{desk_env, desk_train_config, model_for};
use streamsched::train::{train, TrainState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = desk_env(0);
    let config = streamsched::train::TrainConfig {
        num_agents: 4,
        ..desk_train_config(0, 2)
    };
    let policy = PolicyParameters::new(model_for(&env.servers, &env.workload), 0)?;
    let (state, _) = train(&config, &env, TrainState::new(policy, &config), |_, _| Ok(()))?;

    let dir = std::env::temp_dir().join("streamsched-checkpoint-example");
    let path = dir.join("checkpoint.json");
    Checkpoint::from_state(&state).save(&path)?;
    let restored = Checkpoint::load(&path)?.into_state()?;
    let same = state
        .policy
        .params
        .values()
        .iter()
        .zip(restored.policy.params.values())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!(
        "{} parameters at iteration {} written to {}; bit-exact reload: {same}",
        restored.policy.params.len(),
        restored.iteration,
        path.display()
    );
    Ok(())
}
