//! Stops a run half way, saves it, reloads it and finishes. The resumed
//! frames match an uninterrupted run exactly.

use canesim::scenario::load_scenario;
use canesim::sim::{load_checkpoint, run, save_checkpoint, SimulationState};

fn main() -> canesim::Result<()> {
    let mut config = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/default.toml"))?;
    config.steps = 40;
    let straight = run(&config)?;

    let mut first_half = config.clone();
    first_half.steps = 20;
    let mut state = SimulationState::new(first_half)?;
    state.run_to_end()?;

    let path = std::env::temp_dir().join("canesim-checkpoint.json");
    save_checkpoint(&state, &path)?;
    let mut resumed = load_checkpoint(&path)?;
    resumed.config.steps = 40;
    resumed.run_to_end()?;

    println!("checkpoint at {}", path.display());
    println!("resumed run identical to straight run: {}", resumed.metrics == straight);
    Ok(())
}
