//! Std side of the environment: config files, the chat-completions client,
//! step orchestration, persistence, the session server and the CLI.

pub mod backends;
pub mod config;
pub mod error;
pub mod orchestrator;
pub mod persist;
pub mod pool;
pub mod remote;
pub mod server;

use orchestrator::{run_step, Environment};
use persist::RunStore;
use toolsim_core::curriculum::DifficultyState;

pub use error::{Error, Result};

/// Runs steps until `total_steps` have completed, picking up after the last
/// step already recorded in `store`. Returns the final difficulty state.
pub fn run(env: &Environment, store: &RunStore, total_steps: u64) -> Result<DifficultyState> {
    let mut state = store.resume_state(env.initial_state())?;
    if state.step_index > 0 {
        log::info!("resuming at step {} with difficulty {}", state.step_index, state.difficulty);
    }
    while state.step_index < total_steps {
        let artifact = run_step(env, &state)?;
        store.write_step(&artifact)?;
        state = artifact.next_state();
    }
    Ok(state)
}
