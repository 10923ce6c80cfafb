//! Simulated tool-calling environment: tool repositories, difficulty
//! curriculum, prompt rendering, language-model backends, multi-turn
//! rollouts, verifier rewards, group advantages and the clipped policy
//! objective.
//!
//! The crate is `no_std` and only needs `alloc`; file IO, HTTP and the
//! command line live in the `toolsim` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backend;
pub mod curriculum;
pub mod grpo;
pub mod prompt;
pub mod reward;
pub mod rollout;
pub mod tools;
