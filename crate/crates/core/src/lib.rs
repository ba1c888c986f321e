//! Human-steered prompt refinement on a small, deterministic text-to-image
//! model with explicit cross-attention.
//!
//! A session starts from a prompt and runs for a bounded number of rounds.
//! Each round applies one edit (swap a word, add a phrase, or re-weight a
//! token), regenerates while optionally re-using the previous round's
//! attention maps, and scores the image against the prompt. A small policy
//! trained with PPO and forgetting-curve replay chooses which kind of edit to
//! suggest next.
//!
//! Modules:
//!
//! - [`prompt`]: vocabulary, weighted prompts, edit operations, alignment.
//! - [`generator`]: the toy generator and its attention stack, PNG I/O.
//! - [`edit`]: attention edit operators and their finite-difference ascent.
//! - [`reward`]: similarity score and Gaussian mutual information.
//! - [`rl`]: replay pool, linear policy/value heads, PPO updates, checkpoints.
//! - [`session`]: the multi-round loop, simulated users, logs, training.
//! - [`metrics`]: SSIM, rounds statistics, paired comparisons.
//! - [`service`] and [`cli`]: HTTP API and the `coadapt` binary.
//!
//! The `examples/` directory has one runnable program per capability, e.g.
//! `cargo run --release --example simulated_session`.
//!
//! ```
//! use coadapt::prompt::EditOp;
//! use coadapt::session::{new_session, step_round, Engine};
//!
//! let engine = Engine::default();
//! let s0 = new_session("a quiet lake at dusk", 1, &engine).unwrap();
//! let s1 = step_round(&s0, &EditOp::Reweight { index: 2, scale: 1.5 }, true, &engine).unwrap();
//! assert_eq!(s1.round, 1);
//! ```

pub mod cli;
pub mod config;
pub mod edit;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod metrics;
pub mod prompt;
pub mod reward;
pub mod rl;
pub mod service;
pub mod session;

pub use error::{Error, Result};
