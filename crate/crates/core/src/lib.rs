//! Simulated mobile-GUI environment and trajectory-level policy optimization.
//!
//! The crate is organized bottom-up: [`world`] is the deterministic app
//! simulator, [`eval`] the success oracle, [`policy`] a tokenized linear
//! softmax policy, [`rollout`] the grouped rollout pool, [`taskgen`] and
//! [`filter`] the task pipeline, [`grpo`] the optimizer and [`harness`] the
//! training loop behind the `guirl` command line.

pub mod eval;
pub mod filter;
pub mod grpo;
pub mod harness;
pub mod policy;
pub mod rollout;
pub mod taskgen;
pub mod transport;
pub mod world;
