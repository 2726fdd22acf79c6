//! Entropy models of commuting: doubly constrained trip distribution, the
//! resident/worker exchange chain behind it, Wardrop equilibria of routing
//! games, and the logit-imitation dynamics that select among them.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beckmann;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod exchange_chain;
pub mod formats;
pub mod network;
pub mod od_entropy;

pub use error::{Error, Result};

/// Environment variable capping the number of replica worker threads.
pub const THREADS_ENV: &str = "WARDROP_LAB_THREADS";

/// Thread cap from `WARDROP_LAB_THREADS`; `None` when unset or not a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}
