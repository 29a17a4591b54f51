//! Adaptive memory crystallization for experience replay.
//!
//! Stored transitions carry a crystallization state `c ∈ [0, 1]` that drifts
//! toward stability in proportion to their utility and decays under
//! interference. The state selects one of three replay buffers (liquid, glass,
//! crystal), shapes sampling priority, and scales the per-sample learning rate
//! by `(1 − c)²`.
//!
//! The crate is split into the diffusion analytics ([`sde`], [`ensemble`],
//! [`fp`]), the replay machinery ([`utility`], [`memory`]), a tabular
//! continual-learning harness ([`agent`], [`envs`]) and statistical checks
//! ([`analysis`]).

// `!(x > 0.0)` is the idiom used throughout to reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod analysis;
pub mod ensemble;
pub mod envs;
pub mod error;
pub mod fp;
pub mod memory;
pub mod par;
pub mod rng;
pub mod sde;
pub mod special;
pub mod utility;

pub use error::{AmcError, Result};
