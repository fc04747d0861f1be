//! ChordMixer: a sequence backbone for inputs of arbitrary length.
//!
//! Each block rotates groups of channels ("tracks") by power-of-two
//! offsets, then mixes every position with a shared two-layer MLP,
//! wrapped in a residual connection. A sequence of length `N` passes
//! through the first `ceil(log2 N)` blocks only, after which every output
//! position has seen every input position.
//!
//! The crate is organized bottom-up:
//!
//! - [`autograd`]: dense tensors, a reverse-mode tape, Adam and seeded RNG streams.
//! - [`topology`]: track layouts, the Chord graph, reachability and
//!   reaching-probability analysis.
//! - [`model`]: the network itself, its heads, structural checks and checkpoints.
//! - [`data`]: the adding problem, labeled symbol datasets, splits and
//!   length-bucketed batching.
//! - [`training`]: the training loop, metrics and percentile reports.
//!
//! Data-parallel loops (evaluation over instances, large matrix products,
//! random-walk steps) run on rayon when the `parallel` feature is enabled
//! and fall back to plain iteration otherwise. Both paths produce
//! bitwise-identical results.

pub mod autograd;
pub mod data;
mod error;
pub mod exec;
pub mod model;
pub mod topology;
pub mod training;

pub use error::{Error, Result};

/// `ceil(log2 n)` for `n >= 1`; `0` for `n <= 1`.
pub fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}
