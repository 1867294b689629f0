//! Allocation-only core of the SDNet conversational question-answering model.
//!
//! Everything here is pure computation over in-memory values: a small
//! reverse-mode autodiff engine, recurrent cells and the Adamax optimizer,
//! dialogue reformulation and token features, the embedding fusion, the
//! attention family, the full model, the word-level F1 metric and the
//! training loop. File formats, checkpoints and the command line live in the
//! `sdnet` companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod dialogue;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};

/// Generator used for every random draw (initialization, dropout, shuffling).
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the generator for `seed` on the given stream.
///
/// Parameter initialization uses stream 0 and training uses stream 1, so a
/// single seed drives a whole run.
pub fn seeded_rng(seed: u64, stream: u64) -> SeededRng {
    use rand::SeedableRng;
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
