//! Sequence tagging with hierarchical recurrent encoders, a margin-based
//! linear-chain CRF, and multi-task parameter sharing.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`] holds the tensor type, deterministic RNG, and
//!   differentiable primitives everything else is built from.
//! * [`data`] reads and writes tabular token files, builds vocabularies,
//!   and scores predictions (chunk F1 and token accuracy).
//! * [`encoder`] is the character-then-word bidirectional GRU stack.
//! * [`crf`] is the margin-augmented linear-chain output layer.
//! * [`tagger`] glues one encoder to one CRF for a single task.
//! * [`transfer`] builds joint two-task models with controlled sharing.
//! * [`training`] runs the joint stochastic training loop.
//! * [`checkpoint`] persists and restores trained models.

pub mod checkpoint;
pub mod cli;
pub mod crf;
pub mod data;
pub mod encoder;
pub mod error;
pub mod numerics;
pub mod tagger;
pub mod training;
pub mod transfer;

pub use error::{Error, Result};
