//! One-shot recognition in context with deep metric learning.
//!
//! The crate learns an embedding over three precomputed feature branches
//! (full image, body crop, semantic context) with a weighted sum of a
//! triplet-margin loss over multi-similarity-mined triplets and a
//! cross-entropy loss, then classifies categories never seen in training by
//! nearest-neighbour search against a single support example per category.
//!
//! Module map:
//!
//! - [`numerics`]: matrices, differentiable layers, gradient checking
//! - [`sem2vec`]: segmentation maps to class-presence vectors
//! - [`dataset`]: records, benchmark splits, one-shot tasks, synthetic data
//! - [`mining`]: multi-similarity pair filtering and triplet assembly
//! - [`losses`]: triplet, cross-entropy and combined objectives
//! - [`model`]: the three-branch embedder and its checkpoints
//! - [`oneshot`]: nearest-neighbour inference and evaluation reports
//! - [`trainer`]: batch sampling, RMSprop, learning-rate schedule, training loop
//! - [`verify`]: self-checks against brute-force and numerical oracles
//! - [`cli`]: the command-line front end

pub mod cli;
pub mod dataset;
pub mod losses;
pub mod mining;
pub mod model;
pub mod numerics;
pub mod oneshot;
pub mod rng;
pub mod sem2vec;
pub mod trainer;
pub mod verify;
