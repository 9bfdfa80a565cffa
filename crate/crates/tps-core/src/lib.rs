//! Desk-scale text-based person search.
//!
//! The pipeline generates a synthetic attribute-grounded corpus of
//! (identity, image, caption) triples, trains a pair of tiny transformer
//! encoders to embed patch-grid images and captions into a shared space,
//! and evaluates text-to-image retrieval with top-k accuracy and mAP.
//!
//! Training combines four objectives: a normalized-softmax classification
//! loss, a pairwise alignment loss, an integrity ranking loss over
//! multi-integrity descriptions (MIDs), and a dynamic attribute prompt
//! (DAP) loss whose gradient reaches only the visual encoder.

// Forward/backward kernels pass explicit dimensions and gradient slots.
#![allow(clippy::too_many_arguments)]

pub mod corpus;
pub mod dapgen;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod exec;
pub mod losses;
pub mod midgen;
pub mod rng;
pub mod textparse;
pub mod trainer;

pub use error::CoreError;
