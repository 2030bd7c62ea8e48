//! Pairwise Shapley-Taylor interaction indices (STII) for black-box models.
//!
//! The crate is organized around a value oracle (a map from feature-presence
//! masks to model output vectors), an estimation engine that turns oracle
//! calls into Shapley values and pairwise interaction indices, and analyses
//! that relate interactions to known structure in text and speech inputs.
//!
//! - [`record`]: instances, coalition masks, value vectors, interaction records
//! - [`oracle`]: toy games, subprocess and HTTP oracles, evaluation cache
//! - [`engine`]: exact and permutation-sampled Shapley values and STII
//! - [`stats`]: Spearman correlation and bootstrap confidence intervals
//! - [`text`]: positional-distance curves, syntax correlation grid, MWE comparison
//! - [`speech`]: phone alignments, boundary windows, consonant/vowel contrasts
//! - [`cli`]: the `compute`, `analyze`, `selftest` and `protocol-echo` commands

pub mod cli;
pub mod engine;
pub mod oracle;
pub mod record;
pub mod selftest;
pub mod speech;
pub mod stats;
pub mod table;
pub mod text;

pub use engine::{
    exact_shapley, exact_stii, sampled_shapley, sampled_stii, stii_matrix, ContextMode, EngineError,
    EstimatorKind, Normalization, SamplingConfig, ShapleyResult, StiiConfig, StiiEstimate,
};
pub use oracle::{OracleError, OracleHandle, OracleOptions, OracleSpec, OutputMode, ToyGameSpec};
pub use record::{
    validate_instance, CoalitionMask, Estimator, Instance, InstanceSpec, InteractionRecord, Modality,
    ValueVector,
};
