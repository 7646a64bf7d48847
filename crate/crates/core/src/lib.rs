//! Evaluation and simulation toolkit for value-aware human-like agents.
//!
//! - [`metrics`]: accuracy, MSE, exact 1-D Wasserstein distance, linguistic
//!   suite, Var% and rigidity/polarization panels.
//! - [`lexical`]: TF-IDF word-to-value projection and its exports.
//! - [`topology`]: PCA angular ordering and the circular inversion score.
//! - [`verifier`]: a small trainable value verifier with analytic gradients.
//! - [`harness`]: iterative value reasoning, generate-then-select, memory
//!   retrieval, preference-pair construction and prompt templates.
//! - [`dataio`]: dataset files, user-level splits and synthetic fixtures.

pub mod dataio;
pub mod domain;
pub mod harness;
pub mod lexical;
pub mod metrics;
pub mod seed;
pub mod text;
pub mod topology;
pub mod verifier;

pub use domain::{
    canonical_order, validate_profile, CandidateSet, DomainError, DomainKind, EmpiricalDistribution, InteractionRecord,
    PreferencePair, Provenance, ValueActivation, ValueDimension, ValueProfile, NUM_VALUES,
};
