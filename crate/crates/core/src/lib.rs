//! Human-machine decision fusion for collaborative key-sentence matching.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: shared domain types and their invariants.
//! - [`embedding`]: deterministic feature-hashing sentence embedder and vector import.
//! - [`prototypes`]: k-means decision prototypes and nearest-prototype lookup.
//! - [`fusion`]: temperature scaling and the closed-form human-machine posterior.
//! - [`protoem`]: per-prototype confusion-matrix estimation by EM.
//! - [`simulation`]: simulated humans and machines, ablation combiners, metrics and
//!   the experiment harness.
//! - [`matcher`]: relation prediction for case pairs from fused key sentences.
//! - [`corpus`]: JSON Lines formats and the seeded synthetic generator.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod matcher;
pub mod model;
pub mod protoem;
pub mod prototypes;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use model::{
    CasePair, CategorySet, ConfusionMatrix, DecisionLog, DecisionRecord, Document, FusedDecision,
    HumanDecision, MachineDecision, ModelConfig, PrototypeModel, Sentence, SentenceRef, Validate,
    ValidationReport,
};

/// Map from sentence reference to its embedding vector.
pub type EmbeddingMap = std::collections::BTreeMap<SentenceRef, Vec<f64>>;
