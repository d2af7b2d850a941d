//! Measuring and verifying linear, cross-concept-orthogonal factorization of
//! embeddings over concept grids.

pub mod concept_space;
pub mod embedding_store;
pub mod error;
pub mod factor_model;
pub mod linalg;
pub mod metrics;
pub mod oracles;
pub mod probe_trainer;
pub mod synthetic_lab;

pub use concept_space::{ConceptSpace, ConceptTuple, TrainingSupport, ValidityRule};
pub use embedding_store::{read_dump, write_dump, EmbeddingSet, SpanProjector, WhitenTransform};
pub use error::{Error, Result};
pub use factor_model::{recover_by_averaging, recover_by_least_squares, FactorSet};
pub use probe_trainer::{Geometry, Loss, ProbeBank, TrainConfig};
