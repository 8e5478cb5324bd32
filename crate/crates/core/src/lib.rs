//! Street-view safety scoring: pairwise tournaments over a scored anchor
//! set, K-NN propagation of anchor scores through image embeddings, and
//! evaluation and map export of the results.

pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod geo;
pub mod judges;
pub mod knn;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tournament;

pub use error::{Error, Result};
pub use model::{AnchorSet, Choice, Corpus, Heading, ImageKey, Judgment, JudgmentLog, SafetyCriteria, SviRecord};
