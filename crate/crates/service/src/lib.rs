//! Annotation service for human pairwise votes, and mock endpoints for the
//! MLLM judge and the embedding provider.

pub mod annotate;
pub mod http;
pub mod mock;

pub use annotate::{Annotator, Assignment, Progress, ServedPair, VoteError};
pub use http::{router, spawn, ServerHandle};
