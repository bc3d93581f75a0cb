//! Find, describe and repair systematic errors of text classifiers.
//!
//! Validation examples are clustered per class; clusters that the classifier
//! gets wrong more often than average are described in natural language by an
//! LLM, and the descriptions drive synthetic data generation or the selection
//! of unlabeled examples to annotate.

pub mod active_learning;
pub mod augment;
pub mod classifier;
pub mod clustering;
pub mod corpus;
pub mod error;
pub mod error_analysis;
pub mod http;
pub mod llm;
pub mod parallel;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
