//! Core engine for translating natural-language embeddings into a code
//! embedding space and retrieving code by exact nearest-neighbor search.
//!
//! The pipeline is:
//!
//! 1. embed descriptions and code snippets ([`embedder`]),
//! 2. store them as row-aligned matrices ([`embedding`], [`corpus`]),
//! 3. train a feed-forward [`mapper`] from the description space to the code space,
//! 4. rank code vectors by distance to the mapped query ([`knn`]),
//! 5. score the ranking with distractor-set MRR and correlation analysis ([`eval`]).

pub mod corpus;
pub mod embedder;
pub mod embedding;
mod error;
pub mod eval;
pub mod hashing;
pub mod knn;
pub mod mapper;
pub mod synthetic;

pub use error::{Error, Result};
