//! Similarity engine for multilingual news article pairs.
//!
//! A Siamese document encoder supplies a narrative cosine, four entity-class
//! cosines add geographic, organizational, temporal and numeric overlap, and a
//! small fusion network combines the five into one score on `[0, 1]`.

pub mod augment;
pub mod corpus;
pub mod encoder;
pub mod entities;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod fusion;
pub mod optim;
pub mod text;

pub use error::{Error, Result};
