//! Syntax-guided grammatical error correction.
//!
//! A Transformer encoder/decoder with a copy mechanism, a graph-attention
//! encoder over labeled dependency trees, and auxiliary tree-correction
//! objectives, together with BPE tokenization, staged training, beam
//! search with ensembling and right-to-left re-ranking, and an F0.5 edit
//! scorer.

pub mod config;
pub mod decoder;
pub mod deptree;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod tokenizer;
pub mod training;
pub mod treecorr;

pub use error::{Error, Result};
