//! Red-team benchmark for knowledge-base and reasoning-chain poisoning of
//! retrieval-augmented generation pipelines.
//!
//! The crate provides a corpus store with adversarial lineage tracking, a
//! deterministic offline dense retriever (plus a remote embedding client), two
//! scripted mock generators (a standard instruction-following generator and a
//! reasoning generator with an injection filter), reasoning-template mining,
//! five attack forgers with a retrieval-feedback retry loop, and exact
//! rational attack-success metrics.

pub mod attack;
pub mod bench;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod generator;
pub mod retriever;
pub mod templates;
pub mod text;

pub use error::{Error, Result};
