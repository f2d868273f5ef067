//! Core library for context-aware unit-test input readability.
//!
//! The pipeline has three legs:
//!
//! 1. **Mining** ([`miner`]): extract primitive-type parameter sites from
//!    code under test ([`code_model`]) and ask an LLM, under a token
//!    budget, which prepared readability context ([`registry`]) each
//!    parameter's values should match.
//! 2. **Judging** ([`judge`]): bind literal test inputs to those sites and
//!    decide, per context, whether each input satisfies it using the
//!    context's tool combination (LLM, NER, regex, number rules).
//! 3. **Synthesis** ([`fitness`]): drive a seeded genetic search with
//!    string-distance fitness functions to produce context-satisfying
//!    inputs, and reformat number literals into their context formats.
//!
//! [`metrics`] aggregates judgments and search outcomes into reports.

pub mod clients;
pub mod code_model;
pub mod error;
pub mod fitness;
pub mod judge;
pub mod metrics;
pub mod miner;
pub mod registry;

pub use error::{Error, Result};
