//! Audit harness for pretraining-corpus filtering strategies.
//!
//! The crate builds a people knowledge base, ingests web-archive corpora,
//! links person mentions to the knowledge base, runs rule-, classifier- and
//! quality-based filtering strategies over the linked units and measures
//! how each strategy removes mentions of people grouped by gender × origin.

pub mod audit;
pub mod config;
pub mod error;
pub mod ingest;
pub mod kb;
pub mod linker;
pub mod matcher;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod strategies;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
