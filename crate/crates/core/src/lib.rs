//! Retrieval-augmented analysis of corporate climate reports against the
//! TCFD recommendations.

pub mod analysis;
pub mod config;
pub mod embedding;
pub mod engine;
pub mod gateway;
pub mod index;
pub mod ingestion;
pub mod persistence;
pub mod prompting;
pub mod promptlab;
pub mod retrieval;
pub mod retry;
pub mod text;
pub mod traceability;
