//! Two-tier retrieval-augmented question answering.
//!
//! Questions are matched against a curated, paraphrase-expanded FAQ first.
//! Below the FAQ threshold, augmented document chunks are retrieved and a
//! single generation is grounded on them; with nothing relevant at all the
//! generator answers directly under a disclaimer.

pub mod augment;
pub mod batcher;
pub mod chunker;
pub mod config;
pub mod engine;
pub mod enrich;
pub mod eval;
pub mod index;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod providers;
pub mod router;
pub mod service;
pub mod store;
