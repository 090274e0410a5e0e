//! Four-part chorale modeling with a chord-first token representation and a
//! causal transformer using learned relative-position attention.
//!
//! The pipeline runs: [`score`] (MIDI / JSON ingestion and 16th-note grids) →
//! [`tokenizer`] (chord-first token sequences) → [`augment`] (transposition and
//! retrograde) → [`trainer`] (teacher-forced training of a [`model`]) →
//! [`generator`] (harmonizing a chord + soprano line) → [`metrics`].

pub mod augment;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod model;
pub mod score;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
