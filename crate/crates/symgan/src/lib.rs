//! File formats, MusicXML input and the five-stage command-line pipeline
//! around `symgan-core`.

pub mod bank;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod imageio;
pub mod ingest;
pub mod musicxml;
pub mod pipeline;

pub use error::{Error, Result};
