//! Repetition-code quantum memory simulation and soft-information matching decoding.

pub mod analysis;
pub mod code_model;
pub mod decoding_graph;
pub mod error;
pub mod matching_decoder;
pub mod measurement_model;
pub mod noise_model;
pub mod sampler;

pub use error::{Error, Result};
