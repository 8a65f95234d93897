//! Multi-stage keyword spotting over frame-level posterior streams.
//!
//! Detection runs token passing over a compiled keyword transducer, a forced
//! alignment stage refines the start point and scores the match, and a
//! fixed-length beam search verifies the unit sequence.

pub mod aligner;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod fst;
pub mod pipeline;
pub mod posterior;
pub mod symbols;
pub mod verifier;

pub use error::{Error, Result};
pub use pipeline::{run_pipeline, Detection, Engine, PipelineConfig};
