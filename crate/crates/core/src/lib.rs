//! Core of the cotforge annotation pipeline.
//!
//! Chain-of-thought rationales for video QA are generated through pluggable
//! providers, scored on several quality dimensions, routed either to the
//! dataset or to expert review, and finally exported and evaluated.

pub mod clock;
pub mod error;
pub mod eval;
pub mod eventlog;
pub mod export;
pub mod lexical;
pub mod model;
pub mod orchestrator;
pub mod provider;
pub mod review;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
pub use model::*;
