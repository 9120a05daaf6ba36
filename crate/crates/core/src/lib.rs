//! Clinical text structuring as extractive question answering.
//!
//! Annotated documents become SQuAD-style datasets; a reader plus a
//! verification step turns questions over free text back into structured
//! records; metrics compare those records with the annotations.

pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod preprocess;
pub mod reader;
pub mod span;
pub mod squad;
pub mod synth;
pub mod templates;

pub use error::{Error, Result};
