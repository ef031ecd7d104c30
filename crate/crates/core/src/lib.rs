//! Prototype-based multi-modal time-series classification with case-based
//! explanations, fused with an LLM predict / reflect / refine loop.

pub mod agents;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod persist;
pub mod pipeline;

pub use error::{Error, Result};
