//! Attention-based copy/generate query suggestion over search sessions.

pub mod attention;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod numcore;
pub mod trainer;

pub use error::{AcgError, Result};
pub use model::{AcgModel, ModelConfig};
