//! Semantic co-speech gesture synthesis engine.

pub mod align;
pub mod audio;
pub mod codec;
pub mod demo;
pub mod error;
pub mod eval;
pub mod generator;
pub mod index;
pub mod motion;
pub mod net;
pub mod retrieval;

pub use error::{Error, Result};
