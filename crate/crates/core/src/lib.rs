//! Persona-conditioned administration of psychometric scales to chat models:
//! scale and persona bundles, prompt assembly, provider adapters, a
//! resumable concurrent dispatcher, response parsing, scoring, analysis and
//! the on-disk exports.

pub mod analysis;
pub mod dispatch;
pub mod error;
pub mod gateway;
pub mod parser;
pub mod persona;
pub mod scale;
pub mod storage;

pub use error::{Error, Result};
