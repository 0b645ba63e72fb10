//! Agent-driven video trimming.
//!
//! Long raw footage is cut into fixed-length clips, each clip is described by a
//! multimodal captioning agent, wasted footage is dropped by the dynamic filter,
//! and an arrangement agent composes the surviving clips into a short final cut.
//! The [`evaluation`] module carries the metrics used to judge the result.
//!
//! Stage modules are usable on their own; [`pipeline`] wires them together with
//! the on-disk job layout used by the `vtrim` command-line tool.

pub mod assembly;
pub mod composition;
pub mod demo;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod gateway;
pub mod ingest;
pub mod media;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod structuring;
pub mod text;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
