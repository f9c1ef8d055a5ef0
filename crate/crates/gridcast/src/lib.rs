//! Storage formats, experiment orchestration and comparison tooling around
//! `gridcast-core`.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod container;
pub mod error;
pub mod matrix;
pub mod plot;
pub mod run;

pub use error::{Error, Result};
