//! Command-line front end: JSON run configs, a mode dispatcher, and
//! deterministic artifact emission on top of the core library.

pub mod config;
pub mod outputs;
pub mod pipeline;
