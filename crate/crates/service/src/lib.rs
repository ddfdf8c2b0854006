//! Command-line interface and HTTP service for decitree.

pub mod api;
pub mod cli;
