//! Orchestration of hybrid quantum-classical optimization runs.

pub mod backend;
pub mod problem;
pub mod vqa;
pub mod builders;
pub mod query;
pub mod scalability;
pub mod tree;
