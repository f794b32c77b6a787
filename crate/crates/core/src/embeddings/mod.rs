//! Producers of alternative feature and description provenances.

pub mod semantic;
pub mod visual;
