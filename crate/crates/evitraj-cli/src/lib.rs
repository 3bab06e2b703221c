//! Command-line front end for the evitraj library: dataset generation,
//! anchor fitting, training, evaluation, and report rendering. Kept as a
//! library so integration tests can reuse the table/figure code directly.

pub mod cli;
pub mod config;
pub mod report;
pub mod svg;
