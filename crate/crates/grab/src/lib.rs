//! Training harness, dataset formats and command-line front end for the
//! orderers in `grab-core`.

pub mod cli;
pub mod config;
pub mod data;
pub mod trainer;
