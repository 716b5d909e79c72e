#![no_std]
//! Example-ordering engine for permuted-order SGD.
//!
//! The crate balances per-sample gradients with a sign kernel and turns the
//! resulting signs into the visit order for the next epoch. Everything here
//! is allocation-only (`alloc`), deterministic under a seed, and free of IO;
//! the `grab` crate wires it into a training loop and a CLI.

extern crate alloc;

pub mod discrepancy;
pub mod error;
pub mod kernel;
pub mod model;
pub mod optim;
pub mod permutation;
pub mod sorter;
pub mod tree;

mod util;

pub use discrepancy::{herding_discrepancy, ordered_discrepancy};
pub use error::{Error, Result};
pub use kernel::{
    accumulate, deterministic_sign, probabilistic_sign, Accumulator, Balancer, KernelConfig,
    KernelKind, Sign, DEFAULT_C_MULTIPLIER,
};
pub use model::{Block, Example, Layout, ModelKind, ModelParams};
pub use optim::{sgd_step, OptimConfig};
pub use permutation::Permutation;
pub use sorter::{GradientMatrix, HerdingStats, Sorter, Variant};
pub use tree::AccumulatorTree;
