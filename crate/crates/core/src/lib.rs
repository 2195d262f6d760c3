//! Stationary solutions of the coagulation equation with a constant source.
//!
//! The crate discretises the coagulation operator on a geometric grid with
//! a fixed-pivot scheme, relaxes the δ-regularised equation to its steady
//! state, continues the steady state as δ shrinks, and checks the result
//! against moment sandwiches, weak-form identities and a-priori bounds.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coag_op;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod exec;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod quadrature;
pub mod sources;
pub mod verify;

pub use coag_op::{OverflowValue, PairTable, Rates, Target, TestFunction};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::{Grid, GridConfig, SizeDistribution};
pub use kernels::{GeneralKernel, Kernel, Shape, SumPowerKernel};
pub use sources::{SourceFamily, SourceSpec};
