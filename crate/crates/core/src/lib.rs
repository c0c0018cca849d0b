//! Stochastic dynamics generated by antisymmetric operators: operator
//! classification, Stratonovich particle ensembles, Fokker-Planck grid
//! solvers and entropy diagnostics.

pub mod catalog;
pub mod classify;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fokker_planck;
pub mod grid;
pub mod operator;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod scenarios;
pub mod sde;

pub use error::{HelidiffError, Result};
