//! Workbench for attractive probabilistic cellular automata and bootstrap percolation.

pub mod analysis;
pub mod audit;
pub mod bp;
pub mod cli;
pub mod correspondence;
pub mod error;
pub mod exact;
pub mod field;
pub mod geometry;
pub mod lattice;
pub mod model;
pub mod pca;
pub mod rates;
pub mod upset;

pub use error::{Error, Result};
