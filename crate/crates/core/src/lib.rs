//! Decentralized iterative merging-and-training (DIMAT).
//!
//! Agents train local multi-layer perceptrons with first-order optimizers and
//! periodically merge with their neighbours. A merge aligns each neighbour's
//! hidden units to the receiving agent (activation or weight matching, solved
//! as linear assignment problems) before taking the mixing-matrix weighted
//! average. The crate also carries the spectral diagnostics for the mixing
//! matrix and for mixing composed with permutations.

pub mod align;
pub mod checkpoint;
pub mod config;
mod error;
pub mod linalg;
pub mod merge;
pub mod nn;
pub mod optim;
pub mod report;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
pub use linalg::Matrix;
