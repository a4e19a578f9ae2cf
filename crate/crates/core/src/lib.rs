//! Implicit dynamic graph neural network.
//!
//! Node embeddings of every snapshot are the fixed point of a coupled system
//! of graph convolutions in which snapshot `t` reads the embeddings of
//! snapshot `t−1` (and the first snapshot reads the last). Layer weights are
//! projected so the system is a contraction, which makes the fixed point
//! exist and be unique. Two trainers are provided: gradient descent through
//! the implicit function theorem and a single-loop bilevel method that keeps
//! running estimates of the fixed point and of an inverse-Hessian-vector
//! product per dynamic graph.

pub mod bilevel;
pub mod data;
pub mod error;
pub mod grad;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
