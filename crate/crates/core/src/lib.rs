//! Inverse design of ship propellers.
//!
//! The crate covers the full workflow: a parametric blade geometry, a
//! blade-element/momentum open-water solver that produces performance labels,
//! Latin-hypercube dataset generation, a small dense-network engine, forward
//! surrogates, a label-conditioned flow-matching generator and the studies
//! used to evaluate it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cfm;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod hydro;
pub mod nn;
pub mod par;
pub mod studies;
pub mod surrogate;
pub mod svg;

pub use error::{Error, Result};
