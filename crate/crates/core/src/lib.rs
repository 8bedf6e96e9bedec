//! Desk-scale toolkit for deterministic DDIM sampling/inversion over
//! pluggable denoisers, trajectory decompositions, memory-decomposed
//! trajectory gradients, PGD-based image immunization, and an
//! edit/purify/evaluate benchmark harness.

pub mod attacks;
pub mod diffusion;
mod error;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod trajgrad;

pub use error::{Error, Result};
