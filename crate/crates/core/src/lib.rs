//! Meter tracking for cyclic metrical structures: beat and downbeat decoding
//! from novelty curves or neural activations, and evaluation of the results.

// `!(x >= lo)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barpointer;
pub mod dataio;
pub mod error;
pub mod evalmetrics;
pub mod features;
mod lattice;
pub mod losses;
pub mod model;
pub mod postproc;
pub mod pulse;
pub mod synth;

pub use error::{MeterError, Result};
