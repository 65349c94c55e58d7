//! Accuracy-aware planning of split inference between an edge device and a server.
//!
//! The device runs learnable layers `1..=p` with quantized weights and sends the
//! quantized layer-`p` activation; the server finishes the forward pass. Given a
//! calibrated degradation model, the planner picks per-layer bit-widths and the
//! partition point that minimise a weighted time, energy and cost objective.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accuracy;
pub mod costs;
mod error;
pub mod nn;
pub mod optimizer;
pub mod quant;
pub mod seed;
pub mod simulator;

pub use error::{Error, Result};
