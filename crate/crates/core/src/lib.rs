//! Core library for parsing hand-drawn CAD sketches into parametric primitives
//! and constraints.
//!
//! Everything in this crate is framework-free: the sketch domain model and its
//! 6-bit quantization grid, synthetic data generation and rasterization, the
//! set-matching machinery (cost matrices and Hungarian assignment), the matched
//! set losses with analytic gradients, evaluation metrics, and the least-squares
//! constraint snapper. The neural models live in `sketch2cad-nets` and consume
//! these pieces through [`prediction`] and [`loss`].

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod prediction;
pub mod quant;
pub mod sketch;
pub mod snap;

pub use error::{Error, Result};
pub use quant::{dequantize, quantize, QuantGrid, GRID};
pub use sketch::{Constraint, ConstraintType, Primitive, PrimitiveType, Sketch, Violation};
