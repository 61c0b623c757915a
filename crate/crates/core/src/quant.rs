//! The 6-bit coordinate grid.
//!
//! Coordinates live in the unit square and are binned by `floor(x * levels)`;
//! dequantization returns the bin center. Lengths (the circle radius slot) are
//! measured in grid steps instead: a radius slot `r` means `r / levels`, so that
//! tangency and equal-radius relations stay exact on the integer grid.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantGrid {
    bits: u32,
    levels: u32,
}

/// The grid used throughout the crate.
pub const GRID: QuantGrid = QuantGrid::new(6);

/// Largest quantized value on [`GRID`].
pub const MAX_LEVEL: u8 = 63;

impl QuantGrid {
    pub const fn new(bits: u32) -> Self {
        Self {
            bits,
            levels: 1 << bits,
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Width of one bin in unit coordinates.
    pub fn step(&self) -> f64 {
        1.0 / self.levels as f64
    }
}

impl Default for QuantGrid {
    fn default() -> Self {
        GRID
    }
}

/// Bins a unit coordinate. Values outside `[0, 1]` are clamped first.
pub fn quantize(x: f64, grid: QuantGrid) -> Result<u32> {
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("cannot quantize {x}")));
    }
    let levels = grid.levels as f64;
    let bin = (x.clamp(0.0, 1.0) * levels).floor();
    Ok((bin as u32).min(grid.levels - 1))
}

/// Bin center of `q`.
pub fn dequantize(q: u32, grid: QuantGrid) -> Result<f64> {
    if q >= grid.levels {
        return Err(Error::InvalidInput(format!(
            "level {q} outside [0, {}]",
            grid.levels - 1
        )));
    }
    Ok((q as f64 + 0.5) / grid.levels as f64)
}

/// Quantizes a length (radius) to the nearest whole number of grid steps in `[1, levels-1]`.
pub fn quantize_length(r: f64, grid: QuantGrid) -> Result<u32> {
    if !r.is_finite() {
        return Err(Error::InvalidInput(format!("cannot quantize length {r}")));
    }
    let steps = (r * grid.levels as f64).round();
    Ok(steps.clamp(1.0, (grid.levels - 1) as f64) as u32)
}

pub fn dequantize_length(q: u32, grid: QuantGrid) -> Result<f64> {
    if q >= grid.levels {
        return Err(Error::InvalidInput(format!(
            "length {q} outside [0, {}]",
            grid.levels - 1
        )));
    }
    Ok(q as f64 / grid.levels as f64)
}

/// Infallible bin center for values already known to be on [`GRID`].
#[inline]
pub(crate) fn center(q: u8) -> f64 {
    (q as f64 + 0.5) / 64.0
}
