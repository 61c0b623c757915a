use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::MAX_LEVEL;
use crate::sketch::{PrimitiveType, Sketch, RADIUS_SLOT};

const MAX_RESAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Parameter noise in quantization steps.
    pub param_sigma: f64,
    /// Per-point raster jitter in pixels.
    pub pixel_sigma: f64,
    pub stroke_width: (f64, f64),
    pub overshoot_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            param_sigma: 1.5,
            pixel_sigma: 0.8,
            stroke_width: (1.0, 2.0),
            overshoot_prob: 0.3,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.stroke_width;
        let ok = self.param_sigma >= 0.0
            && self.pixel_sigma >= 0.0
            && lo >= 0.0
            && hi >= lo
            && (0.0..=1.0).contains(&self.overshoot_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid noise config {self:?}")))
        }
    }
}

/// Adds Gaussian noise to every live parameter slot and re-quantizes.
///
/// Types, flags, padding slots and constraints are untouched. A primitive that
/// would become degenerate (zero-length line, collinear arc) is redrawn.
pub fn perturb_primitives<R: Rng + ?Sized>(s: &Sketch, noise: &NoiseConfig, rng: &mut R) -> Sketch {
    let mut out = s.clone();
    if noise.param_sigma <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, noise.param_sigma).expect("sigma is finite and positive");
    for p in &mut out.primitives {
        let original = *p;
        for _ in 0..MAX_RESAMPLES {
            let mut q = original;
            for &slot in original.ptype.live_slots() {
                // Working in steps is the same as dequantize, add σ/64, re-quantize.
                let v = original.params[slot] as f64 + normal.sample(rng);
                let (lo, hi) = if slot == RADIUS_SLOT { (1.0, MAX_LEVEL as f64) } else { (0.0, MAX_LEVEL as f64) };
                q.params[slot] = v.round().clamp(lo, hi) as u8;
            }
            let degenerate = match q.ptype {
                PrimitiveType::Line => q.params[0..2] == q.params[2..4],
                PrimitiveType::Arc => q.sample_points(3).is_err(),
                _ => false,
            };
            if !degenerate {
                *p = q;
                break;
            }
        }
    }
    out
}
