//! Network inputs derived from ground-truth sketches under a regime.
//!
//! Noisy inputs are reproducible: each one is drawn from a stream seeded by
//! `(seed, index)`, so a training epoch or an evaluation pass can be replayed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sketch2cad_core::dataset::{derive_seed, perturb_primitives, rasterize, NoiseConfig, RasterImage};
use sketch2cad_core::{Primitive, Sketch};

use crate::config::Regime;

fn rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// Clean or hand-drawn-style rendering of the sketch's primitives.
pub fn primitive_input(s: &Sketch, regime: Regime, noise: &NoiseConfig, seed: u64, index: u64) -> RasterImage {
    let mut r = rng(seed, index);
    match regime {
        Regime::Noiseless => rasterize(&s.primitives, None, &mut r),
        Regime::Noisy => rasterize(&s.primitives, Some(noise), &mut r),
    }
}

/// Ground-truth primitives, or their parameter-perturbed version.
pub fn constraint_input(s: &Sketch, regime: Regime, noise: &NoiseConfig, seed: u64, index: u64) -> Vec<Primitive> {
    match regime {
        Regime::Noiseless => s.primitives.clone(),
        Regime::Noisy => perturb_primitives(s, noise, &mut rng(seed, index)).primitives,
    }
}

pub fn primitive_inputs(sketches: &[Sketch], regime: Regime, noise: &NoiseConfig, seed: u64) -> Vec<RasterImage> {
    sketches
        .iter()
        .enumerate()
        .map(|(i, s)| primitive_input(s, regime, noise, seed, i as u64))
        .collect()
}

pub fn constraint_inputs(sketches: &[Sketch], regime: Regime, noise: &NoiseConfig, seed: u64) -> Vec<Vec<Primitive>> {
    sketches
        .iter()
        .enumerate()
        .map(|(i, s)| constraint_input(s, regime, noise, seed, i as u64))
        .collect()
}
