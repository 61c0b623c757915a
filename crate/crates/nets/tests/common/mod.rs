#![allow(dead_code)]

use sketch2cad_core::dataset::{generate_sketch, GenConfig};
use sketch2cad_core::Sketch;
use sketch2cad_nets::{ConstraintModelConfig, OptimConfig, PrimitiveModelConfig};

pub fn tiny_prim() -> PrimitiveModelConfig {
    PrimitiveModelConfig {
        d_model: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 4,
        ff_dim: 64,
        queries: 14,
        ..PrimitiveModelConfig::default()
    }
}

pub fn tiny_cons() -> ConstraintModelConfig {
    ConstraintModelConfig {
        d_model: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 4,
        ff_dim: 64,
        queries: 40,
        ..ConstraintModelConfig::default()
    }
}

pub fn sketches(n: usize, seed: u64) -> Vec<Sketch> {
    (0..n)
        .map(|i| {
            generate_sketch(&GenConfig {
                seed: seed + i as u64,
                ..GenConfig::default()
            })
            .unwrap()
        })
        .collect()
}

pub fn quick_optim(epochs: usize) -> OptimConfig {
    OptimConfig {
        epochs,
        batch_size: 4,
        lr: 1e-3,
        eval_every: 1,
        eval_samples: 4,
        ..OptimConfig::default()
    }
}
