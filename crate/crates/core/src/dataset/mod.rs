//! Synthetic training data: constrained sketch generation, parameter noise,
//! hand-drawn rasterization, corpus files, and external sketch import.

mod augment;
mod corpus;
mod generate;
mod import;
mod noise;
mod raster;

pub use augment::Dihedral;
pub use corpus::{build_corpus, derive_seed, make_record, Corpus, CorpusRecord, CorpusSummary};
pub use generate::{
    generate_float_sketch, generate_sketch, generate_sketch_with, FloatPrimitive, FloatSketch, GenConfig,
};
pub use import::{import_external, ImportReport, SkippedSketch};
pub use noise::{perturb_primitives, NoiseConfig};
pub use raster::{png_to_image, rasterize, rasterize_strokes, RasterImage, IMAGE_SIZE};
