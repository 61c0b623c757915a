use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde_json::{json, Value};
use sketch2cad_core::dataset::{build_corpus, png_to_image, rasterize, Corpus, CorpusSummary, GenConfig, NoiseConfig, RasterImage, IMAGE_SIZE};
use sketch2cad_core::io::{deserialize_sketch, serialize_sketch};
use sketch2cad_core::{Primitive, Sketch};
use sketch2cad_nets::eval::{eval_constraint, eval_primitive};
use sketch2cad_nets::inputs::{constraint_inputs, primitive_inputs};
use sketch2cad_nets::{fit_constraint, fit_primitive, CheckpointDir, EpochRecord, Pipeline, Regime, Stage, TrainSpec};

use crate::error::{CliError, Result};
use crate::train_config::{ConstraintTrainFile, PrimitiveTrainFile};

pub struct GenData {
    pub n: usize,
    pub out: PathBuf,
    pub noise: bool,
    pub gen: GenConfig,
}

pub fn gen_data(args: &GenData) -> Result<CorpusSummary> {
    if args.n == 0 {
        return Err(CliError::Config("--n must be at least 1".into()));
    }
    let noise = args.noise.then(NoiseConfig::default);
    Ok(build_corpus(&args.out, args.n, &args.gen, noise.as_ref())?)
}

fn corpus_sketches(path: &Path) -> Result<Vec<Sketch>> {
    let corpus = Corpus::open(path)?;
    if corpus.is_empty() {
        return Err(CliError::Config(format!("{}: corpus is empty", path.display())));
    }
    Ok(corpus.records.into_iter().map(|r| r.sketch).collect())
}

pub struct Train {
    pub stage: Stage,
    pub corpus: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub regime: Regime,
}

/// Returns the last epoch record written (none if the checkpoint was already complete).
pub fn train(args: &Train) -> Result<Option<EpochRecord>> {
    let data = corpus_sketches(&args.corpus)?;
    match args.stage {
        Stage::Primitive => {
            let f = PrimitiveTrainFile::load(args.config.as_deref())?;
            let spec = TrainSpec {
                optim: f.optim,
                regime: args.regime,
                noise: f.noise,
            };
            fit_primitive(&args.out, &f.model, &data, &spec)?;
        }
        Stage::Constraint => {
            let f = ConstraintTrainFile::load(args.config.as_deref())?;
            let spec = TrainSpec {
                optim: f.optim,
                regime: args.regime,
                noise: f.noise,
            };
            fit_constraint(&args.out, &f.model, &data, &spec)?;
        }
    }
    Ok(CheckpointDir::new(&args.out).read_log()?.pop())
}

pub struct Eval {
    pub stage: Stage,
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub regime: Regime,
    pub apply_constraints: bool,
    pub seed: u64,
}

/// Metrics report: stage, checkpoint id, regime and the metric fields.
pub fn eval(args: &Eval) -> Result<Value> {
    let data = corpus_sketches(&args.corpus)?;
    let ck = CheckpointDir::new(&args.checkpoint);
    let noise = ck.state()?.map(|s| s.noise).unwrap_or_default();
    let report = match args.stage {
        Stage::Primitive => {
            let net = ck.load_primitive()?;
            let images = primitive_inputs(&data, args.regime, &noise, args.seed);
            serde_json::to_value(eval_primitive(&net, &data, &images, args.apply_constraints)?)
        }
        Stage::Constraint => {
            if args.apply_constraints {
                return Err(CliError::Config("--apply-constraints only applies to the primitive stage".into()));
            }
            let net = ck.load_constraint()?;
            let inputs = constraint_inputs(&data, args.regime, &noise, args.seed);
            serde_json::to_value(eval_constraint(&net, &data, &inputs)?)
        }
    }
    .expect("report serialization");
    let mut out = json!({
        "stage": args.stage,
        "checkpoint_id": ck.id()?,
        "regime": args.regime,
    });
    if let (Value::Object(o), Value::Object(r)) = (&mut out, report) {
        o.extend(r);
    }
    Ok(out)
}

pub enum InferInput {
    Image(PathBuf),
    Sketch(PathBuf),
}

pub struct Infer {
    pub input: InferInput,
    pub prim_ckpt: Option<PathBuf>,
    pub cons_ckpt: PathBuf,
    pub snap: bool,
    pub overlay: Option<PathBuf>,
}

/// Parsed sketch; with `snap` its primitives are the snapped ones.
pub fn infer(args: &Infer) -> Result<Sketch> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| CliError::io(p, e));
    let cons = CheckpointDir::new(&args.cons_ckpt).load_constraint()?;
    let (parsed, image) = match &args.input {
        InferInput::Image(path) => {
            let img = png_to_image(&read(path)?)?;
            let prim_dir = args
                .prim_ckpt
                .as_ref()
                .ok_or_else(|| CliError::Config("--image needs --prim-ckpt".into()))?;
            let pipe = Pipeline::new(CheckpointDir::new(prim_dir).load_primitive()?, cons);
            (pipe.parse_image(&img, args.snap)?, Some(img))
        }
        InferInput::Sketch(path) => {
            let text = String::from_utf8_lossy(&read(path)?).into_owned();
            let sketch = deserialize_sketch(&text)?;
            // Only the constraint stage runs; any stored constraints are ignored.
            let pipe = Pipeline::constraint_only(cons);
            (pipe.parse_primitives(sketch.primitives, args.snap)?, None)
        }
    };
    let prims = parsed.snapped_primitives.clone().unwrap_or_else(|| parsed.primitives.clone());
    if let Some(path) = &args.overlay {
        let img = overlay(image.as_ref(), &prims);
        img.save(path)
            .map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))?;
    }
    Ok(Sketch::new(prims, parsed.constraints))
}

/// Input ink in grey, predictions in red, on white.
pub fn overlay(input: Option<&RasterImage>, prims: &[Primitive]) -> RgbImage {
    let pred = rasterize(prims, None, &mut rand::rng());
    let blank = RasterImage::default();
    let input = input.unwrap_or(&blank);
    RgbImage::from_fn(IMAGE_SIZE as u32, IMAGE_SIZE as u32, |x, y| {
        let (i, p) = (input.get(x as usize, y as usize), pred.get(x as usize, y as usize));
        let base = 255.0 * (1.0 - 0.5 * i);
        let gb = base * (1.0 - p);
        Rgb([base.max(255.0 * p) as u8, gb as u8, gb as u8])
    })
}

pub fn sketch_json(s: &Sketch) -> String {
    serialize_sketch(s)
}
