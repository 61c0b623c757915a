//! Training loops. The matched set losses (and their gradients with respect to
//! the logits) come from the core crate; each step backpropagates the
//! surrogate `Σ logits · ∂L/∂logits`, whose parameter gradient equals that of
//! the loss.

use std::borrow::Cow;
use std::path::Path;
use std::time::Instant;

use candle_core::{Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarMap};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sketch2cad_core::dataset::{derive_seed, Dihedral, NoiseConfig, RasterImage};
use sketch2cad_core::loss::{constraint_loss, primitive_loss, ConstraintLossTerms, PrimitiveLossTerms};
use sketch2cad_core::{Primitive, Sketch};

use crate::checkpoint::{CheckpointDir, Stage, TrainState};
use crate::config::{ConstraintModelConfig, OptimConfig, PrimitiveModelConfig, Regime};
use crate::constraint::{pad_refs, ConstraintNet};
use crate::error::{Error, Result};
use crate::eval::{eval_constraint, eval_primitive};
use crate::inputs::{constraint_input, constraint_inputs, primitive_input, primitive_inputs};
use crate::primitive::{images_tensor, PrimitiveNet};

/// Seed offset separating metric-evaluation noise from training noise.
const EVAL_STREAM: u64 = 0x5eed_e7a1;
const AUGMENT_STREAM: u64 = 0xa06_3e47;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Epochs completed, counting from 1.
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Mean loss components over the epoch's sketches.
    pub loss: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub optim: OptimConfig,
    pub regime: Regime,
    pub noise: NoiseConfig,
}

impl TrainSpec {
    pub fn new(optim: OptimConfig, regime: Regime) -> Self {
        Self {
            optim,
            regime,
            noise: NoiseConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        self.noise.validate()?;
        Ok(())
    }

    /// Checkpoint state after `epochs_done` epochs under this spec.
    pub fn state(&self, stage: Stage, epochs_done: usize) -> TrainState {
        TrainState {
            stage,
            epochs_done,
            regime: self.regime,
            optim: self.optim.clone(),
            noise: self.noise.clone(),
        }
    }
}

struct Stepper {
    opt: AdamW,
    vars: Vec<Var>,
    clip: f64,
}

impl Stepper {
    fn new(vars: &VarMap, optim: &OptimConfig) -> Result<Self> {
        let mut named: Vec<(String, Var)> = vars
            .data()
            .lock()
            .expect("var map poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        named.sort_by(|a, b| a.0.cmp(&b.0));
        let vars: Vec<Var> = named.into_iter().map(|(_, v)| v).collect();
        let opt = AdamW::new(
            vars.clone(),
            ParamsAdamW {
                lr: optim.lr,
                weight_decay: optim.weight_decay,
                ..ParamsAdamW::default()
            },
        )?;
        Ok(Self {
            opt,
            vars,
            clip: optim.grad_clip,
        })
    }

    /// Backpropagates, clips the global gradient norm, and applies one update.
    fn step(&mut self, surrogate: &Tensor) -> Result<f64> {
        let mut grads = surrogate.backward()?;
        let mut sq = 0.0f64;
        for v in &self.vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Ok(norm);
        }
        if self.clip > 0.0 && norm > self.clip {
            let scale = self.clip / norm;
            for v in &self.vars {
                if let Some(g) = grads.remove(v.as_tensor()) {
                    grads.insert(v.as_tensor(), (g * scale)?);
                }
            }
        }
        self.opt.step(&grads)?;
        Ok(norm)
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64)));
    idx
}

fn tensor_like(data: Vec<f64>, like: &Tensor) -> Result<Tensor> {
    let v: Vec<f32> = data.into_iter().map(|x| x as f32).collect();
    Ok(Tensor::from_vec(v, like.shape(), &Device::Cpu)?)
}

fn diverged(epoch: usize, step: usize, message: impl Into<String>) -> Error {
    Error::Divergence {
        epoch,
        step,
        message: message.into(),
    }
}

fn due(optim: &OptimConfig, done: usize) -> bool {
    optim.eval_every > 0 && (done % optim.eval_every == 0 || done == optim.epochs)
}

fn add_prim_terms(acc: &mut PrimitiveLossTerms, t: &PrimitiveLossTerms) {
    acc.total += t.total;
    acc.types += t.types;
    acc.flags += t.flags;
    acc.params += t.params;
    acc.no_object += t.no_object;
}

fn scale_prim_terms(t: &mut PrimitiveLossTerms, k: f64) {
    t.total *= k;
    t.types *= k;
    t.flags *= k;
    t.params *= k;
    t.no_object *= k;
}

/// Trains epochs `start..optim.epochs`, invoking `on_epoch` after each one.
pub fn train_primitive(
    net: &PrimitiveNet,
    data: &[Sketch],
    spec: &TrainSpec,
    start: usize,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let cfg = net.config();
    if let Some(s) = data.iter().find(|s| s.primitives.len() > cfg.queries) {
        return Err(Error::Config(format!(
            "a sketch has {} primitives but the model has {} queries",
            s.primitives.len(),
            cfg.queries
        )));
    }
    let optim = &spec.optim;
    let mut stepper = Stepper::new(net.vars(), optim)?;
    // Clean renders never change, so render them once.
    let clean: Option<Vec<RasterImage>> =
        (spec.regime == Regime::Noiseless && !optim.augment).then(|| primitive_inputs(data, Regime::Noiseless, &spec.noise, 0));
    let eval_n = optim.eval_samples.min(data.len());
    let eval_images = primitive_inputs(&data[..eval_n], spec.regime, &spec.noise, optim.seed ^ EVAL_STREAM);
    let mut records = Vec::new();
    let mut step = 0;
    for epoch in start..optim.epochs {
        let t0 = Instant::now();
        let lr = optim.lr_at(epoch);
        stepper.opt.set_learning_rate(lr);
        let mut terms = PrimitiveLossTerms::default();
        let epoch_seed = derive_seed(optim.seed, epoch as u64);
        for batch in epoch_order(data.len(), optim.seed, epoch).chunks(optim.batch_size) {
            let targets: Vec<Cow<Sketch>> = batch
                .iter()
                .map(|&i| match optim.augment {
                    true => Cow::Owned(
                        Dihedral::from_index(derive_seed(epoch_seed ^ AUGMENT_STREAM, i as u64)).apply_sketch(&data[i]),
                    ),
                    false => Cow::Borrowed(&data[i]),
                })
                .collect();
            let rendered: Vec<RasterImage>;
            let images: Vec<&RasterImage> = match &clean {
                Some(c) => batch.iter().map(|&i| &c[i]).collect(),
                None => {
                    rendered = batch
                        .iter()
                        .zip(&targets)
                        .map(|(&i, s)| primitive_input(s, spec.regime, &spec.noise, epoch_seed, i as u64))
                        .collect();
                    rendered.iter().collect()
                }
            };
            let logits = net.forward(&images_tensor(&images)?)?;
            let preds = logits.to_predictions()?;
            let (mut gt, mut gf, mut gp) = (Vec::new(), Vec::new(), Vec::new());
            for (s, pred) in targets.iter().zip(&preds) {
                let l = primitive_loss(&s.primitives, pred, &cfg.weights)?;
                if !l.terms.total.is_finite() {
                    return Err(diverged(epoch, step, format!("non-finite loss {}", l.terms.total)));
                }
                add_prim_terms(&mut terms, &l.terms);
                gt.extend(l.grad.types);
                gf.extend(l.grad.flags);
                gp.extend(l.grad.params);
            }
            let b = batch.len() as f64;
            let surrogate = ((logits.types.mul(&tensor_like(gt, &logits.types)?)?.sum_all()?
                + logits.flags.mul(&tensor_like(gf, &logits.flags)?)?.sum_all()?)?
                + logits.params.mul(&tensor_like(gp, &logits.params)?)?.sum_all()?)?;
            let norm = stepper.step(&(surrogate / b)?)?;
            if !norm.is_finite() {
                return Err(diverged(epoch, step, format!("non-finite gradient norm {norm}")));
            }
            step += 1;
        }
        scale_prim_terms(&mut terms, 1.0 / data.len() as f64);
        let done = epoch + 1;
        let metrics = if due(optim, done) && eval_n > 0 {
            let r = eval_primitive(net, &data[..eval_n], &eval_images, false)?;
            Some(serde_json::to_value(r.score).expect("report serializes"))
        } else {
            None
        };
        let rec = EpochRecord {
            epoch: done,
            lr,
            steps: step,
            loss: serde_json::to_value(terms).expect("terms serialize"),
            metrics,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!("primitive epoch {done}: loss {:.4}", terms.total);
        on_epoch(&rec)?;
        records.push(rec);
    }
    Ok(records)
}

pub fn train_constraint(
    net: &ConstraintNet,
    data: &[Sketch],
    spec: &TrainSpec,
    start: usize,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let cfg = net.config();
    if let Some(s) = data
        .iter()
        .find(|s| s.constraints.len() > cfg.queries || s.primitives.len() > cfg.max_primitives || s.primitives.is_empty())
    {
        return Err(Error::Config(format!(
            "a sketch with {} primitives and {} constraints does not fit {} queries / {} primitives",
            s.primitives.len(),
            s.constraints.len(),
            cfg.queries,
            cfg.max_primitives
        )));
    }
    let optim = &spec.optim;
    let mut stepper = Stepper::new(net.vars(), optim)?;
    let eval_n = optim.eval_samples.min(data.len());
    let eval_inputs = constraint_inputs(&data[..eval_n], spec.regime, &spec.noise, optim.seed ^ EVAL_STREAM);
    let mut records = Vec::new();
    let mut step = 0;
    let n = cfg.queries;
    for epoch in start..optim.epochs {
        let t0 = Instant::now();
        let lr = optim.lr_at(epoch);
        stepper.opt.set_learning_rate(lr);
        let mut terms = ConstraintLossTerms::default();
        let epoch_seed = derive_seed(optim.seed, epoch as u64);
        for batch in epoch_order(data.len(), optim.seed, epoch).chunks(optim.batch_size) {
            let inputs: Vec<Vec<Primitive>> = batch
                .iter()
                .map(|&i| constraint_input(&data[i], spec.regime, &spec.noise, epoch_seed, i as u64))
                .collect();
            let refs: Vec<&[Primitive]> = inputs.iter().map(Vec::as_slice).collect();
            let logits = net.forward(&refs)?;
            let preds = logits.to_predictions()?;
            let mut gt = Vec::new();
            let mut grad_refs = Vec::new();
            for (&i, pred) in batch.iter().zip(&preds) {
                let l = constraint_loss(&data[i].constraints, pred, &cfg.weights)?;
                if !l.terms.total.is_finite() {
                    return Err(diverged(epoch, step, format!("non-finite loss {}", l.terms.total)));
                }
                terms.total += l.terms.total;
                terms.types += l.terms.types;
                terms.refs += l.terms.refs;
                terms.no_object += l.terms.no_object;
                gt.extend(l.grad.types);
                grad_refs.push(l.grad.refs);
            }
            let width = logits.refs.dims()[3];
            let rows: Vec<&[f64]> = grad_refs.iter().map(Vec::as_slice).collect();
            let gr = pad_refs(&rows, &logits.prims, n, width)?;
            let b = batch.len() as f64;
            let surrogate = (logits.types.mul(&tensor_like(gt, &logits.types)?)?.sum_all()?
                + logits.refs.mul(&gr)?.sum_all()?)?;
            let norm = stepper.step(&(surrogate / b)?)?;
            if !norm.is_finite() {
                return Err(diverged(epoch, step, format!("non-finite gradient norm {norm}")));
            }
            step += 1;
        }
        let k = 1.0 / data.len() as f64;
        terms.total *= k;
        terms.types *= k;
        terms.refs *= k;
        terms.no_object *= k;
        let done = epoch + 1;
        let metrics = if due(optim, done) && eval_n > 0 {
            let r = eval_constraint(net, &data[..eval_n], &eval_inputs)?;
            Some(serde_json::to_value(r.accuracy).expect("report serializes"))
        } else {
            None
        };
        let rec = EpochRecord {
            epoch: done,
            lr,
            steps: step,
            loss: serde_json::to_value(terms).expect("terms serialize"),
            metrics,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!("constraint epoch {done}: loss {:.4}", terms.total);
        on_epoch(&rec)?;
        records.push(rec);
    }
    Ok(records)
}

/// Trains into a checkpoint directory, resuming from its saved epoch count if
/// it already holds a compatible checkpoint. Saves after every epoch.
pub fn fit_primitive(dir: &Path, cfg: &PrimitiveModelConfig, data: &[Sketch], spec: &TrainSpec) -> Result<PrimitiveNet> {
    let ck = CheckpointDir::new(dir);
    let (net, start) = if ck.exists() {
        let stored = ck.primitive_config()?;
        if &stored != cfg {
            return Err(Error::checkpoint(dir, "existing checkpoint has a different model config"));
        }
        (ck.load_primitive()?, ck.state()?.map_or(0, |s| s.epochs_done))
    } else {
        (PrimitiveNet::new(cfg)?, 0)
    };
    if start == 0 {
        ck.save_primitive(&net, &spec.state(Stage::Primitive, 0))?;
    }
    train_primitive(&net, data, spec, start, |rec| {
        ck.save_primitive(&net, &spec.state(Stage::Primitive, rec.epoch))?;
        ck.append_log(rec)
    })?;
    Ok(net)
}

pub fn fit_constraint(dir: &Path, cfg: &ConstraintModelConfig, data: &[Sketch], spec: &TrainSpec) -> Result<ConstraintNet> {
    let ck = CheckpointDir::new(dir);
    let (net, start) = if ck.exists() {
        let stored = ck.constraint_config()?;
        if &stored != cfg {
            return Err(Error::checkpoint(dir, "existing checkpoint has a different model config"));
        }
        (ck.load_constraint()?, ck.state()?.map_or(0, |s| s.epochs_done))
    } else {
        (ConstraintNet::new(cfg)?, 0)
    };
    if start == 0 {
        ck.save_constraint(&net, &spec.state(Stage::Constraint, 0))?;
    }
    train_constraint(&net, data, spec, start, |rec| {
        ck.save_constraint(&net, &spec.state(Stage::Constraint, rec.epoch))?;
        ck.append_log(rec)
    })?;
    Ok(net)
}
