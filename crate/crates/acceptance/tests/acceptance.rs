//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line each; exits non-zero if any fail.
//!
//! `cargo test -p sketch2cad-acceptance --test acceptance -- 1 4 6` runs a subset.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sketch2cad_core::dataset::{
    generate_float_sketch, generate_sketch, perturb_primitives, rasterize, GenConfig, NoiseConfig, RasterImage,
};
use sketch2cad_core::loss::{constraint_loss, primitive_loss};
use sketch2cad_core::matching::{ConstraintWeights, PrimitiveWeights};
use sketch2cad_core::matching::{brute_force_assignment, hungarian, CostMatrix};
use sketch2cad_core::metrics::{primitive_counts_at, quantization_error, PrimitiveCounts};
use sketch2cad_core::prediction::{ConstraintPredictionSet, ParamPrediction, PrimitivePredictionSet, BINS};
use sketch2cad_core::quant::{dequantize, quantize, GRID};
use sketch2cad_core::snap::apply_constraints;
use sketch2cad_core::{ConstraintType, Primitive, PrimitiveType, Sketch};
use sketch2cad_nets::eval::{eval_constraint, eval_primitive, ConstraintReport, PrimitiveReport};
use sketch2cad_nets::inputs::{constraint_inputs, primitive_inputs};
use sketch2cad_nets::*;
use tower::ServiceExt;

type Check = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Data and trained models shared between criteria.

const TRAIN_N: usize = 2000;
const HELD_N: usize = 200;
const OVERFIT_N: usize = 16;
/// Disjoint seed ranges for the training, held-out and overfit corpora.
const TRAIN_SEED: u64 = 1_000;
const HELD_SEED: u64 = 900_000;
const OVERFIT_SEED: u64 = 500_000;
const EVAL_SEED: u64 = 77;

fn corpus(seed: u64, n: usize) -> Vec<Sketch> {
    (0..n)
        .map(|i| {
            generate_sketch(&GenConfig {
                seed: seed + i as u64,
                ..GenConfig::default()
            })
            .expect("generator")
        })
        .collect()
}

fn small_prim(d: usize, layers: usize, mode: ParamHeadMode) -> PrimitiveModelConfig {
    small_prim_weighted(d, layers, mode, PrimitiveWeights::default())
}

fn small_prim_weighted(d: usize, layers: usize, mode: ParamHeadMode, weights: PrimitiveWeights) -> PrimitiveModelConfig {
    PrimitiveModelConfig {
        weights,
        d_model: d,
        encoder_layers: layers,
        decoder_layers: layers,
        heads: 4,
        ff_dim: 2 * d,
        param_head_mode: mode,
        ..PrimitiveModelConfig::default()
    }
}

fn small_cons(d: usize, layers: usize) -> ConstraintModelConfig {
    ConstraintModelConfig {
        d_model: d,
        encoder_layers: layers,
        decoder_layers: layers,
        heads: 4,
        ff_dim: 2 * d,
        ..ConstraintModelConfig::default()
    }
}

fn optim(epochs: usize, batch: usize, lr: f64) -> OptimConfig {
    OptimConfig {
        epochs,
        batch_size: batch,
        lr,
        lr_step_epochs: epochs * 3 / 4,
        eval_every: 0,
        ..OptimConfig::default()
    }
}

struct Fixtures {
    train: Vec<Sketch>,
    held: Vec<Sketch>,
    held_images: Vec<RasterImage>,
    held_noisy_prims: Vec<Vec<Primitive>>,
    prim_cls: Option<PrimitiveNet>,
    prim_reg: Option<PrimitiveNet>,
    /// Classification heads trained with equal loss weights.
    prim_balanced: Option<PrimitiveNet>,
    cons_noisy: Option<ConstraintNet>,
    cons_clean: Option<ConstraintNet>,
    overfit: Option<(Vec<Sketch>, PrimitiveNet, ConstraintNet, Duration)>,
}

impl Fixtures {
    fn new() -> Self {
        let held = corpus(HELD_SEED, HELD_N);
        let noise = NoiseConfig::default();
        Self {
            train: corpus(TRAIN_SEED, TRAIN_N),
            held_images: primitive_inputs(&held, Regime::Noisy, &noise, EVAL_SEED),
            held_noisy_prims: constraint_inputs(&held, Regime::Noisy, &noise, EVAL_SEED),
            held,
            prim_cls: None,
            prim_reg: None,
            prim_balanced: None,
            cons_noisy: None,
            cons_clean: None,
            overfit: None,
        }
    }

    fn train_prim(&self, mode: ParamHeadMode, weights: PrimitiveWeights) -> Result<PrimitiveNet, String> {
        let net = PrimitiveNet::new(&small_prim_weighted(GEN_PRIM_D, GEN_PRIM_LAYERS, mode, weights)).map_err(err)?;
        let optim = OptimConfig { augment: true, ..optim(GEN_PRIM_EPOCHS, 16, GEN_PRIM_LR) };
        let spec = TrainSpec::new(optim, Regime::Noisy);
        train_primitive(&net, &self.train, &spec, 0, |_| Ok(())).map_err(err)?;
        Ok(net)
    }

    fn train_cons(&self, regime: Regime) -> Result<ConstraintNet, String> {
        let net = ConstraintNet::new(&small_cons(GEN_CONS_D, GEN_CONS_LAYERS)).map_err(err)?;
        let spec = TrainSpec::new(optim(GEN_CONS_EPOCHS, 16, GEN_CONS_LR), regime);
        train_constraint(&net, &self.train, &spec, 0, |_| Ok(())).map_err(err)?;
        Ok(net)
    }

    fn prim_cls(&mut self) -> Result<&PrimitiveNet, String> {
        if self.prim_cls.is_none() {
            self.prim_cls = Some(self.train_prim(ParamHeadMode::Classification, PrimitiveWeights::default())?);
        }
        Ok(self.prim_cls.as_ref().unwrap())
    }

    fn prim_reg(&mut self) -> Result<&PrimitiveNet, String> {
        if self.prim_reg.is_none() {
            self.prim_reg = Some(self.train_prim(ParamHeadMode::Regression, PrimitiveWeights::default())?);
        }
        Ok(self.prim_reg.as_ref().unwrap())
    }

    fn prim_balanced(&mut self) -> Result<&PrimitiveNet, String> {
        if self.prim_balanced.is_none() {
            let w = PrimitiveWeights { type_weight: 1.0, flag_weight: 1.0, param_weight: 1.0, ..PrimitiveWeights::default() };
            self.prim_balanced = Some(self.train_prim(ParamHeadMode::Classification, w)?);
        }
        Ok(self.prim_balanced.as_ref().unwrap())
    }

    fn cons(&mut self, regime: Regime) -> Result<&ConstraintNet, String> {
        let slot = match regime {
            Regime::Noisy => &self.cons_noisy,
            Regime::Noiseless => &self.cons_clean,
        };
        if slot.is_none() {
            let net = self.train_cons(regime)?;
            match regime {
                Regime::Noisy => self.cons_noisy = Some(net),
                Regime::Noiseless => self.cons_clean = Some(net),
            }
        }
        Ok(match regime {
            Regime::Noisy => self.cons_noisy.as_ref().unwrap(),
            Regime::Noiseless => self.cons_clean.as_ref().unwrap(),
        })
    }

    fn overfit(&mut self) -> Result<&(Vec<Sketch>, PrimitiveNet, ConstraintNet, Duration), String> {
        if self.overfit.is_none() {
            let start = Instant::now();
            let data = corpus(OVERFIT_SEED, OVERFIT_N);
            let p = PrimitiveNet::new(&small_prim(64, 2, ParamHeadMode::Classification)).map_err(err)?;
            let spec = TrainSpec::new(optim(OVERFIT_PRIM_EPOCHS, 8, 1e-3), Regime::Noiseless);
            train_primitive(&p, &data, &spec, 0, |_| Ok(())).map_err(err)?;
            let c = ConstraintNet::new(&small_cons(64, 2)).map_err(err)?;
            let spec = TrainSpec::new(optim(OVERFIT_CONS_EPOCHS, 8, 1e-3), Regime::Noiseless);
            train_constraint(&c, &data, &spec, 0, |_| Ok(())).map_err(err)?;
            self.overfit = Some((data, p, c, start.elapsed()));
        }
        Ok(self.overfit.as_ref().unwrap())
    }
}

const OVERFIT_PRIM_EPOCHS: usize = 150;
const OVERFIT_CONS_EPOCHS: usize = 200;
const GEN_PRIM_D: usize = 64;
const GEN_PRIM_LAYERS: usize = 2;
const GEN_PRIM_EPOCHS: usize = 20;
const GEN_PRIM_LR: f64 = 1e-3;
const GEN_CONS_D: usize = 64;
const GEN_CONS_LAYERS: usize = 2;
const GEN_CONS_EPOCHS: usize = 12;
const GEN_CONS_LR: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Random instances.

fn logits(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

fn random_prim_pred(rng: &mut ChaCha8Rng, queries: usize) -> PrimitivePredictionSet {
    let (t, f, p) = (logits(rng, queries * 5), logits(rng, queries * 2), logits(rng, queries * 7 * BINS));
    PrimitivePredictionSet::from_logits(queries, &t, &f, ParamPrediction::Bins(p)).unwrap()
}

fn random_cons_pred(rng: &mut ChaCha8Rng, queries: usize, k: usize) -> ConstraintPredictionSet {
    let (t, r) = (logits(rng, queries * 9), logits(rng, queries * 2 * k));
    ConstraintPredictionSet::from_logits(queries, k, &t, &r).unwrap()
}

fn random_sketch(rng: &mut ChaCha8Rng) -> Sketch {
    generate_sketch(&GenConfig {
        seed: rng.random(),
        ..GenConfig::default()
    })
    .unwrap()
}

/// Reorders queries: query `j` of the result is query `perm[j]` of `pred`.
fn permute_prim_queries(pred: &PrimitivePredictionSet, perm: &[usize]) -> PrimitivePredictionSet {
    let mut out = pred.clone();
    let (tc, pc) = (PrimitiveType::COUNT, 7 * BINS);
    let ParamPrediction::Bins(src) = &pred.params else { unreachable!() };
    let mut params = src.clone();
    for (j, &from) in perm.iter().enumerate() {
        out.type_logp[j * tc..(j + 1) * tc].copy_from_slice(&pred.type_logp[from * tc..(from + 1) * tc]);
        out.flag_logp[j * 2..(j + 1) * 2].copy_from_slice(&pred.flag_logp[from * 2..(from + 1) * 2]);
        params[j * pc..(j + 1) * pc].copy_from_slice(&src[from * pc..(from + 1) * pc]);
    }
    out.params = ParamPrediction::Bins(params);
    out
}

fn permute_cons_queries(pred: &ConstraintPredictionSet, perm: &[usize]) -> ConstraintPredictionSet {
    let mut out = pred.clone();
    let (tc, rc) = (ConstraintType::COUNT, 2 * pred.prims);
    for (j, &from) in perm.iter().enumerate() {
        out.type_logp[j * tc..(j + 1) * tc].copy_from_slice(&pred.type_logp[from * tc..(from + 1) * tc]);
        out.ref_logp[j * rc..(j + 1) * rc].copy_from_slice(&pred.ref_logp[from * rc..(from + 1) * rc]);
    }
    out
}

// ---------------------------------------------------------------------------
// Criteria.

fn c1_hungarian() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let n = rng.random_range(k..=10);
        let data: Vec<f64> = (0..k * n).map(|_| rng.random_range(0.0..10.0)).collect();
        let c = CostMatrix::new(k, n, data).map_err(err)?;
        let h = c.cost(&hungarian(&c).map_err(err)?);
        let b = c.cost(&brute_force_assignment(&c).map_err(err)?);
        worst = worst.max((h - b).abs());
    }
    let t = start.elapsed().as_secs_f64();
    Ok((worst <= 1e-9 && t < 10.0, format!("max |cost diff| {worst:.1e} over 1000 matrices in {t:.2}s (limit 10s)")))
}

fn c2_quantization() -> Check {
    let levels = GRID.levels();
    let exact = (0..levels).all(|q| quantize(dequantize(q, GRID).unwrap(), GRID).unwrap() == q);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0f64;
    for _ in 0..100_000 {
        let x: f64 = rng.random_range(0.0..=1.0);
        worst = worst.max((x - dequantize(quantize(x, GRID).map_err(err)?, GRID).map_err(err)?).abs());
    }
    Ok((
        exact && worst <= 1.0 / 128.0,
        format!("{levels}-level round trip exact: {exact}; max |x - deq(quant(x))| = {worst:.6} (bound {:.6})", 1.0 / 128.0),
    ))
}

fn c3_quantization_error() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = GenConfig::default();
    let sketches: Vec<_> = (0..1000).map(|_| generate_float_sketch(&cfg, &mut rng)).collect::<Result<_, _>>().map_err(err)?;
    let e = quantization_error(&sketches).map_err(err)?;
    let t = start.elapsed().as_secs_f64();
    Ok(((0.002..=0.008).contains(&e) && t < 60.0, format!("mean CD {e:.5} (range [0.002, 0.008]) in {t:.1}s")))
}

fn c4_invariances() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (pw, cw) = (PrimitiveWeights::default(), ConstraintWeights::default());
    let mut worst = [0f64; 4];
    for _ in 0..100 {
        let s = random_sketch(&mut rng);
        let pred = random_prim_pred(&mut rng, 20);
        let base = primitive_loss(&s.primitives, &pred, &pw).map_err(err)?.terms.total;
        let mut gt = s.primitives.clone();
        gt.shuffle(&mut rng);
        worst[0] = worst[0].max((primitive_loss(&gt, &pred, &pw).map_err(err)?.terms.total - base).abs());
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut rng);
        let permuted = permute_prim_queries(&pred, &perm);
        worst[1] = worst[1].max((primitive_loss(&s.primitives, &permuted, &pw).map_err(err)?.terms.total - base).abs());
    }
    let mut used = 0;
    while used < 100 {
        let s = random_sketch(&mut rng);
        if s.constraints.is_empty() {
            continue;
        }
        used += 1;
        let k = s.primitives.len();
        let pred = random_cons_pred(&mut rng, 40, k);
        let base = constraint_loss(&s.constraints, &pred, &cw).map_err(err)?.terms.total;
        let mut gt = s.constraints.clone();
        gt.shuffle(&mut rng);
        worst[2] = worst[2].max((constraint_loss(&gt, &pred, &cw).map_err(err)?.terms.total - base).abs());
        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut rng);
        let permuted = permute_cons_queries(&pred, &perm);
        worst[3] = worst[3].max((constraint_loss(&s.constraints, &permuted, &cw).map_err(err)?.terms.total - base).abs());
    }
    Ok((
        worst.iter().all(|&w| w < 1e-9),
        format!(
            "max |ΔL| primitive gt-order {:.1e}, query-perm {:.1e}; constraint gt-order {:.1e}, query-perm {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    ))
}

/// Fraction of coordinates whose analytic gradient agrees with central
/// differences within `tol` relative error.
fn gradient_agreement(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], tol: f64) -> (usize, usize) {
    let h = 1e-5;
    let mut ok = 0;
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        xs[i] = x[i] + h;
        let up = f(&xs);
        xs[i] = x[i] - h;
        let down = f(&xs);
        xs[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if (analytic[i] - numeric).abs() <= tol * scale || (analytic[i] - numeric).abs() < 1e-9 {
            ok += 1;
        }
    }
    (ok, x.len())
}

fn c5_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (pw, cw) = (PrimitiveWeights::default(), ConstraintWeights::default());
    let (mut pok, mut pn, mut cok, mut cn) = (0, 0, 0, 0);
    for _ in 0..5 {
        let s = random_sketch(&mut rng);
        let q = s.primitives.len() + 2;
        let (t, fl, p) = (logits(&mut rng, q * 5), logits(&mut rng, q * 2), logits(&mut rng, q * 7 * BINS));
        let x: Vec<f64> = [t.clone(), fl.clone(), p.clone()].concat();
        let split = |x: &[f64]| {
            PrimitivePredictionSet::from_logits(
                q,
                &x[..q * 5],
                &x[q * 5..q * 7],
                ParamPrediction::Bins(x[q * 7..].to_vec()),
            )
            .unwrap()
        };
        let l = primitive_loss(&s.primitives, &split(&x), &pw).map_err(err)?;
        let analytic = [l.grad.types, l.grad.flags, l.grad.params].concat();
        let f = |x: &[f64]| primitive_loss(&s.primitives, &split(x), &pw).unwrap().terms.total;
        let (a, b) = gradient_agreement(f, &x, &analytic, 1e-4);
        pok += a;
        pn += b;

        if s.constraints.is_empty() {
            continue;
        }
        let k = s.primitives.len();
        let q = s.constraints.len() + 2;
        let x: Vec<f64> = [logits(&mut rng, q * 9), logits(&mut rng, q * 2 * k)].concat();
        let split = |x: &[f64]| ConstraintPredictionSet::from_logits(q, k, &x[..q * 9], &x[q * 9..]).unwrap();
        let l = constraint_loss(&s.constraints, &split(&x), &cw).map_err(err)?;
        let analytic = [l.grad.types, l.grad.refs].concat();
        let f = |x: &[f64]| constraint_loss(&s.constraints, &split(x), &cw).unwrap().terms.total;
        let (a, b) = gradient_agreement(f, &x, &analytic, 1e-4);
        cok += a;
        cn += b;
    }
    let (pf, cf) = (pok as f64 / pn as f64, cok as f64 / cn.max(1) as f64);
    Ok((
        pf >= 0.95 && cf >= 0.95 && cn > 0,
        format!("within 1e-4 relative: primitive {pok}/{pn} ({:.2}%), constraint {cok}/{cn} ({:.2}%)", 100.0 * pf, 100.0 * cf),
    ))
}

fn c6_pointer() -> Check {
    use candle_core::{Device, Tensor};
    let dev = Device::Cpu;
    let mut worst_sum = 0f64;
    for (q, k) in [(1, 1), (3, 2), (5, 7), (40, 64)] {
        let slots = Tensor::randn(0f32, 2.0, (q, 2, 32), &dev).map_err(err)?;
        let fp = Tensor::randn(0f32, 2.0, (k, 32), &dev).map_err(err)?;
        let p: Vec<Vec<Vec<f32>>> = pointer(&slots, &fp).map_err(err)?.to_vec3().map_err(err)?;
        for row in p.iter().flatten() {
            worst_sum = worst_sum.max((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs());
        }
    }
    let slots = Tensor::randn(0f32, 2.0, (4, 2, 32), &dev).map_err(err)?;
    let one = Tensor::randn(0f32, 2.0, (1, 32), &dev).map_err(err)?;
    let single: Vec<f32> = pointer(&slots, &one).map_err(err)?.flatten_all().map_err(err)?.to_vec1().map_err(err)?;
    let k1 = single.iter().all(|&v| v == 1.0);
    // Primitive features live in the first 4 coordinates, slot features in the last 4.
    let fp = Tensor::new(&[[1f32, 2.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0], [0.5, 0.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0], [-2.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]], &dev).map_err(err)?;
    let so = Tensor::new(&[[[0f32, 0.0, 0.0, 0.0, 1.0, -2.0, 3.0, 0.5], [0.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 1.0]]], &dev).map_err(err)?;
    let uni: Vec<f32> = pointer(&so, &fp).map_err(err)?.flatten_all().map_err(err)?.to_vec1().map_err(err)?;
    let uniform_dev = uni.iter().map(|&v| (v as f64 - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    Ok((
        worst_sum <= 1e-6 && k1 && uniform_dev <= 1e-6,
        format!("max |Σp - 1| {worst_sum:.1e}; K=1 certain: {k1}; orthogonal max |p - 1/K| {uniform_dev:.1e}"),
    ))
}

fn prim_report(net: &PrimitiveNet, data: &[Sketch], images: &[RasterImage]) -> Result<PrimitiveReport, String> {
    eval_primitive(net, data, images, false).map_err(err)
}

fn cons_report(net: &ConstraintNet, data: &[Sketch], inputs: &[Vec<Primitive>]) -> Result<ConstraintReport, String> {
    eval_constraint(net, data, inputs).map_err(err)
}

fn c7_overfit(fx: &mut Fixtures) -> Check {
    let (data, p, c, took) = fx.overfit()?;
    let noise = NoiseConfig::default();
    let pr = prim_report(p, data, &primitive_inputs(data, Regime::Noiseless, &noise, 0))?;
    let cr = cons_report(c, data, &constraint_inputs(data, Regime::Noiseless, &noise, 0))?;
    let pa = pr.score.accuracy.ok_or("no primitive accuracy")?;
    let ca = cr.accuracy.ok_or("no constraint accuracy")?;
    let secs = took.as_secs_f64();
    let pass = pa.acc_type >= 0.99
        && pa.acc_flag >= 0.99
        && pa.acc_par >= 0.95
        && ca.acc_type >= 0.99
        && ca.acc_par >= 0.95
        && secs < 1800.0;
    Ok((
        pass,
        format!(
            "primitive type {:.3} flag {:.3} par {:.3}; constraint type {:.3} par {:.3}; trained in {secs:.0}s",
            pa.acc_type, pa.acc_flag, pa.acc_par, ca.acc_type, ca.acc_par
        ),
    ))
}

fn c8_generalization(fx: &mut Fixtures) -> Check {
    let start = Instant::now();
    fx.prim_balanced()?;
    fx.prim_cls()?;
    fx.cons(Regime::Noisy)?;
    let pr = prim_report(fx.prim_balanced.as_ref().unwrap(), &fx.held, &fx.held_images)?;
    let default_weights = prim_report(fx.prim_cls.as_ref().unwrap(), &fx.held, &fx.held_images)?;
    let cr = cons_report(fx.cons_noisy.as_ref().unwrap(), &fx.held, &fx.held_noisy_prims)?;
    let pa = pr.score.accuracy.ok_or("no primitive accuracy")?;
    let da = default_weights.score.accuracy.ok_or("no primitive accuracy")?;
    let ca = cr.accuracy.ok_or("no constraint accuracy")?;
    Ok((
        pa.acc_type >= 0.85 && ca.acc_type >= 0.80,
        format!(
            "held-out noisy: primitive [1,1,1] type {:.3} (≥0.85) [flag {:.3} par {:.3}; [1,1,5] type {:.3} par {:.3}], constraint type {:.3} (≥0.80) [par {:.3}]; {:.0}s",
            pa.acc_type,
            pa.acc_flag,
            pa.acc_par,
            da.acc_type,
            da.acc_par,
            ca.acc_type,
            ca.acc_par,
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn c9_noisy_advantage(fx: &mut Fixtures) -> Check {
    fx.cons(Regime::Noisy)?;
    fx.cons(Regime::Noiseless)?;
    let noisy = cons_report(fx.cons_noisy.as_ref().unwrap(), &fx.held, &fx.held_noisy_prims)?;
    let clean = cons_report(fx.cons_clean.as_ref().unwrap(), &fx.held, &fx.held_noisy_prims)?;
    let (a, b) = (noisy.accuracy.ok_or("no accuracy")?.acc_par, clean.accuracy.ok_or("no accuracy")?.acc_par);
    Ok((
        a - b >= 0.02,
        format!("noisy-test ACC_par: noisy-trained {a:.4}, noiseless-trained {b:.4}, gain {:.2} points (≥2)", 100.0 * (a - b)),
    ))
}

fn c10_correction() -> Check {
    let data = corpus(HELD_SEED + 10_000, 200);
    let noise = NoiseConfig {
        param_sigma: 1.5,
        ..NoiseConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut before, mut after) = (PrimitiveCounts::default(), PrimitiveCounts::default());
    for s in &data {
        let noisy = perturb_primitives(s, &noise, &mut rng).primitives;
        let snapped = apply_constraints(&noisy, &s.constraints);
        let sigma: Vec<usize> = (0..s.primitives.len()).collect();
        let wrap = |v: &[Primitive]| v.iter().copied().map(Some).collect::<Vec<_>>();
        before.add(&primitive_counts_at(&s.primitives, &sigma, &wrap(&noisy), 1));
        after.add(&primitive_counts_at(&s.primitives, &sigma, &wrap(&snapped), 1));
    }
    let (b, a) = (before.accuracy().map_err(err)?, after.accuracy().map_err(err)?);
    let same = before.type_ok == after.type_ok && before.flag_ok == after.flag_ok && before.total == after.total;
    Ok((
        a.acc_par > b.acc_par && same,
        format!(
            "ACC_par {:.4} -> {:.4}; type {}/{} -> {}/{}, flag {}/{} -> {}/{}",
            b.acc_par, a.acc_par, before.type_ok, before.total, after.type_ok, after.total, before.flag_ok, before.total, after.flag_ok, after.total
        ),
    ))
}

fn c11_chamfer(fx: &mut Fixtures) -> Check {
    fx.prim_cls()?;
    fx.prim_reg()?;
    let cls = prim_report(fx.prim_cls.as_ref().unwrap(), &fx.held, &fx.held_images)?;
    let reg = prim_report(fx.prim_reg.as_ref().unwrap(), &fx.held, &fx.held_images)?;
    let (a, b) = (cls.chamfer.ok_or("classification decoded nothing")?, reg.chamfer.ok_or("regression decoded nothing")?);
    Ok((
        a < b,
        format!(
            "held-out CD classification {a:.4} ({} empty) vs regression {b:.4} ({} empty)",
            cls.empty_decodes, reg.empty_decodes
        ),
    ))
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let res = app.clone().oneshot(req).await.expect("router is infallible");
    let status = res.status();
    let bytes = axum::body::to_bytes(res.into_body(), usize::MAX).await.expect("body");
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post(body: String) -> Request<Body> {
    Request::post("/parse?snap=true").header("content-type", "application/json").body(Body::from(body)).unwrap()
}

fn c12_service(fx: &mut Fixtures) -> Check {
    let (data, p, c, _) = fx.overfit()?;
    let sketch = data[0].clone();
    let state = sketch2cad_serve::AppState::loading();
    let app = sketch2cad_serve::router(state.clone());
    let pipe = Pipeline::new(
        CheckpointRoundTrip::primitive(p)?,
        CheckpointRoundTrip::constraint(c)?,
    );
    let image = rasterize(&sketch.primitives, None, &mut ChaCha8Rng::seed_from_u64(0)).to_png_base64();
    let body = json!({ "image_png_b64": image }).to_string();
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().map_err(err)?;
    rt.block_on(async move {
        let mut notes = Vec::new();
        let health = |app: &axum::Router| {
            let app = app.clone();
            async move { call(&app, Request::get("/health").body(Body::empty()).unwrap()).await }
        };
        let before = health(&app).await.0 == StatusCode::SERVICE_UNAVAILABLE
            && call(&app, post(body.clone())).await.0 == StatusCode::SERVICE_UNAVAILABLE;
        notes.push(format!("503 before load: {before}"));
        let ids = (pipe.prim_id().map(str::to_string), pipe.cons_id().to_string());
        state.install(pipe);
        let (hs, hv) = health(&app).await;
        let health_ok = hs == StatusCode::OK
            && hv["prim_ckpt_id"].as_str() == ids.0.as_deref()
            && hv["cons_ckpt_id"].as_str() == Some(ids.1.as_str());
        notes.push(format!("health ids: {health_ok}"));

        let bad = [
            "{".to_string(),
            json!({ "strokes": [] }).to_string(),
            json!({ "image_png_b64": small_png_b64() }).to_string(),
        ];
        let mut codes_ok = true;
        for b in bad {
            codes_ok &= call(&app, post(b)).await.0 == StatusCode::BAD_REQUEST;
        }
        let huge = json!({ "image_png_b64": "A".repeat(sketch2cad_serve::MAX_BODY_BYTES + 16) }).to_string();
        codes_ok &= call(&app, post(huge)).await.0 == StatusCode::PAYLOAD_TOO_LARGE;
        notes.push(format!("400/413: {codes_ok}"));

        let tasks: Vec<_> = (0..32)
            .map(|_| {
                let (app, body) = (app.clone(), body.clone());
                tokio::spawn(async move { call(&app, post(body)).await })
            })
            .collect();
        let mut responses = Vec::new();
        for t in tasks {
            let (status, mut v) = t.await.map_err(err)?;
            if status != StatusCode::OK {
                return Err(format!("parallel request returned {status}"));
            }
            v.as_object_mut().ok_or("response is not an object")?.remove("timing_ms");
            responses.push(v);
        }
        let identical = responses.iter().all(|r| r == &responses[0]);
        notes.push(format!("32 parallel identical: {identical}"));

        let decoded: Vec<Primitive> = serde_json::from_value(responses[0]["primitives"].clone()).map_err(err)?;
        let gt: BTreeSet<String> = sketch.primitives.iter().map(|p| format!("{p:?}")).collect();
        let got: BTreeSet<String> = decoded.iter().map(|p| format!("{p:?}")).collect();
        notes.push(format!("overfit replay exact {}/{}", gt.intersection(&got).count(), gt.len()));
        let snapped = responses[0].get("snapped_primitives").is_some();
        notes.push(format!("snapped field: {snapped}"));
        Ok((before && health_ok && codes_ok && identical && snapped, notes.join("; ")))
    })
}

/// Service runs on weights reloaded from disk, as in deployment.
struct CheckpointRoundTrip;

impl CheckpointRoundTrip {
    fn primitive(net: &PrimitiveNet) -> Result<PrimitiveNet, String> {
        let dir = std::env::temp_dir().join(format!("s2c-accept-p-{}", std::process::id()));
        let ck = CheckpointDir::new(&dir);
        ck.save_primitive(net, &TrainSpec::new(OptimConfig::default(), Regime::Noiseless).state(Stage::Primitive, 0)).map_err(err)?;
        let out = ck.load_primitive().map_err(err);
        let _ = std::fs::remove_dir_all(&dir);
        out
    }

    fn constraint(net: &ConstraintNet) -> Result<ConstraintNet, String> {
        let dir = std::env::temp_dir().join(format!("s2c-accept-c-{}", std::process::id()));
        let ck = CheckpointDir::new(&dir);
        ck.save_constraint(net, &TrainSpec::new(OptimConfig::default(), Regime::Noiseless).state(Stage::Constraint, 0)).map_err(err)?;
        let out = ck.load_constraint().map_err(err);
        let _ = std::fs::remove_dir_all(&dir);
        out
    }
}

/// A valid PNG of the wrong size, base64-encoded.
fn small_png_b64() -> String {
    use base64::Engine;
    let mut buf = std::io::Cursor::new(Vec::new());
    image::GrayImage::new(64, 64).write_to(&mut buf, image::ImageFormat::Png).expect("in-memory PNG");
    base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
}

fn main() {
    let only: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |i: usize| only.is_empty() || only.contains(&i);
    let mut failed = 0;
    let mut report = |i: usize, name: &str, run: &mut dyn FnMut() -> Check| {
        if !want(i) {
            return;
        }
        let start = Instant::now();
        let (pass, detail) = run().unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            failed += 1;
        }
        let secs = start.elapsed().as_secs_f64();
        println!("{} [{i:>2}] {name}: {detail} ({secs:.1}s)", if pass { "PASS" } else { "FAIL" });
    };
    report(1, "hungarian equals brute force", &mut c1_hungarian);
    report(2, "quantization round trip", &mut c2_quantization);
    report(3, "quantization error", &mut c3_quantization_error);
    report(4, "set-loss invariances", &mut c4_invariances);
    report(5, "gradient check", &mut c5_gradients);
    report(6, "pointer contract", &mut c6_pointer);
    report(10, "constraint correction", &mut c10_correction);

    // Trained models are built on first use and shared.
    let mut fx = None::<Fixtures>;
    let mut lazy = |f: fn(&mut Fixtures) -> Check| f(fx.get_or_insert_with(Fixtures::new));
    report(7, "overfit 16 sketches", &mut || lazy(c7_overfit));
    report(12, "service contract", &mut || lazy(c12_service));
    report(8, "generalization", &mut || lazy(c8_generalization));
    report(9, "noisy-training advantage", &mut || lazy(c9_noisy_advantage));
    report(11, "classification vs regression chamfer", &mut || lazy(c11_chamfer));
    println!("acceptance: {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
