//! Primitive set → constraint set: averaged primitive embeddings, encoder,
//! learned constraint queries, decoder, a type head and a pointer head that
//! scores every input primitive for each reference slot.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::init::Init;
use candle_nn::{linear, Linear, VarMap};
use sketch2cad_core::prediction::{ConstraintPredictionSet, BINS};
use sketch2cad_core::quant::{dequantize, dequantize_length, GRID};
use sketch2cad_core::sketch::{ConstraintType, Primitive, PrimitiveType, PARAM_SLOTS, RADIUS_SLOT};

use crate::config::{ConstraintModelConfig, ParamEncoding};
use crate::error::{Error, Result};
use crate::init::SeededBackend;
use crate::layers::{Decoder, Encoder, Mlp, MASKED};

/// Sinusoid frequencies for `sincos_float` (features = 2×), geometric from π to 64π.
const SINCOS_FREQS: usize = 16;
/// Hidden width of the per-slot `mlp_float` encoder.
const MLP_HIDDEN: usize = 32;

/// Raw outputs for a batch of sketches padded to the longest one.
pub struct ConstraintLogits {
    /// `[B, N, 9]`
    pub types: Tensor,
    /// `[B, N, 2, W]`; only the first `prims[b]` entries of the last axis are meaningful.
    pub refs: Tensor,
    pub prims: Vec<usize>,
}

impl ConstraintLogits {
    pub fn to_predictions(&self) -> Result<Vec<ConstraintPredictionSet>> {
        let (b, n, _) = self.types.dims3()?;
        let width = self.refs.dims()[3];
        let types: Vec<f64> = self.types.flatten_all()?.to_vec1::<f32>()?.into_iter().map(f64::from).collect();
        let refs: Vec<f32> = self.refs.flatten_all()?.to_vec1::<f32>()?;
        let tc = ConstraintType::COUNT;
        (0..b)
            .map(|i| {
                let k = self.prims[i];
                let mut r = Vec::with_capacity(n * 2 * k);
                for row in 0..n * 2 {
                    let at = (i * n * 2 + row) * width;
                    r.extend(refs[at..at + k].iter().map(|&v| f64::from(v)));
                }
                Ok(ConstraintPredictionSet::from_logits(n, k, &types[i * n * tc..(i + 1) * n * tc], &r)?)
            })
            .collect()
    }
}

/// Pointer distributions: `softmax_i ⟨slot_j, F_P[i]⟩ / √d`.
///
/// `slots: [Q, 2, d]`, `fp: [K, d]` → probabilities `[Q, 2, K]`.
pub fn pointer(slots: &Tensor, fp: &Tensor) -> Result<Tensor> {
    let (k, _) = fp.dims2()?;
    if k == 0 {
        return Err(Error::Config("pointer over an empty primitive set".into()));
    }
    let logits = pointer_logits(&slots.unsqueeze(0)?, &fp.unsqueeze(0)?)?.squeeze(0)?;
    Ok(candle_nn::ops::softmax(&logits, D::Minus1)?)
}

/// `slots: [B, N, 2, d]`, `fp: [B, K, d]` → `[B, N, 2, K]`.
fn pointer_logits(slots: &Tensor, fp: &Tensor) -> Result<Tensor> {
    let (b, n, two, d) = slots.dims4()?;
    let flat = slots.reshape((b, n * two, d))?;
    let logits = (flat.matmul(&fp.t()?.contiguous()?)? * (1.0 / (d as f64).sqrt()))?;
    Ok(logits.reshape((b, n, two, fp.dim(1)?))?)
}

/// Unit-square value of a slot, as the float encodings see it.
fn slot_value(p: &Primitive, s: usize) -> f64 {
    let q = p.params[s] as u32;
    if s == RADIUS_SLOT {
        dequantize_length(q, GRID).unwrap_or(0.0)
    } else {
        dequantize(q, GRID).unwrap_or(0.0)
    }
}

enum SlotEncoder {
    /// `[7·64, d]` rows, slot-major.
    Table(Tensor),
    /// Fixed features projected by `[7, F, d]`.
    Sincos(Tensor),
    /// Per-slot `1 → h → d` perceptron.
    Mlp { w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor },
}

pub struct ConstraintNet {
    cfg: ConstraintModelConfig,
    vars: VarMap,
    type_table: Tensor,
    flag_table: Tensor,
    slots: SlotEncoder,
    pos_e: Option<Tensor>,
    encoder: Encoder,
    queries: Tensor,
    pos_d: Tensor,
    decoder: Decoder,
    type_head: Linear,
    /// Pointer mode: `[d → 2d]` slot features; otherwise `[d → 2·max_primitives]` logits.
    ref_head: Mlp,
}

/// Index and mask tensors for one padded batch.
struct BatchInput {
    b: usize,
    k: usize,
    types: Tensor,
    flags: Tensor,
    /// Live-slot mask `[B, K, 7]`, zero on padding slots and padding primitives.
    live: Tensor,
    /// `1 / Num`, `[B, K, 1]`.
    inv_num: Tensor,
    /// Slot-offset table indices `[B·K·7]`.
    bins: Tensor,
    /// Dequantized values `[B·K, 7]`.
    values: Vec<f32>,
    /// Additive key mask `[B, 1, 1, K]`.
    mask: Tensor,
}

impl ConstraintNet {
    pub fn new(cfg: &ConstraintModelConfig) -> Result<Self> {
        cfg.validate()?;
        let vars = VarMap::new();
        let vb = SeededBackend::builder(&vars, cfg.seed);
        let t = cfg.transformer();
        let d = t.d_model;
        let emb = Init::Randn { mean: 0.0, stdev: 1.0 };
        let slots = match cfg.param_encoding {
            ParamEncoding::Embedding6bit => SlotEncoder::Table(vb.get_with_hints((PARAM_SLOTS * BINS, d), "slot_tables", emb)?),
            ParamEncoding::SincosFloat => {
                let f = 2 * SINCOS_FREQS;
                let std = 1.0 / (f as f64).sqrt();
                SlotEncoder::Sincos(vb.get_with_hints((PARAM_SLOTS, f, d), "slot_proj", Init::Randn { mean: 0.0, stdev: std })?)
            }
            ParamEncoding::MlpFloat => {
                let h = MLP_HIDDEN;
                let std2 = (2.0 / h as f64).sqrt();
                SlotEncoder::Mlp {
                    w1: vb.get_with_hints((PARAM_SLOTS, 1, h), "slot_mlp.w1", Init::Randn { mean: 0.0, stdev: 4.0 })?,
                    b1: vb.get_with_hints((PARAM_SLOTS, 1, h), "slot_mlp.b1", Init::Uniform { lo: -2.0, up: 2.0 })?,
                    w2: vb.get_with_hints((PARAM_SLOTS, h, d), "slot_mlp.w2", Init::Randn { mean: 0.0, stdev: std2 })?,
                    b2: vb.get_with_hints((PARAM_SLOTS, 1, d), "slot_mlp.b2", Init::Const(0.0))?,
                }
            }
        };
        let ref_out = if cfg.use_pointer { 2 * d } else { 2 * cfg.max_primitives };
        Ok(Self {
            type_table: vb.get_with_hints((PrimitiveType::COUNT, d), "type_table", emb)?,
            flag_table: vb.get_with_hints((2, d), "flag_table", emb)?,
            slots,
            pos_e: if cfg.positional_encoding {
                Some(vb.get_with_hints((1, cfg.max_primitives, d), "pos_e", Init::Randn { mean: 0.0, stdev: 0.1 })?)
            } else {
                None
            },
            encoder: Encoder::new(&t, vb.pp("encoder"))?,
            queries: vb.get_with_hints((1, cfg.queries, d), "queries", Init::Randn { mean: 0.0, stdev: 1.0 })?,
            pos_d: vb.get_with_hints((1, cfg.queries, d), "pos_d", Init::Randn { mean: 0.0, stdev: 0.1 })?,
            decoder: Decoder::new(&t, vb.pp("decoder"))?,
            type_head: linear(d, ConstraintType::COUNT, vb.pp("type_head"))?,
            ref_head: Mlp::new(d, d, ref_out, vb.pp("ref_head"))?,
            cfg: cfg.clone(),
            vars,
        })
    }

    pub fn config(&self) -> &ConstraintModelConfig {
        &self.cfg
    }

    pub fn vars(&self) -> &VarMap {
        &self.vars
    }

    fn batch_input(&self, batch: &[&[Primitive]]) -> Result<BatchInput> {
        let max = self.cfg.max_primitives;
        if let Some(big) = batch.iter().find(|p| p.len() > max) {
            return Err(Error::Config(format!("{} primitives exceed the configured maximum {max}", big.len())));
        }
        if batch.is_empty() || batch.iter().any(|p| p.is_empty()) {
            return Err(Error::Config("constraint inference needs at least one primitive".into()));
        }
        let b = batch.len();
        let k = batch.iter().map(|p| p.len()).max().unwrap_or(1);
        let mut types = vec![0u32; b * k];
        let mut flags = vec![0u32; b * k];
        let mut live = vec![0f32; b * k * PARAM_SLOTS];
        let mut inv_num = vec![1f32; b * k];
        let mut bins = vec![0u32; b * k * PARAM_SLOTS];
        let mut values = vec![0f32; b * k * PARAM_SLOTS];
        let mut mask = vec![MASKED as f32; b * k];
        for (i, prims) in batch.iter().enumerate() {
            for (j, p) in prims.iter().enumerate() {
                let at = i * k + j;
                types[at] = p.ptype.index() as u32;
                flags[at] = p.flag as u32;
                mask[at] = 0.0;
                let slots = p.ptype.live_slots();
                inv_num[at] = 1.0 / (2 + slots.len()) as f32;
                for s in 0..PARAM_SLOTS {
                    bins[at * PARAM_SLOTS + s] = (s * BINS + p.params[s] as usize) as u32;
                    values[at * PARAM_SLOTS + s] = slot_value(p, s) as f32;
                }
                for &s in slots {
                    live[at * PARAM_SLOTS + s] = 1.0;
                }
            }
        }
        let dev = &Device::Cpu;
        Ok(BatchInput {
            b,
            k,
            types: Tensor::from_vec(types, b * k, dev)?,
            flags: Tensor::from_vec(flags, b * k, dev)?,
            live: Tensor::from_vec(live, (b, k, PARAM_SLOTS), dev)?,
            inv_num: Tensor::from_vec(inv_num, (b, k, 1), dev)?,
            bins: Tensor::from_vec(bins, b * k * PARAM_SLOTS, dev)?,
            values,
            mask: Tensor::from_vec(mask, (b, 1, 1, k), dev)?,
        })
    }

    /// Per-slot parameter features `[B, K, 7, d]`.
    fn slot_features(&self, x: &BatchInput) -> Result<Tensor> {
        let d = self.cfg.d_model;
        let (b, k) = (x.b, x.k);
        let rows = b * k;
        let per_slot = |t: Tensor| -> Result<Tensor> {
            // [7, B·K, d] → [B, K, 7, d]
            Ok(t.transpose(0, 1)?.reshape((b, k, PARAM_SLOTS, d))?)
        };
        match &self.slots {
            SlotEncoder::Table(table) => Ok(table.index_select(&x.bins, 0)?.reshape((b, k, PARAM_SLOTS, d))?),
            SlotEncoder::Sincos(proj) => {
                let f = 2 * SINCOS_FREQS;
                let mut feats = vec![0f32; PARAM_SLOTS * rows * f];
                for r in 0..rows {
                    for s in 0..PARAM_SLOTS {
                        let v = x.values[r * PARAM_SLOTS + s] as f64;
                        let at = (s * rows + r) * f;
                        for i in 0..SINCOS_FREQS {
                            let w = std::f64::consts::PI * 2f64.powf(6.0 * i as f64 / (SINCOS_FREQS - 1) as f64);
                            feats[at + 2 * i] = (w * v).sin() as f32;
                            feats[at + 2 * i + 1] = (w * v).cos() as f32;
                        }
                    }
                }
                let feats = Tensor::from_vec(feats, (PARAM_SLOTS, rows, f), &Device::Cpu)?;
                per_slot(feats.matmul(proj)?)
            }
            SlotEncoder::Mlp { w1, b1, w2, b2 } => {
                let mut v = vec![0f32; PARAM_SLOTS * rows];
                for r in 0..rows {
                    for s in 0..PARAM_SLOTS {
                        v[s * rows + r] = x.values[r * PARAM_SLOTS + s];
                    }
                }
                let v = Tensor::from_vec(v, (PARAM_SLOTS, rows, 1), &Device::Cpu)?;
                let h = v.matmul(w1)?.broadcast_add(b1)?.relu()?;
                per_slot(h.matmul(w2)?.broadcast_add(b2)?)
            }
        }
    }

    fn embed_input(&self, x: &BatchInput) -> Result<Tensor> {
        let d = self.cfg.d_model;
        let (b, k) = (x.b, x.k);
        let t = self.type_table.index_select(&x.types, 0)?.reshape((b, k, d))?;
        let f = self.flag_table.index_select(&x.flags, 0)?.reshape((b, k, d))?;
        let slots = self.slot_features(x)?.broadcast_mul(&x.live.unsqueeze(3)?)?.sum(2)?;
        Ok((t + f + slots)?.broadcast_mul(&x.inv_num)?)
    }

    /// Primitive embeddings `[B, K, d]`, padded rows zero-weighted.
    pub fn embed(&self, batch: &[&[Primitive]]) -> Result<Tensor> {
        self.embed_input(&self.batch_input(batch)?)
    }

    /// Embedding of a single primitive, `[d]`.
    pub fn embed_primitive(&self, p: &Primitive) -> Result<Tensor> {
        Ok(self.embed(&[std::slice::from_ref(p)])?.flatten_all()?)
    }

    pub fn type_embedding(&self, t: PrimitiveType) -> Result<Tensor> {
        Ok(self.type_table.get(t.index())?)
    }

    pub fn flag_embedding(&self, flag: bool) -> Result<Tensor> {
        Ok(self.flag_table.get(flag as usize)?)
    }

    /// Encoding of value `q` in parameter slot `slot`, `[d]`.
    pub fn slot_embedding(&self, slot: usize, q: u8) -> Result<Tensor> {
        if slot >= PARAM_SLOTS || q as usize >= BINS {
            return Err(Error::Config(format!("slot {slot} / value {q} out of range")));
        }
        let mut p = Primitive::point(false, 0, 0);
        p.params[slot] = q;
        let x = self.batch_input(&[std::slice::from_ref(&p)])?;
        Ok(self.slot_features(&x)?.get(0)?.get(0)?.get(slot)?)
    }

    fn pos(&self, k: usize) -> Result<Option<Tensor>> {
        Ok(match &self.pos_e {
            Some(p) => Some(p.narrow(1, 0, k)?),
            None => None,
        })
    }

    /// Encoded primitive features `F_P`, `[K, d]`.
    pub fn encode_primitives(&self, prims: &[Primitive]) -> Result<Tensor> {
        let x = self.batch_input(&[prims])?;
        let e = self.embed_input(&x)?;
        let pos = self.pos(x.k)?;
        Ok(self.encoder.forward(&e, pos.as_ref(), Some(&x.mask))?.squeeze(0)?)
    }

    pub fn forward(&self, batch: &[&[Primitive]]) -> Result<ConstraintLogits> {
        let x = self.batch_input(batch)?;
        let e = self.embed_input(&x)?;
        let pos = self.pos(x.k)?;
        let fp = self.encoder.forward(&e, pos.as_ref(), Some(&x.mask))?;
        let f = self.decoder.forward(&self.queries, &self.pos_d, &fp, pos.as_ref(), Some(&x.mask))?;
        let n = self.cfg.queries;
        let head = self.ref_head.forward(&f)?;
        let refs = if self.cfg.use_pointer {
            let slots = head.reshape((x.b, n, 2, self.cfg.d_model))?;
            pointer_logits(&slots, &fp)?
        } else {
            // Entries at or beyond each sketch's K_p are dropped when converting,
            // which is the same as masking them to -inf.
            head.reshape((x.b, n, 2, self.cfg.max_primitives))?
        };
        Ok(ConstraintLogits {
            types: self.type_head.forward(&f)?,
            refs,
            prims: batch.iter().map(|p| p.len()).collect(),
        })
    }

    pub fn predict(&self, batch: &[&[Primitive]]) -> Result<Vec<ConstraintPredictionSet>> {
        self.forward(batch)?.to_predictions()
    }
}

/// Dense `[B, N, 2, W]` tensor from per-sketch `N × 2 × K_b` rows, zero padded.
pub(crate) fn pad_refs(rows: &[&[f64]], prims: &[usize], n: usize, width: usize) -> Result<Tensor> {
    let b = rows.len();
    let mut out = vec![0f32; b * n * 2 * width];
    for (i, (r, &k)) in rows.iter().zip(prims).enumerate() {
        for row in 0..n * 2 {
            for j in 0..k {
                out[(i * n * 2 + row) * width + j] = r[row * k + j] as f32;
            }
        }
    }
    Ok(Tensor::from_vec(out, (b, n, 2, width), &Device::Cpu)?.to_dtype(DType::F32)?)
}
