//! Network outputs in framework-independent form, and decoding to sketches.

use crate::error::{Error, Result};
use crate::quant::{quantize, quantize_length, GRID, MAX_LEVEL};
use crate::sketch::{Constraint, ConstraintType, Primitive, PrimitiveType, PARAM_SLOTS, RADIUS_SLOT};

/// Bins per quantized parameter.
pub const BINS: usize = 64;
/// Stand-in for log(0) in one-hot prediction sets; keeps costs finite.
pub const LOG_ZERO: f64 = -1e4;
const NORM_TOLERANCE: f64 = 1e-5;

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![-(x.len() as f64).ln(); x.len()];
    }
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

fn check_normalized(logp: &[f64], width: usize, what: &str) -> Result<()> {
    for (i, row) in logp.chunks(width).enumerate() {
        let s: f64 = row.iter().map(|v| v.exp()).sum();
        if !((s - 1.0).abs() <= NORM_TOLERANCE) || row.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput(format!("{what} distribution {i} sums to {s}")));
        }
    }
    Ok(())
}

fn one_hot(width: usize, hot: usize) -> impl Iterator<Item = f64> {
    (0..width).map(move |i| if i == hot { 0.0 } else { LOG_ZERO })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamPrediction {
    /// Log-probabilities (or logits before normalization), `queries × 7 × 64`.
    Bins(Vec<f64>),
    /// Unit-square values, radius slot as a length; `queries × 7`.
    Values(Vec<f64>),
}

/// Per-query log-distributions over type, flag and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitivePredictionSet {
    pub queries: usize,
    /// `queries × 5`
    pub type_logp: Vec<f64>,
    /// `queries × 2`, index 1 is `flag = true`.
    pub flag_logp: Vec<f64>,
    pub params: ParamPrediction,
}

impl PrimitivePredictionSet {
    /// Normalizes raw logits with a log-softmax per distribution.
    pub fn from_logits(queries: usize, types: &[f64], flags: &[f64], params: ParamPrediction) -> Result<Self> {
        let norm = |x: &[f64], w: usize| x.chunks(w).flat_map(log_softmax).collect::<Vec<_>>();
        let params = match params {
            ParamPrediction::Bins(b) => ParamPrediction::Bins(norm(&b, BINS)),
            v => v,
        };
        let set = Self {
            queries,
            type_logp: norm(types, PrimitiveType::COUNT),
            flag_logp: norm(flags, 2),
            params,
        };
        set.validate()?;
        Ok(set)
    }

    /// One query per primitive carrying probability 1 on its exact encoding,
    /// followed by `None` queries up to `queries`.
    pub fn one_hot(prims: &[Primitive], queries: usize) -> Self {
        let mut type_logp = Vec::new();
        let mut flag_logp = Vec::new();
        let mut bins = Vec::new();
        for j in 0..queries {
            let p = prims.get(j).copied().unwrap_or(Primitive {
                ptype: PrimitiveType::None,
                flag: false,
                params: [0; PARAM_SLOTS],
            });
            type_logp.extend(one_hot(PrimitiveType::COUNT, p.ptype.index()));
            flag_logp.extend(one_hot(2, p.flag as usize));
            for v in p.params {
                bins.extend(one_hot(BINS, v as usize));
            }
        }
        Self {
            queries,
            type_logp,
            flag_logp,
            params: ParamPrediction::Bins(bins),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.queries;
        let shape_ok = self.type_logp.len() == n * PrimitiveType::COUNT
            && self.flag_logp.len() == n * 2
            && match &self.params {
                ParamPrediction::Bins(b) => b.len() == n * PARAM_SLOTS * BINS,
                ParamPrediction::Values(v) => v.len() == n * PARAM_SLOTS && v.iter().all(|x| x.is_finite()),
            };
        if !shape_ok {
            return Err(Error::InvalidInput(format!("prediction arrays do not match {n} queries")));
        }
        check_normalized(&self.type_logp, PrimitiveType::COUNT, "type")?;
        check_normalized(&self.flag_logp, 2, "flag")?;
        if let ParamPrediction::Bins(b) = &self.params {
            check_normalized(b, BINS, "parameter")?;
        }
        Ok(())
    }

    pub fn types(&self, j: usize) -> &[f64] {
        &self.type_logp[j * PrimitiveType::COUNT..(j + 1) * PrimitiveType::COUNT]
    }

    pub fn flags(&self, j: usize) -> &[f64] {
        &self.flag_logp[j * 2..j * 2 + 2]
    }

    pub fn is_regression(&self) -> bool {
        matches!(self.params, ParamPrediction::Values(_))
    }

    /// Log-probabilities over bins; panics in regression mode.
    pub fn bins(&self, j: usize, slot: usize) -> &[f64] {
        match &self.params {
            ParamPrediction::Bins(b) => {
                let at = (j * PARAM_SLOTS + slot) * BINS;
                &b[at..at + BINS]
            }
            ParamPrediction::Values(_) => panic!("bins requested from a regression prediction"),
        }
    }

    /// Quantized value of one slot.
    pub fn decode_slot(&self, j: usize, slot: usize) -> u8 {
        match &self.params {
            ParamPrediction::Bins(_) => argmax(self.bins(j, slot)) as u8,
            ParamPrediction::Values(v) => {
                let x = v[j * PARAM_SLOTS + slot];
                let q = if slot == RADIUS_SLOT {
                    quantize_length(x, GRID)
                } else {
                    quantize(x, GRID)
                };
                q.unwrap_or(0).min(MAX_LEVEL as u32) as u8
            }
        }
    }

    pub fn decode_type(&self, j: usize) -> PrimitiveType {
        PrimitiveType::from_index(argmax(self.types(j))).expect("type index in range")
    }

    /// The primitive query `j` encodes, or `None` for the no-object class.
    pub fn decode_query(&self, j: usize) -> Option<Primitive> {
        let ptype = self.decode_type(j);
        if ptype == PrimitiveType::None {
            return None;
        }
        let mut params = [0u8; PARAM_SLOTS];
        for &slot in ptype.live_slots() {
            params[slot] = self.decode_slot(j, slot);
        }
        Some(Primitive {
            ptype,
            flag: argmax(self.flags(j)) == 1,
            params,
        })
    }

    pub fn decode_all(&self) -> Vec<Option<Primitive>> {
        (0..self.queries).map(|j| self.decode_query(j)).collect()
    }
}

/// Non-`None` decoded primitives in query order.
pub fn decode_predictions(pred: &PrimitivePredictionSet) -> Vec<Primitive> {
    pred.decode_all().into_iter().flatten().collect()
}

/// Per-query log-distributions over constraint type and the two reference slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintPredictionSet {
    pub queries: usize,
    /// Number of input primitives; support of every reference distribution.
    pub prims: usize,
    /// `queries × 9`
    pub type_logp: Vec<f64>,
    /// `queries × 2 × prims`
    pub ref_logp: Vec<f64>,
}

impl ConstraintPredictionSet {
    pub fn from_logits(queries: usize, prims: usize, types: &[f64], refs: &[f64]) -> Result<Self> {
        if prims == 0 {
            return Err(Error::InvalidInput("pointer over zero primitives".into()));
        }
        let set = Self {
            queries,
            prims,
            type_logp: types.chunks(ConstraintType::COUNT).flat_map(log_softmax).collect(),
            ref_logp: refs.chunks(prims).flat_map(log_softmax).collect(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn one_hot(cons: &[Constraint], queries: usize, prims: usize) -> Self {
        let mut type_logp = Vec::new();
        let mut ref_logp = Vec::new();
        for j in 0..queries {
            match cons.get(j) {
                Some(c) => {
                    type_logp.extend(one_hot(ConstraintType::COUNT, c.ctype.index()));
                    for slot in 0..2 {
                        let r = c.refs.get(slot).copied().unwrap_or(0);
                        ref_logp.extend(one_hot(prims, r));
                    }
                }
                None => {
                    type_logp.extend(one_hot(ConstraintType::COUNT, ConstraintType::None.index()));
                    for _ in 0..2 {
                        ref_logp.extend(one_hot(prims, 0));
                    }
                }
            }
        }
        Self {
            queries,
            prims,
            type_logp,
            ref_logp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prims == 0
            || self.type_logp.len() != self.queries * ConstraintType::COUNT
            || self.ref_logp.len() != self.queries * 2 * self.prims
        {
            return Err(Error::InvalidInput(format!(
                "prediction arrays do not match {} queries over {} primitives",
                self.queries, self.prims
            )));
        }
        check_normalized(&self.type_logp, ConstraintType::COUNT, "type")?;
        check_normalized(&self.ref_logp, self.prims, "pointer")
    }

    pub fn types(&self, j: usize) -> &[f64] {
        &self.type_logp[j * ConstraintType::COUNT..(j + 1) * ConstraintType::COUNT]
    }

    pub fn refs(&self, j: usize, slot: usize) -> &[f64] {
        let at = (j * 2 + slot) * self.prims;
        &self.ref_logp[at..at + self.prims]
    }

    pub fn decode_type(&self, j: usize) -> ConstraintType {
        ConstraintType::from_index(argmax(self.types(j))).expect("type index in range")
    }

    pub fn decode_ref(&self, j: usize, slot: usize) -> usize {
        argmax(self.refs(j, slot))
    }
}

/// Argmax decode; drops `None`, self-referencing pairs and duplicates.
pub fn decode_constraints(pred: &ConstraintPredictionSet) -> Vec<Constraint> {
    let mut out: Vec<Constraint> = Vec::new();
    for j in 0..pred.queries {
        let ctype = pred.decode_type(j);
        if ctype == ConstraintType::None {
            continue;
        }
        let refs: Vec<usize> = (0..ctype.arity()).map(|s| pred.decode_ref(j, s)).collect();
        if refs.len() == 2 && refs[0] == refs[1] {
            continue;
        }
        let c = Constraint::new(ctype, refs);
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}
