//! Matched set losses, with gradients with respect to the network logits.
//!
//! Every distribution in a prediction set is a log-softmax of logits, so the
//! gradient of `-log p[k]` with respect to those logits is `softmax - onehot(k)`;
//! the functions here return that gradient laid out like the logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{
    constraint_cost_matrix, hungarian, param_cost, primitive_cost_matrix, ref_cost, target_value, ConstraintWeights,
    PrimitiveWeights,
};
use crate::prediction::{ConstraintPredictionSet, ParamPrediction, PrimitivePredictionSet, BINS};
use crate::sketch::{Constraint, ConstraintType, Primitive, PrimitiveType, PARAM_SLOTS};

/// Loss components; `no_object` already includes its weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveLossTerms {
    pub total: f64,
    pub types: f64,
    pub flags: f64,
    pub params: f64,
    pub no_object: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveGrad {
    pub types: Vec<f64>,
    pub flags: Vec<f64>,
    /// Bin logits (`queries × 7 × 64`) or regression values (`queries × 7`).
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveLoss {
    pub terms: PrimitiveLossTerms,
    /// Query matched to each ground-truth primitive.
    pub assignment: Vec<usize>,
    pub grad: PrimitiveGrad,
}

/// Adds `scale * (softmax(logp) - onehot(k))` into `grad`.
fn ce_grad(grad: &mut [f64], logp: &[f64], k: usize, scale: f64) {
    for (i, (g, lp)) in grad.iter_mut().zip(logp).enumerate() {
        *g += scale * (lp.exp() - if i == k { 1.0 } else { 0.0 });
    }
}

pub fn primitive_loss(gt: &[Primitive], pred: &PrimitivePredictionSet, w: &PrimitiveWeights) -> Result<PrimitiveLoss> {
    if gt.len() > pred.queries {
        return Err(Error::Capacity {
            count: gt.len(),
            capacity: pred.queries,
        });
    }
    let assignment = hungarian(&primitive_cost_matrix(gt, pred, w)?)?;
    primitive_loss_with(gt, pred, w, &assignment)
}

/// [`primitive_loss`] under a fixed assignment.
pub fn primitive_loss_with(
    gt: &[Primitive],
    pred: &PrimitivePredictionSet,
    w: &PrimitiveWeights,
    assignment: &[usize],
) -> Result<PrimitiveLoss> {
    pred.validate()?;
    let n = pred.queries;
    let tc = PrimitiveType::COUNT;
    let mut grad = PrimitiveGrad {
        types: vec![0.0; n * tc],
        flags: vec![0.0; n * 2],
        params: vec![
            0.0;
            match pred.params {
                ParamPrediction::Bins(_) => n * PARAM_SLOTS * BINS,
                ParamPrediction::Values(_) => n * PARAM_SLOTS,
            }
        ],
    };
    let mut terms = PrimitiveLossTerms::default();
    let mut matched = vec![false; n];
    for (p, &j) in gt.iter().zip(assignment) {
        matched[j] = true;
        terms.types += -pred.types(j)[p.ptype.index()];
        ce_grad(&mut grad.types[j * tc..(j + 1) * tc], pred.types(j), p.ptype.index(), w.type_weight);
        terms.flags += -pred.flags(j)[p.flag as usize];
        ce_grad(&mut grad.flags[j * 2..j * 2 + 2], pred.flags(j), p.flag as usize, w.flag_weight);
        terms.params += param_cost(p, pred, j);
        let slots = p.ptype.live_slots();
        let scale = w.param_weight / slots.len().max(1) as f64;
        for &s in slots {
            match &pred.params {
                ParamPrediction::Bins(_) => {
                    let at = (j * PARAM_SLOTS + s) * BINS;
                    ce_grad(&mut grad.params[at..at + BINS], pred.bins(j, s), p.params[s] as usize, scale);
                }
                ParamPrediction::Values(v) => {
                    let at = j * PARAM_SLOTS + s;
                    grad.params[at] += scale * 2.0 * (v[at] - target_value(p, s));
                }
            }
        }
    }
    let none = PrimitiveType::None.index();
    for j in (0..n).filter(|&j| !matched[j]) {
        terms.no_object += w.no_object_weight * -pred.types(j)[none];
        ce_grad(&mut grad.types[j * tc..(j + 1) * tc], pred.types(j), none, w.no_object_weight);
    }
    terms.total =
        w.type_weight * terms.types + w.flag_weight * terms.flags + w.param_weight * terms.params + terms.no_object;
    Ok(PrimitiveLoss {
        terms,
        assignment: assignment.to_vec(),
        grad,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintLossTerms {
    pub total: f64,
    pub types: f64,
    pub refs: f64,
    pub no_object: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGrad {
    pub types: Vec<f64>,
    /// `queries × 2 × prims`
    pub refs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLoss {
    pub terms: ConstraintLossTerms,
    pub assignment: Vec<usize>,
    pub grad: ConstraintGrad,
}

pub fn constraint_loss(gt: &[Constraint], pred: &ConstraintPredictionSet, w: &ConstraintWeights) -> Result<ConstraintLoss> {
    if gt.len() > pred.queries {
        return Err(Error::Capacity {
            count: gt.len(),
            capacity: pred.queries,
        });
    }
    let assignment = hungarian(&constraint_cost_matrix(gt, pred, w)?)?;
    constraint_loss_with(gt, pred, w, &assignment)
}

/// [`constraint_loss`] under a fixed assignment.
pub fn constraint_loss_with(
    gt: &[Constraint],
    pred: &ConstraintPredictionSet,
    w: &ConstraintWeights,
    assignment: &[usize],
) -> Result<ConstraintLoss> {
    pred.validate()?;
    let (n, k) = (pred.queries, pred.prims);
    let tc = ConstraintType::COUNT;
    let mut grad = ConstraintGrad {
        types: vec![0.0; n * tc],
        refs: vec![0.0; n * 2 * k],
    };
    let mut terms = ConstraintLossTerms::default();
    let mut matched = vec![false; n];
    for (c, &j) in gt.iter().zip(assignment) {
        matched[j] = true;
        terms.types += -pred.types(j)[c.ctype.index()];
        ce_grad(&mut grad.types[j * tc..(j + 1) * tc], pred.types(j), c.ctype.index(), w.type_weight);
        let (cost, swapped) = ref_cost(c, pred, j);
        terms.refs += cost;
        let scale = w.param_weight / c.refs.len() as f64;
        for slot in 0..c.refs.len() {
            let r = if swapped { c.refs[1 - slot] } else { c.refs[slot] };
            let at = (j * 2 + slot) * k;
            ce_grad(&mut grad.refs[at..at + k], pred.refs(j, slot), r, scale);
        }
    }
    let none = ConstraintType::None.index();
    for j in (0..n).filter(|&j| !matched[j]) {
        terms.no_object += w.no_object_weight * -pred.types(j)[none];
        ce_grad(&mut grad.types[j * tc..(j + 1) * tc], pred.types(j), none, w.no_object_weight);
    }
    terms.total = w.type_weight * terms.types + w.param_weight * terms.refs + terms.no_object;
    Ok(ConstraintLoss {
        terms,
        assignment: assignment.to_vec(),
        grad,
    })
}
