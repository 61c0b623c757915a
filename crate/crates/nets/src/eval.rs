//! Corpus-level evaluation of either network.

use serde::{Deserialize, Serialize};
use sketch2cad_core::dataset::RasterImage;
use sketch2cad_core::matching::{hungarian, primitive_cost_matrix};
use sketch2cad_core::metrics::{
    chamfer_distance, constraint_metrics, primitive_counts_at, ConstraintAccuracy, ConstraintCounts, PrimitiveAccuracy,
    PrimitiveCounts, CD_SAMPLES, ETA,
};
use sketch2cad_core::prediction::PrimitivePredictionSet;
use sketch2cad_core::snap::apply_constraints;
use sketch2cad_core::{Constraint, Primitive, Sketch};

use crate::constraint::ConstraintNet;
use crate::error::{Error, Result};
use crate::primitive::PrimitiveNet;

pub const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveScore {
    pub counts: PrimitiveCounts,
    pub accuracy: Option<PrimitiveAccuracy>,
}

impl PrimitiveScore {
    fn new(counts: PrimitiveCounts) -> Self {
        Self {
            accuracy: counts.accuracy().ok(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveReport {
    pub sketches: usize,
    #[serde(flatten)]
    pub score: PrimitiveScore,
    /// Mean Chamfer distance (unit square) over sketches with a non-empty decode.
    pub chamfer: Option<f64>,
    /// Sketches that decoded to nothing and so have no Chamfer distance.
    pub empty_decodes: usize,
    /// Scores after snapping decoded primitives to the ground-truth constraints.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub corrected: Option<PrimitiveScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub sketches: usize,
    pub counts: ConstraintCounts,
    pub accuracy: Option<ConstraintAccuracy>,
}

/// Ground-truth constraints re-indexed onto the decoded primitive list.
///
/// `position[j]` is the list index of query `j`'s primitive; constraints that
/// touch an unmatched or `None`-decoded primitive are dropped.
fn transfer_constraints(gt: &[Constraint], sigma: &[usize], position: &[Option<usize>]) -> Vec<Constraint> {
    gt.iter()
        .filter_map(|c| {
            let refs = c.refs.iter().map(|&i| position[sigma[i]]).collect::<Option<Vec<_>>>()?;
            Some(Constraint::new(c.ctype, refs))
        })
        .collect()
}

/// Scores a single prediction set; returns (counts, corrected counts, decoded list).
pub fn score_primitives(
    gt: &Sketch,
    pred: &PrimitivePredictionSet,
    net_weights: &sketch2cad_core::matching::PrimitiveWeights,
    apply: bool,
) -> Result<(PrimitiveCounts, Option<PrimitiveCounts>, Vec<Primitive>)> {
    let sigma = hungarian(&primitive_cost_matrix(&gt.primitives, pred, net_weights)?)?;
    let all = pred.decode_all();
    let counts = primitive_counts_at(&gt.primitives, &sigma, &all, ETA);
    let mut position = vec![None; all.len()];
    let mut decoded = Vec::new();
    for (j, p) in all.iter().enumerate() {
        if let Some(p) = p {
            position[j] = Some(decoded.len());
            decoded.push(*p);
        }
    }
    let corrected = apply.then(|| {
        let cons = transfer_constraints(&gt.constraints, &sigma, &position);
        let snapped = apply_constraints(&decoded, &cons);
        let rebuilt: Vec<Option<Primitive>> = position.iter().map(|pos| pos.map(|i| snapped[i])).collect();
        primitive_counts_at(&gt.primitives, &sigma, &rebuilt, ETA)
    });
    Ok((counts, corrected, decoded))
}

pub fn eval_primitive(net: &PrimitiveNet, sketches: &[Sketch], images: &[RasterImage], apply: bool) -> Result<PrimitiveReport> {
    if sketches.len() != images.len() {
        return Err(Error::Config("one image per sketch required".into()));
    }
    let w = net.config().weights;
    let mut counts = PrimitiveCounts::default();
    let mut corrected = PrimitiveCounts::default();
    let (mut cd_sum, mut cd_n, mut empty) = (0.0, 0usize, 0usize);
    for (chunk, imgs) in sketches.chunks(EVAL_BATCH).zip(images.chunks(EVAL_BATCH)) {
        let refs: Vec<&RasterImage> = imgs.iter().collect();
        for (gt, pred) in chunk.iter().zip(net.predict(&refs)?) {
            let (c, corr, decoded) = score_primitives(gt, &pred, &w, apply)?;
            counts.add(&c);
            if let Some(corr) = corr {
                corrected.add(&corr);
            }
            if decoded.is_empty() {
                empty += 1;
            } else {
                cd_sum += chamfer_distance(&decoded, &gt.primitives, CD_SAMPLES)?;
                cd_n += 1;
            }
        }
    }
    Ok(PrimitiveReport {
        sketches: sketches.len(),
        score: PrimitiveScore::new(counts),
        chamfer: (cd_n > 0).then(|| cd_sum / cd_n as f64),
        empty_decodes: empty,
        corrected: apply.then(|| PrimitiveScore::new(corrected)),
    })
}

/// Sketches without constraints contribute nothing to the pooled counts.
pub fn eval_constraint(net: &ConstraintNet, sketches: &[Sketch], inputs: &[Vec<Primitive>]) -> Result<ConstraintReport> {
    if sketches.len() != inputs.len() {
        return Err(Error::Config("one input per sketch required".into()));
    }
    let w = net.config().weights;
    let mut counts = ConstraintCounts::default();
    for (chunk, ins) in sketches.chunks(EVAL_BATCH).zip(inputs.chunks(EVAL_BATCH)) {
        let refs: Vec<&[Primitive]> = ins.iter().map(Vec::as_slice).collect();
        for (gt, pred) in chunk.iter().zip(net.predict(&refs)?) {
            if !gt.constraints.is_empty() {
                counts.add(&constraint_metrics(&gt.constraints, &pred, &w)?);
            }
        }
    }
    Ok(ConstraintReport {
        sketches: sketches.len(),
        accuracy: counts.accuracy().ok(),
        counts,
    })
}
