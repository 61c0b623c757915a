//! Set-level accuracies, Chamfer distance and quantization error.
//!
//! Accuracies are accumulated as counts so that a corpus-level figure is the
//! pooled fraction over all ground-truth elements.

use serde::{Deserialize, Serialize};

use crate::dataset::FloatSketch;
use crate::error::{Error, Result};
use crate::geometry::{Shape, Vec2};
use crate::matching::{constraint_cost_matrix, hungarian, primitive_cost_matrix, ConstraintWeights, PrimitiveWeights};
use crate::prediction::{ConstraintPredictionSet, PrimitivePredictionSet};
use crate::sketch::{Constraint, Primitive};

/// Default parameter tolerance, in quantization steps.
pub const ETA: u8 = 1;
/// Samples per primitive for Chamfer distance.
pub const CD_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveCounts {
    pub total: usize,
    pub type_ok: usize,
    pub flag_ok: usize,
    pub par_ok: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveAccuracy {
    pub acc_type: f64,
    pub acc_flag: f64,
    pub acc_par: f64,
}

impl PrimitiveCounts {
    pub fn add(&mut self, o: &Self) {
        self.total += o.total;
        self.type_ok += o.type_ok;
        self.flag_ok += o.flag_ok;
        self.par_ok += o.par_ok;
    }

    pub fn accuracy(&self) -> Result<PrimitiveAccuracy> {
        if self.total == 0 {
            return Err(Error::UndefinedMetric("no ground-truth primitives"));
        }
        let n = self.total as f64;
        Ok(PrimitiveAccuracy {
            acc_type: self.type_ok as f64 / n,
            acc_flag: self.flag_ok as f64 / n,
            acc_par: self.par_ok as f64 / n,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCounts {
    pub total: usize,
    pub type_ok: usize,
    pub par_ok: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintAccuracy {
    pub acc_type: f64,
    pub acc_par: f64,
}

impl ConstraintCounts {
    pub fn add(&mut self, o: &Self) {
        self.total += o.total;
        self.type_ok += o.type_ok;
        self.par_ok += o.par_ok;
    }

    pub fn accuracy(&self) -> Result<ConstraintAccuracy> {
        if self.total == 0 {
            return Err(Error::UndefinedMetric("no ground-truth constraints"));
        }
        let n = self.total as f64;
        Ok(ConstraintAccuracy {
            acc_type: self.type_ok as f64 / n,
            acc_par: self.par_ok as f64 / n,
        })
    }
}

/// Matches with the training cost, then scores each ground-truth primitive.
pub fn primitive_metrics(
    gt: &[Primitive],
    pred: &PrimitivePredictionSet,
    w: &PrimitiveWeights,
    eta: u8,
) -> Result<PrimitiveCounts> {
    if gt.is_empty() {
        return Err(Error::UndefinedMetric("no ground-truth primitives"));
    }
    let sigma = hungarian(&primitive_cost_matrix(gt, pred, w)?)?;
    Ok(primitive_counts_at(gt, &sigma, &pred.decode_all(), eta))
}

/// Scores `decoded[sigma[i]]` against `gt[i]`; a `None` query counts as wrong.
///
/// Parameters are correct only if every live slot of the ground-truth type is
/// within `eta` steps.
pub fn primitive_counts_at(gt: &[Primitive], sigma: &[usize], decoded: &[Option<Primitive>], eta: u8) -> PrimitiveCounts {
    let mut c = PrimitiveCounts {
        total: gt.len(),
        ..PrimitiveCounts::default()
    };
    for (g, &j) in gt.iter().zip(sigma) {
        let Some(p) = decoded.get(j).copied().flatten() else {
            continue;
        };
        c.type_ok += (p.ptype == g.ptype) as usize;
        c.flag_ok += (p.flag == g.flag) as usize;
        let close = g
            .ptype
            .live_slots()
            .iter()
            .all(|&s| g.params[s].abs_diff(p.params[s]) <= eta);
        c.par_ok += close as usize;
    }
    c
}

pub fn constraint_metrics(
    gt: &[Constraint],
    pred: &ConstraintPredictionSet,
    w: &ConstraintWeights,
) -> Result<ConstraintCounts> {
    if gt.is_empty() {
        return Err(Error::UndefinedMetric("no ground-truth constraints"));
    }
    let sigma = hungarian(&constraint_cost_matrix(gt, pred, w)?)?;
    let mut c = ConstraintCounts {
        total: gt.len(),
        ..ConstraintCounts::default()
    };
    for (g, &j) in gt.iter().zip(&sigma) {
        c.type_ok += (pred.decode_type(j) == g.ctype) as usize;
        let refs: Vec<usize> = (0..g.refs.len()).map(|s| pred.decode_ref(j, s)).collect();
        c.par_ok += (Constraint::new(g.ctype, refs) == g.clone().canonical()) as usize;
    }
    Ok(c)
}

fn cloud(shapes: &[Shape], n: usize) -> Result<Vec<Vec2>> {
    let mut pts = Vec::with_capacity(shapes.len() * n);
    for s in shapes {
        match (s.sample(n), s) {
            (Ok(p), _) => pts.extend(p),
            // A collinear arc is the limit of a flattening arc: its polyline.
            (Err(Error::Degenerate(_)), Shape::Arc(a, m, b)) => {
                pts.extend(Shape::Segment(*a, *m).sample(n / 2)?);
                pts.extend(Shape::Segment(*m, *b).sample(n - n / 2)?);
            }
            (Err(e), _) => return Err(e),
        }
    }
    Ok(pts)
}

fn mean_nearest(from: &[Vec2], to: &[Vec2]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
        .sum();
    total / from.len() as f64
}

/// Symmetric mean nearest-neighbour distance between two point clouds.
pub fn chamfer_points(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("Chamfer distance of an empty sketch".into()));
    }
    Ok(0.5 * (mean_nearest(a, b) + mean_nearest(b, a)))
}

pub fn chamfer_shapes(a: &[Shape], b: &[Shape], n: usize) -> Result<f64> {
    chamfer_points(&cloud(a, n)?, &cloud(b, n)?)
}

/// Chamfer distance in the unit square between two primitive sets.
pub fn chamfer_distance(a: &[Primitive], b: &[Primitive], n: usize) -> Result<f64> {
    let shapes = |p: &[Primitive]| p.iter().map(Primitive::shape).collect::<Vec<_>>();
    chamfer_shapes(&shapes(a), &shapes(b), n)
}

/// Mean Chamfer distance between float sketches and their 6-bit quantization.
pub fn quantization_error(sketches: &[FloatSketch]) -> Result<f64> {
    if sketches.is_empty() {
        return Err(Error::UndefinedMetric("no sketches"));
    }
    let mut total = 0.0;
    for s in sketches {
        let exact: Vec<Shape> = s.primitives.iter().map(|p| p.shape()).collect();
        total += chamfer_shapes(&exact, &s.quantize().primitives.iter().map(Primitive::shape).collect::<Vec<_>>(), CD_SAMPLES)?;
    }
    Ok(total / sketches.len() as f64)
}
