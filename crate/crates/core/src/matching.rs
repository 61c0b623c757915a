//! Bipartite matching between ground-truth and predicted sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::{ConstraintPredictionSet, ParamPrediction, PrimitivePredictionSet};
use crate::quant::center;
use crate::sketch::{Constraint, ConstraintType, Primitive, PARAM_SLOTS, RADIUS_SLOT};

const BRUTE_FORCE_MAX: usize = 8;

/// Weights of the primitive set loss and matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimitiveWeights {
    pub type_weight: f64,
    pub flag_weight: f64,
    pub param_weight: f64,
    pub no_object_weight: f64,
}

impl Default for PrimitiveWeights {
    fn default() -> Self {
        Self {
            type_weight: 1.0,
            flag_weight: 1.0,
            param_weight: 5.0,
            no_object_weight: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintWeights {
    pub type_weight: f64,
    pub param_weight: f64,
    pub no_object_weight: f64,
}

impl Default for ConstraintWeights {
    fn default() -> Self {
        Self {
            type_weight: 1.0,
            param_weight: 1.0,
            no_object_weight: 0.1,
        }
    }
}

/// Row-major `rows × cols` costs, one row per ground-truth element.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if rows > cols {
            return Err(Error::Capacity {
                count: rows,
                capacity: cols,
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite cost {v}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Total cost of `sigma` (row `i` assigned to column `sigma[i]`).
    pub fn cost(&self, sigma: &[usize]) -> f64 {
        sigma.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// Shortest augmenting paths with row/column potentials, O(rows² · cols).
pub fn hungarian(c: &CostMatrix) -> Result<Vec<usize>> {
    let (n, m) = (c.rows, c.cols);
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based with column 0 as the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            sigma[owner[j] - 1] = j - 1;
        }
    }
    Ok(sigma)
}

/// Exhaustive search; ties go to the lexicographically smallest assignment.
pub fn brute_force_assignment(c: &CostMatrix) -> Result<Vec<usize>> {
    if c.rows > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge(c.rows));
    }
    let mut best: (f64, Vec<usize>) = (f64::INFINITY, Vec::new());
    let mut current = Vec::with_capacity(c.rows);
    let mut used = vec![false; c.cols];
    search(c, 0.0, &mut current, &mut used, &mut best);
    Ok(best.1)
}

fn search(c: &CostMatrix, acc: f64, current: &mut Vec<usize>, used: &mut [bool], best: &mut (f64, Vec<usize>)) {
    let i = current.len();
    if i == c.rows {
        // Depth-first in lexicographic order, so only strict improvements replace.
        if acc < best.0 {
            *best = (acc, current.clone());
        }
        return;
    }
    for j in 0..c.cols {
        if used[j] {
            continue;
        }
        used[j] = true;
        current.push(j);
        search(c, acc + c.get(i, j), current, used, best);
        current.pop();
        used[j] = false;
    }
}

/// Ground-truth parameter value in the unit square (radius as a length).
pub(crate) fn target_value(p: &Primitive, slot: usize) -> f64 {
    if slot == RADIUS_SLOT {
        p.params[slot] as f64 / 64.0
    } else {
        center(p.params[slot])
    }
}

/// Per-slot parameter cost of query `j` for `gt`: CE on bins, or squared error
/// in regression mode. Mean over the live slots of the ground-truth type.
pub(crate) fn param_cost(gt: &Primitive, pred: &PrimitivePredictionSet, j: usize) -> f64 {
    let slots = gt.ptype.live_slots();
    if slots.is_empty() {
        return 0.0;
    }
    let total: f64 = slots
        .iter()
        .map(|&s| match &pred.params {
            ParamPrediction::Bins(_) => -pred.bins(j, s)[gt.params[s] as usize],
            ParamPrediction::Values(v) => (v[j * PARAM_SLOTS + s] - target_value(gt, s)).powi(2),
        })
        .sum();
    total / slots.len() as f64
}

pub fn primitive_cost_matrix(gt: &[Primitive], pred: &PrimitivePredictionSet, w: &PrimitiveWeights) -> Result<CostMatrix> {
    pred.validate()?;
    let mut data = Vec::with_capacity(gt.len() * pred.queries);
    for p in gt {
        for j in 0..pred.queries {
            data.push(
                w.type_weight * -pred.types(j)[p.ptype.index()]
                    + w.flag_weight * -pred.flags(j)[p.flag as usize]
                    + w.param_weight * param_cost(p, pred, j),
            );
        }
    }
    CostMatrix::new(gt.len(), pred.queries, data)
}

/// Mean reference CE of query `j` for `c`, and whether the swapped ordering
/// was the cheaper one (symmetric two-reference types only).
pub(crate) fn ref_cost(c: &Constraint, pred: &ConstraintPredictionSet, j: usize) -> (f64, bool) {
    let ce = |slot: usize, r: usize| -pred.refs(j, slot)[r];
    match c.refs.as_slice() {
        [a] => (ce(0, *a), false),
        [a, b] => {
            let straight = (ce(0, *a) + ce(1, *b)) / 2.0;
            if c.ctype.is_symmetric() {
                let swapped = (ce(0, *b) + ce(1, *a)) / 2.0;
                if swapped < straight {
                    return (swapped, true);
                }
            }
            (straight, false)
        }
        _ => (0.0, false),
    }
}

fn check_constraint(c: &Constraint, prims: usize) -> Result<()> {
    if c.ctype == ConstraintType::None || c.refs.len() != c.ctype.arity() {
        return Err(Error::InvalidInput(format!(
            "{} constraint with {} refs",
            c.ctype.name(),
            c.refs.len()
        )));
    }
    if let Some(r) = c.refs.iter().find(|&&r| r >= prims) {
        return Err(Error::InvalidInput(format!("ref {r} outside {prims} primitives")));
    }
    Ok(())
}

pub fn constraint_cost_matrix(
    gt: &[Constraint],
    pred: &ConstraintPredictionSet,
    w: &ConstraintWeights,
) -> Result<CostMatrix> {
    pred.validate()?;
    let mut data = Vec::with_capacity(gt.len() * pred.queries);
    for c in gt {
        check_constraint(c, pred.prims)?;
        for j in 0..pred.queries {
            data.push(w.type_weight * -pred.types(j)[c.ctype.index()] + w.param_weight * ref_cost(c, pred, j).0);
        }
    }
    CostMatrix::new(gt.len(), pred.queries, data)
}
