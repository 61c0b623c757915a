//! Sketch domain model: primitives, constraints and their validation.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{point_line_distance, Shape, Vec2};
use crate::quant::{center, MAX_LEVEL};

/// Geometric-consistency tolerance, in grid steps.
pub const GEO_TOLERANCE: f64 = 2.0;

/// Number of parameter slots carried by every primitive.
pub const PARAM_SLOTS: usize = 7;

/// Slot holding a circle's radius.
pub const RADIUS_SLOT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveType {
    Line,
    Circle,
    Arc,
    Point,
    /// Padding class for surplus prediction queries. Never part of a valid sketch.
    None,
}

impl PrimitiveType {
    pub const COUNT: usize = 5;
    pub const ALL: [PrimitiveType; 5] = [
        PrimitiveType::Line,
        PrimitiveType::Circle,
        PrimitiveType::Arc,
        PrimitiveType::Point,
        PrimitiveType::None,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Parameter slots that carry data for this type; all others are padding.
    pub fn live_slots(self) -> &'static [usize] {
        match self {
            PrimitiveType::Line => &[0, 1, 2, 3],
            PrimitiveType::Circle => &[0, 1, 6],
            PrimitiveType::Arc => &[0, 1, 2, 3, 4, 5],
            PrimitiveType::Point => &[0, 1],
            PrimitiveType::None => &[],
        }
    }

    pub fn is_live(self, slot: usize) -> bool {
        self.live_slots().contains(&slot)
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveType::Line => "line",
            PrimitiveType::Circle => "circle",
            PrimitiveType::Arc => "arc",
            PrimitiveType::Point => "point",
            PrimitiveType::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(rename = "type")]
    pub ptype: PrimitiveType,
    pub flag: bool,
    pub params: [u8; PARAM_SLOTS],
}

impl Primitive {
    pub fn line(flag: bool, x1: u8, y1: u8, x2: u8, y2: u8) -> Self {
        Self {
            ptype: PrimitiveType::Line,
            flag,
            params: [x1, y1, x2, y2, 0, 0, 0],
        }
    }

    pub fn circle(flag: bool, cx: u8, cy: u8, r: u8) -> Self {
        Self {
            ptype: PrimitiveType::Circle,
            flag,
            params: [cx, cy, 0, 0, 0, 0, r],
        }
    }

    pub fn arc(flag: bool, start: (u8, u8), mid: (u8, u8), end: (u8, u8)) -> Self {
        Self {
            ptype: PrimitiveType::Arc,
            flag,
            params: [start.0, start.1, mid.0, mid.1, end.0, end.1, 0],
        }
    }

    pub fn point(flag: bool, x: u8, y: u8) -> Self {
        Self {
            ptype: PrimitiveType::Point,
            flag,
            params: [x, y, 0, 0, 0, 0, 0],
        }
    }

    /// Geometry in the unit square (dequantized bin centers; radius in steps / 64).
    pub fn shape(&self) -> Shape {
        let p = |i: usize| Vec2::new(center(self.params[i]), center(self.params[i + 1]));
        self.shape_with(p, self.params[RADIUS_SLOT] as f64 / 64.0)
    }

    /// Geometry in grid-step units, where relations are checked.
    pub fn grid_shape(&self) -> Shape {
        let p = |i: usize| Vec2::new(self.params[i] as f64, self.params[i + 1] as f64);
        self.shape_with(p, self.params[RADIUS_SLOT] as f64)
    }

    fn shape_with(&self, p: impl Fn(usize) -> Vec2, radius: f64) -> Shape {
        match self.ptype {
            PrimitiveType::Line => Shape::Segment(p(0), p(2)),
            PrimitiveType::Circle => Shape::Circle {
                center: p(0),
                radius,
            },
            PrimitiveType::Arc => Shape::Arc(p(0), p(2), p(4)),
            PrimitiveType::Point | PrimitiveType::None => Shape::Point(p(0)),
        }
    }

    /// `n` points on the primitive in the unit square.
    pub fn sample_points(&self, n: usize) -> crate::Result<Vec<Vec2>> {
        self.shape().sample(n)
    }

    /// Zeroes padding slots for the primitive's type.
    pub fn with_padding_cleared(mut self) -> Self {
        for slot in 0..PARAM_SLOTS {
            if !self.ptype.is_live(slot) {
                self.params[slot] = 0;
            }
        }
        self
    }

    /// Passes every single-primitive structural check (on-grid, zero padding,
    /// non-degenerate length or radius).
    pub fn is_well_formed(&self) -> bool {
        let mut v = Vec::new();
        primitive_violations(0, self, &mut v);
        v.is_empty()
    }

    pub fn is_round(&self) -> bool {
        matches!(self.ptype, PrimitiveType::Circle | PrimitiveType::Arc)
    }

    fn arc_is_collinear(&self) -> bool {
        let q = |i: usize| self.params[i] as i64;
        let (ax, ay, bx, by, cx, cy) = (q(0), q(1), q(2), q(3), q(4), q(5));
        (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintType {
    Coincident,
    Horizontal,
    Vertical,
    Parallel,
    Perpendicular,
    Tangent,
    Equal,
    Midpoint,
    /// Padding class for surplus prediction queries.
    None,
}

impl ConstraintType {
    pub const COUNT: usize = 9;
    pub const ALL: [ConstraintType; 9] = [
        ConstraintType::Coincident,
        ConstraintType::Horizontal,
        ConstraintType::Vertical,
        ConstraintType::Parallel,
        ConstraintType::Perpendicular,
        ConstraintType::Tangent,
        ConstraintType::Equal,
        ConstraintType::Midpoint,
        ConstraintType::None,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn arity(self) -> usize {
        match self {
            ConstraintType::Horizontal | ConstraintType::Vertical => 1,
            ConstraintType::None => 0,
            _ => 2,
        }
    }

    /// Whether the two references can be swapped without changing meaning.
    pub fn is_symmetric(self) -> bool {
        matches!(
            self,
            ConstraintType::Coincident
                | ConstraintType::Parallel
                | ConstraintType::Perpendicular
                | ConstraintType::Tangent
                | ConstraintType::Equal
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintType::Coincident => "coincident",
            ConstraintType::Horizontal => "horizontal",
            ConstraintType::Vertical => "vertical",
            ConstraintType::Parallel => "parallel",
            ConstraintType::Perpendicular => "perpendicular",
            ConstraintType::Tangent => "tangent",
            ConstraintType::Equal => "equal",
            ConstraintType::Midpoint => "midpoint",
            ConstraintType::None => "none",
        }
    }
}

/// A typed relation over primitive indices. `Midpoint` is ordered as
/// (point, line); symmetric types keep their references sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(rename = "type")]
    pub ctype: ConstraintType,
    pub refs: Vec<usize>,
}

impl Constraint {
    /// Builds a constraint in canonical form.
    pub fn new(ctype: ConstraintType, refs: Vec<usize>) -> Self {
        Self { ctype, refs }.canonical()
    }

    pub fn unary(ctype: ConstraintType, a: usize) -> Self {
        Self::new(ctype, vec![a])
    }

    pub fn binary(ctype: ConstraintType, a: usize, b: usize) -> Self {
        Self::new(ctype, vec![a, b])
    }

    pub fn canonical(mut self) -> Self {
        if self.ctype.is_symmetric() {
            self.refs.sort_unstable();
        }
        self
    }

    pub fn is_canonical(&self) -> bool {
        !self.ctype.is_symmetric() || self.refs.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sketch {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    PaddingType {
        primitive: usize,
    },
    OffGrid {
        primitive: usize,
        slot: usize,
        value: u8,
    },
    PaddingNonZero {
        primitive: usize,
        slot: usize,
    },
    ZeroRadius {
        primitive: usize,
    },
    ZeroLength {
        primitive: usize,
    },
    CollinearArc {
        primitive: usize,
    },
    PaddingConstraint {
        constraint: usize,
    },
    Arity {
        constraint: usize,
        expected: usize,
        found: usize,
    },
    RefOutOfRange {
        constraint: usize,
        index: usize,
    },
    RefsNotDistinct {
        constraint: usize,
    },
    NotCanonical {
        constraint: usize,
    },
    Duplicate {
        constraint: usize,
    },
    TypeMismatch {
        constraint: usize,
    },
    Inconsistent {
        constraint: usize,
        error: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            Empty => write!(f, "sketch has no primitives"),
            PaddingType { primitive } => write!(f, "primitive {primitive}: type none is padding only"),
            OffGrid {
                primitive,
                slot,
                value,
            } => write!(f, "primitive {primitive}: param {slot} = {value} is off the 64-level grid"),
            PaddingNonZero { primitive, slot } => {
                write!(f, "primitive {primitive}: padding slot {slot} is not zero")
            }
            ZeroRadius { primitive } => write!(f, "primitive {primitive}: circle radius is zero"),
            ZeroLength { primitive } => write!(f, "primitive {primitive}: line has zero length"),
            CollinearArc { primitive } => write!(f, "primitive {primitive}: arc points are collinear"),
            PaddingConstraint { constraint } => {
                write!(f, "constraint {constraint}: type none is padding only")
            }
            Arity {
                constraint,
                expected,
                found,
            } => write!(f, "constraint {constraint}: expected {expected} refs, found {found}"),
            RefOutOfRange { constraint, index } => {
                write!(f, "constraint {constraint}: ref out of range ({index})")
            }
            RefsNotDistinct { constraint } => write!(f, "constraint {constraint}: refs not distinct"),
            NotCanonical { constraint } => write!(f, "constraint {constraint}: refs not sorted"),
            Duplicate { constraint } => write!(f, "constraint {constraint}: duplicate constraint"),
            TypeMismatch { constraint } => {
                write!(f, "constraint {constraint}: primitive types do not admit this constraint")
            }
            Inconsistent { constraint, error } => {
                write!(f, "constraint {constraint}: geometry inconsistent ({error})")
            }
        }
    }
}

impl Sketch {
    pub fn new(primitives: Vec<Primitive>, constraints: Vec<Constraint>) -> Self {
        Self {
            primitives,
            constraints,
        }
    }

    /// Checks every structural invariant and the geometric consistency of each
    /// constraint at [`GEO_TOLERANCE`].
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        self.validate_with_tolerance(Some(GEO_TOLERANCE))
    }

    /// Like [`Sketch::validate`]; `None` skips the geometric checks entirely.
    pub fn validate_with_tolerance(&self, tolerance: Option<f64>) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        if self.primitives.is_empty() {
            out.push(Violation::Empty);
        }
        for (i, p) in self.primitives.iter().enumerate() {
            primitive_violations(i, p, &mut out);
        }
        let mut seen = HashSet::new();
        for (ci, c) in self.constraints.iter().enumerate() {
            let before = out.len();
            constraint_structure(ci, c, self.primitives.len(), &mut out);
            if out.len() > before {
                continue;
            }
            if !seen.insert(c.clone()) {
                out.push(Violation::Duplicate { constraint: ci });
                continue;
            }
            let prims: Vec<&Primitive> = c.refs.iter().map(|&r| &self.primitives[r]).collect();
            if !admits(c.ctype, &prims) {
                out.push(Violation::TypeMismatch { constraint: ci });
                continue;
            }
            if let Some(tol) = tolerance {
                let err = residual(c.ctype, &prims);
                if !(err <= tol) {
                    out.push(Violation::Inconsistent {
                        constraint: ci,
                        error: format!("{err:.2} steps"),
                    });
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

fn primitive_violations(i: usize, p: &Primitive, out: &mut Vec<Violation>) {
    if p.ptype == PrimitiveType::None {
        out.push(Violation::PaddingType { primitive: i });
        return;
    }
    for (slot, &value) in p.params.iter().enumerate() {
        if value > MAX_LEVEL {
            out.push(Violation::OffGrid {
                primitive: i,
                slot,
                value,
            });
        }
        if !p.ptype.is_live(slot) && value != 0 {
            out.push(Violation::PaddingNonZero { primitive: i, slot });
        }
    }
    match p.ptype {
        PrimitiveType::Circle if p.params[RADIUS_SLOT] == 0 => {
            out.push(Violation::ZeroRadius { primitive: i })
        }
        PrimitiveType::Line if p.params[0..2] == p.params[2..4] => {
            out.push(Violation::ZeroLength { primitive: i })
        }
        PrimitiveType::Arc if p.arc_is_collinear() => out.push(Violation::CollinearArc { primitive: i }),
        _ => {}
    }
}

fn constraint_structure(ci: usize, c: &Constraint, n: usize, out: &mut Vec<Violation>) {
    if c.ctype == ConstraintType::None {
        out.push(Violation::PaddingConstraint { constraint: ci });
        return;
    }
    if c.refs.len() != c.ctype.arity() {
        out.push(Violation::Arity {
            constraint: ci,
            expected: c.ctype.arity(),
            found: c.refs.len(),
        });
        return;
    }
    for &r in &c.refs {
        if r >= n {
            out.push(Violation::RefOutOfRange {
                constraint: ci,
                index: r,
            });
        }
    }
    if c.refs.len() == 2 && c.refs[0] == c.refs[1] {
        out.push(Violation::RefsNotDistinct { constraint: ci });
    } else if !c.is_canonical() {
        out.push(Violation::NotCanonical { constraint: ci });
    }
}

/// Whether a constraint type can relate primitives of these types.
pub fn admits(ctype: ConstraintType, prims: &[&Primitive]) -> bool {
    use PrimitiveType::*;
    let t: Vec<PrimitiveType> = prims.iter().map(|p| p.ptype).collect();
    let round = |t: PrimitiveType| matches!(t, Circle | Arc);
    match (ctype, t.as_slice()) {
        (ConstraintType::Horizontal | ConstraintType::Vertical, [Line]) => true,
        (ConstraintType::Parallel | ConstraintType::Perpendicular, [Line, Line]) => true,
        (ConstraintType::Coincident, [a, b]) => *a != None && *b != None,
        (ConstraintType::Tangent, [a, b]) => {
            (round(*a) && round(*b)) || (*a == Line && round(*b)) || (round(*a) && *b == Line)
        }
        (ConstraintType::Equal, [a, b]) => (*a == Line && *b == Line) || (round(*a) && round(*b)),
        (ConstraintType::Midpoint, [Point, Line]) => true,
        _ => false,
    }
}

/// How far, in grid steps, the primitives are from satisfying the relation.
/// Assumes [`admits`] holds.
pub fn residual(ctype: ConstraintType, prims: &[&Primitive]) -> f64 {
    let shapes: Vec<Shape> = prims.iter().map(|p| p.grid_shape()).collect();
    shape_residual(ctype, &shapes)
}

/// [`residual`] over shapes in any frame; the result is in that frame's units.
pub fn shape_residual(ctype: ConstraintType, shapes: &[Shape]) -> f64 {
    let seg = |s: &Shape| match *s {
        Shape::Segment(a, b) => Some((a, b)),
        _ => None,
    };
    let lines = || Some((seg(&shapes[0])?, seg(shapes.get(1)?)?));
    let value = match ctype {
        ConstraintType::Horizontal => seg(&shapes[0]).map(|(a, b)| (a.y - b.y).abs()),
        ConstraintType::Vertical => seg(&shapes[0]).map(|(a, b)| (a.x - b.x).abs()),
        ConstraintType::Parallel | ConstraintType::Perpendicular => lines().map(|((a0, a1), (b0, b1))| {
            let (u, v) = (a1 - a0, b1 - b0);
            let (lu, lv) = (u.norm(), v.norm());
            let c = if ctype == ConstraintType::Parallel {
                u.perp(&v)
            } else {
                u.dot(&v)
            };
            (c / (lu * lv)).abs() * lu.min(lv)
        }),
        ConstraintType::Coincident => {
            let (ka, kb) = (shapes[0].key_points(), shapes[1].key_points());
            Some(
                ka.iter()
                    .flat_map(|a| kb.iter().map(move |b| (a - b).norm()))
                    .fold(f64::INFINITY, f64::min),
            )
        }
        ConstraintType::Tangent => Some(tangent_residual(&shapes[0], &shapes[1])),
        ConstraintType::Equal => match (shapes[0].circle(), shapes[1].circle()) {
            (Some((_, r1)), Some((_, r2))) => Some((r1 - r2).abs()),
            _ => lines().map(|((a0, a1), (b0, b1))| ((a1 - a0).norm() - (b1 - b0).norm()).abs()),
        },
        ConstraintType::Midpoint => match (shapes[0], seg(&shapes[1])) {
            (Shape::Point(p), Some((a, b))) => Some((p - (a + b) / 2.0).norm()),
            _ => None,
        },
        ConstraintType::None => None,
    };
    value.unwrap_or(f64::INFINITY)
}

fn tangent_residual(a: &Shape, b: &Shape) -> f64 {
    match (a.circle(), b.circle()) {
        (Some((c1, r1)), Some((c2, r2))) => {
            let d = (c1 - c2).norm();
            (d - (r1 + r2)).abs().min((d - (r1 - r2).abs()).abs())
        }
        (Some((c, r)), None) | (None, Some((c, r))) => {
            let line = if a.circle().is_none() { a } else { b };
            match *line {
                Shape::Segment(p, q) => (point_line_distance(c, p, q) - r).abs(),
                _ => f64::INFINITY,
            }
        }
        _ => f64::INFINITY,
    }
}
