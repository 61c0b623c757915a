//! Exact symmetries of the quantization grid, for training-time augmentation.
//!
//! The eight rotations/reflections of the square map bin `q` to `q` or
//! `63 − q` per axis (optionally swapping axes), so transformed sketches stay
//! on the grid with no rounding.

use crate::quant::MAX_LEVEL;
use crate::sketch::{ConstraintType, Primitive, PrimitiveType, Sketch, RADIUS_SLOT};

/// One of the eight symmetries of the square, indexed `0..8`; `0` is identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    /// `k` taken modulo 8.
    pub fn from_index(k: u64) -> Self {
        Dihedral((k % 8) as u8)
    }

    // bit 0: mirror x, bit 1: mirror y, bit 2: swap axes (applied last).
    fn mirror_x(self) -> bool {
        self.0 & 1 != 0
    }
    fn mirror_y(self) -> bool {
        self.0 & 2 != 0
    }
    pub fn swaps_axes(self) -> bool {
        self.0 & 4 != 0
    }

    pub fn inverse(self) -> Self {
        if self.swaps_axes() {
            // (swap ∘ mirror(a, b))⁻¹ = swap ∘ mirror(b, a)
            Dihedral(4 | ((self.0 & 1) << 1) | ((self.0 & 2) >> 1))
        } else {
            self
        }
    }

    pub fn apply_point(self, x: u8, y: u8) -> (u8, u8) {
        let x = if self.mirror_x() { MAX_LEVEL - x } else { x };
        let y = if self.mirror_y() { MAX_LEVEL - y } else { y };
        if self.swaps_axes() {
            (y, x)
        } else {
            (x, y)
        }
    }

    pub fn apply_primitive(self, p: &Primitive) -> Primitive {
        let mut out = *p;
        for pair in [0, 2, 4] {
            if p.ptype.is_live(pair) {
                let (x, y) = self.apply_point(p.params[pair], p.params[pair + 1]);
                out.params[pair] = x;
                out.params[pair + 1] = y;
            }
        }
        debug_assert!(p.ptype != PrimitiveType::Circle || out.params[RADIUS_SLOT] == p.params[RADIUS_SLOT]);
        out
    }

    /// Transforms geometry; axis-swapping symmetries exchange horizontal and
    /// vertical constraints. Everything else is invariant.
    pub fn apply_sketch(self, s: &Sketch) -> Sketch {
        let primitives = s.primitives.iter().map(|p| self.apply_primitive(p)).collect();
        let constraints = s
            .constraints
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if self.swaps_axes() {
                    c.ctype = match c.ctype {
                        ConstraintType::Horizontal => ConstraintType::Vertical,
                        ConstraintType::Vertical => ConstraintType::Horizontal,
                        t => t,
                    };
                }
                c
            })
            .collect();
        Sketch { primitives, constraints }
    }
}
