//! Continuous geometry behind primitives: point sampling and circumcircles.

use std::f64::consts::TAU;

use nalgebra::Vector2;

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// A primitive's geometry in some continuous frame (unit square or grid steps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Segment(Vec2, Vec2),
    Circle { center: Vec2, radius: f64 },
    /// Start, an on-curve point between the two ends, and end.
    Arc(Vec2, Vec2, Vec2),
    Point(Vec2),
}

/// Circle through an arc's three points plus the signed sweep from start to end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcGeometry {
    pub center: Vec2,
    pub radius: f64,
    pub start_angle: f64,
    /// Positive is counter-clockwise in the frame's axes.
    pub sweep: f64,
}

impl ArcGeometry {
    pub fn from_points(start: Vec2, mid: Vec2, end: Vec2) -> Result<Self> {
        let (center, radius) = circumcircle(start, mid, end)
            .ok_or_else(|| Error::Degenerate("arc points are collinear".into()))?;
        let angle = |p: Vec2| (p.y - center.y).atan2(p.x - center.x);
        let start_angle = angle(start);
        let ccw_end = (angle(end) - start_angle).rem_euclid(TAU);
        let ccw_mid = (angle(mid) - start_angle).rem_euclid(TAU);
        let sweep = if ccw_mid < ccw_end {
            ccw_end
        } else {
            ccw_end - TAU
        };
        Ok(Self {
            center,
            radius,
            start_angle,
            sweep,
        })
    }

    pub fn point_at(&self, t: f64) -> Vec2 {
        let a = self.start_angle + self.sweep * t;
        self.center + Vec2::new(a.cos(), a.sin()) * self.radius
    }
}

/// Center and radius of the circle through three points; `None` when collinear.
pub fn circumcircle(a: Vec2, b: Vec2, c: Vec2) -> Option<(Vec2, f64)> {
    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    let scale = (b - a).norm().max((c - a).norm()).max(1e-300);
    if d.abs() <= 1e-12 * scale * scale {
        return None;
    }
    let (a2, b2, c2) = (a.norm_squared(), b.norm_squared(), c.norm_squared());
    let ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
    let uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
    let center = Vec2::new(ux, uy);
    Some((center, (a - center).norm()))
}

/// Distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (a + ab * t - p).norm()
}

/// Distance from `p` to the infinite line through `a` and `b`.
pub fn point_line_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len = ab.norm();
    if len == 0.0 {
        return (p - a).norm();
    }
    (ab.x * (p.y - a.y) - ab.y * (p.x - a.x)).abs() / len
}

impl Shape {
    /// `n` points along the shape. Segments and arcs include both ends; circles
    /// use `n` equal angles starting at angle zero.
    pub fn sample(&self, n: usize) -> Result<Vec<Vec2>> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 samples, got {n}")));
        }
        let last = (n - 1) as f64;
        Ok(match *self {
            Shape::Segment(a, b) => (0..n)
                .map(|i| {
                    if i == n - 1 {
                        b
                    } else {
                        a + (b - a) * (i as f64 / last)
                    }
                })
                .collect(),
            Shape::Circle { center, radius } => (0..n)
                .map(|i| {
                    let a = TAU * i as f64 / n as f64;
                    center + Vec2::new(a.cos(), a.sin()) * radius
                })
                .collect(),
            Shape::Arc(s, m, e) => {
                let arc = ArcGeometry::from_points(s, m, e)?;
                let mut pts: Vec<Vec2> = (0..n).map(|i| arc.point_at(i as f64 / last)).collect();
                pts[0] = s;
                pts[n - 1] = e;
                pts
            }
            Shape::Point(p) => vec![p; n],
        })
    }

    /// Endpoints and centers that coincidence relations attach to.
    pub fn key_points(&self) -> Vec<Vec2> {
        match *self {
            Shape::Segment(a, b) => vec![a, b],
            Shape::Circle { center, .. } => vec![center],
            Shape::Arc(s, m, e) => {
                let mut v = vec![s, e];
                if let Some((c, _)) = circumcircle(s, m, e) {
                    v.push(c);
                }
                v
            }
            Shape::Point(p) => vec![p],
        }
    }

    /// Center and radius for round shapes.
    pub fn circle(&self) -> Option<(Vec2, f64)> {
        match *self {
            Shape::Circle { center, radius } => Some((center, radius)),
            Shape::Arc(s, m, e) => circumcircle(s, m, e),
            _ => None,
        }
    }
}
