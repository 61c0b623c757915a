//! Adapter for sketches exported by other tools in the sketch JSON layout but
//! with arbitrary real coordinates.
//!
//! Accepted files hold a single sketch, a JSON array of sketches, or one sketch
//! per line. Coordinates are interpreted per sketch:
//! - all live values integral in `[0, 63]`: already on the grid, taken as is;
//! - all live values in `[0, 1]`: unit-square coordinates, quantized;
//! - anything else: scaled and centred to fit the unit square with a 5% margin.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::parse_error;
use crate::quant::{quantize, quantize_length, GRID, MAX_LEVEL};
use crate::sketch::{Constraint, ConstraintType, Primitive, PrimitiveType, Sketch, PARAM_SLOTS, RADIUS_SLOT};

const MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSketch {
    /// Position of the sketch in the file.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub sketches: Vec<Sketch>,
    pub skipped: Vec<SkippedSketch>,
}

#[derive(Deserialize)]
struct RawPrimitive {
    #[serde(rename = "type")]
    ptype: String,
    #[serde(default)]
    flag: Option<bool>,
    params: Vec<f64>,
}

#[derive(Deserialize)]
struct RawConstraint {
    #[serde(rename = "type")]
    ctype: String,
    refs: Vec<usize>,
}

#[derive(Deserialize)]
struct RawSketch {
    primitives: Vec<RawPrimitive>,
    #[serde(default)]
    constraints: Vec<RawConstraint>,
}

pub fn import_external(path: &Path) -> Result<ImportReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<Value> = match serde_json::from_str::<Value>(&text) {
        Ok(Value::Array(items)) => items,
        Ok(v) => vec![v],
        Err(_) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(parse_error))
            .collect::<Result<_>>()?,
    };
    let mut report = ImportReport::default();
    for (index, value) in values.into_iter().enumerate() {
        match convert(value) {
            Ok(s) => report.sketches.push(s),
            Err(reason) => report.skipped.push(SkippedSketch { index, reason }),
        }
    }
    Ok(report)
}

fn primitive_type(name: &str) -> Option<PrimitiveType> {
    PrimitiveType::ALL
        .into_iter()
        .find(|t| *t != PrimitiveType::None && t.name() == name)
}

fn convert(value: Value) -> std::result::Result<Sketch, String> {
    let raw: RawSketch = serde_json::from_value(value).map_err(|e| format!("malformed sketch: {e}"))?;
    let mut types = Vec::with_capacity(raw.primitives.len());
    for p in &raw.primitives {
        let t = primitive_type(&p.ptype).ok_or_else(|| format!("unsupported type: {}", p.ptype))?;
        let needed = t.live_slots().iter().max().map_or(0, |m| m + 1);
        if p.params.len() < needed || p.params.iter().any(|v| !v.is_finite()) {
            return Err(format!("bad params for {}", p.ptype));
        }
        types.push(t);
    }
    let live = || {
        raw.primitives
            .iter()
            .zip(&types)
            .flat_map(|(p, t)| t.live_slots().iter().map(move |&s| p.params[s]))
    };
    let on_grid = live().all(|v| v.fract() == 0.0 && (0.0..=MAX_LEVEL as f64).contains(&v));
    let in_unit = live().all(|v| (0.0..=1.0).contains(&v));
    let fit = if on_grid || in_unit { None } else { Some(bbox_fit(&raw, &types)) };

    let mut primitives = Vec::with_capacity(types.len());
    for (p, &t) in raw.primitives.iter().zip(&types) {
        let mut params = [0u8; PARAM_SLOTS];
        for &slot in t.live_slots() {
            let v = p.params[slot];
            params[slot] = if on_grid {
                v as u8
            } else {
                let (scale, offset) = fit.unwrap_or((1.0, [0.0, 0.0]));
                let q = if slot == RADIUS_SLOT {
                    quantize_length(v * scale, GRID)
                } else {
                    quantize(v * scale + offset[slot % 2], GRID)
                };
                q.map_err(|e| e.to_string())? as u8
            };
        }
        primitives.push(Primitive {
            ptype: t,
            flag: p.flag.unwrap_or(t != PrimitiveType::Point),
            params,
        });
    }

    let mut constraints = Vec::with_capacity(raw.constraints.len());
    for c in &raw.constraints {
        let t = ConstraintType::ALL
            .into_iter()
            .find(|t| *t != ConstraintType::None && t.name() == c.ctype)
            .ok_or_else(|| format!("unsupported constraint type: {}", c.ctype))?;
        let c = Constraint::new(t, c.refs.clone());
        if !constraints.contains(&c) {
            constraints.push(c);
        }
    }
    let sketch = Sketch::new(primitives, constraints);
    sketch.validate().map_err(|v| format!("invalid after import: {}", v[0]))?;
    Ok(sketch)
}

/// Scale and per-axis offset mapping the sketch's bounding box into the unit
/// square with a margin, preserving aspect ratio and centering.
fn bbox_fit(raw: &RawSketch, types: &[PrimitiveType]) -> (f64, [f64; 2]) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut add = |x: f64, y: f64, r: f64| {
        lo = [lo[0].min(x - r), lo[1].min(y - r)];
        hi = [hi[0].max(x + r), hi[1].max(y + r)];
    };
    for (p, t) in raw.primitives.iter().zip(types) {
        match t {
            PrimitiveType::Circle => add(p.params[0], p.params[1], p.params[RADIUS_SLOT].abs()),
            _ => {
                for pair in t.live_slots().chunks(2) {
                    add(p.params[pair[0]], p.params[pair[1]], 0.0);
                }
            }
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if extent > 0.0 { (1.0 - 2.0 * MARGIN) / extent } else { 1.0 };
    let offset = [
        0.5 - (lo[0] + hi[0]) / 2.0 * scale,
        0.5 - (lo[1] + hi[1]) / 2.0 * scale,
    ];
    (scale, offset)
}
