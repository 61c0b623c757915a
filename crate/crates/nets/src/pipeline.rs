//! The end-to-end parser: image → primitives → constraints → optional snap.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sketch2cad_core::dataset::RasterImage;
use sketch2cad_core::prediction::{decode_constraints, decode_predictions};
use sketch2cad_core::sketch::admits;
use sketch2cad_core::snap::apply_constraints;
use sketch2cad_core::{Constraint, Primitive};

use crate::checkpoint::{checkpoint_id, CheckpointDir};
use crate::constraint::ConstraintNet;
use crate::error::{Error, Result};
use crate::primitive::PrimitiveNet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parsed {
    pub primitives: Vec<Primitive>,
    pub constraints: Vec<Constraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapped_primitives: Option<Vec<Primitive>>,
}

/// Frozen networks; all methods take `&self` and are safe to call concurrently.
pub struct Pipeline {
    /// Absent for a constraint-only pipeline.
    prim: Option<PrimitiveNet>,
    cons: ConstraintNet,
    prim_id: Option<String>,
    cons_id: String,
}

fn config_id<T: Serialize>(cfg: &T) -> String {
    let mut s = serde_json::to_vec_pretty(cfg).expect("config serializes");
    s.push(b'\n');
    checkpoint_id(&s)
}

impl Pipeline {
    pub fn new(prim: PrimitiveNet, cons: ConstraintNet) -> Self {
        Self {
            prim_id: Some(config_id(prim.config())),
            cons_id: config_id(cons.config()),
            prim: Some(prim),
            cons,
        }
    }

    /// Runs only the constraint stage; image parsing is unavailable.
    pub fn constraint_only(cons: ConstraintNet) -> Self {
        Self {
            prim: None,
            prim_id: None,
            cons_id: config_id(cons.config()),
            cons,
        }
    }

    pub fn load(prim_dir: &Path, cons_dir: &Path) -> Result<Self> {
        let (p, c) = (CheckpointDir::new(prim_dir), CheckpointDir::new(cons_dir));
        Ok(Self {
            prim: Some(p.load_primitive()?),
            cons: c.load_constraint()?,
            prim_id: Some(p.id()?),
            cons_id: c.id()?,
        })
    }

    pub fn prim_id(&self) -> Option<&str> {
        self.prim_id.as_deref()
    }

    pub fn cons_id(&self) -> &str {
        &self.cons_id
    }

    pub fn primitive_net(&self) -> Option<&PrimitiveNet> {
        self.prim.as_ref()
    }

    pub fn constraint_net(&self) -> &ConstraintNet {
        &self.cons
    }

    pub fn primitives(&self, img: &RasterImage) -> Result<Vec<Primitive>> {
        let prim = self
            .prim
            .as_ref()
            .ok_or_else(|| Error::Config("pipeline has no primitive model".into()))?;
        let pred = prim.predict(&[img])?.pop().expect("one prediction per image");
        // Degenerate decodes (zero length or radius) are not valid sketch geometry.
        Ok(decode_predictions(&pred).into_iter().filter(Primitive::is_well_formed).collect())
    }

    /// Constraint stage alone.
    pub fn constraints(&self, prims: &[Primitive]) -> Result<Vec<Constraint>> {
        if prims.is_empty() {
            return Ok(Vec::new());
        }
        let max = self.cons.config().max_primitives;
        if prims.len() > max {
            return Err(Error::Config(format!("{} primitives exceed the constraint model maximum {max}", prims.len())));
        }
        let pred = self.cons.predict(&[prims])?.pop().expect("one prediction per sketch");
        // Constraints the referenced primitive types cannot take are dropped so
        // the output is always a valid sketch.
        Ok(decode_constraints(&pred)
            .into_iter()
            .filter(|c| admits(c.ctype, &c.refs.iter().map(|&r| &prims[r]).collect::<Vec<_>>()))
            .collect())
    }

    pub fn parse_primitives(&self, prims: Vec<Primitive>, snap: bool) -> Result<Parsed> {
        let constraints = self.constraints(&prims)?;
        let snapped_primitives = snap.then(|| apply_constraints(&prims, &constraints));
        Ok(Parsed {
            primitives: prims,
            constraints,
            snapped_primitives,
        })
    }

    pub fn parse_image(&self, img: &RasterImage, snap: bool) -> Result<Parsed> {
        let prims = self.primitives(img)?;
        self.parse_primitives(prims, snap)
    }
}
