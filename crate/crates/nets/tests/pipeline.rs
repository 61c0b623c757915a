mod common;

use common::*;
use sketch2cad_core::dataset::rasterize;
use sketch2cad_core::loss::{constraint_loss, primitive_loss};
use sketch2cad_nets::eval::{eval_constraint, eval_primitive};
use sketch2cad_nets::inputs::{constraint_inputs, primitive_inputs};
use sketch2cad_nets::*;

fn pipeline() -> Pipeline {
    Pipeline::new(
        PrimitiveNet::new(&tiny_prim()).unwrap(),
        ConstraintNet::new(&tiny_cons()).unwrap(),
    )
}

#[test]
fn untrained_pipeline_produces_well_formed_output() {
    let p = pipeline();
    let s = &sketches(1, 200)[0];
    let img = rasterize(&s.primitives, None, &mut rand::rng());
    let out = p.parse_image(&img, true).unwrap();
    assert!(out.primitives.len() <= tiny_prim().queries);
    for c in &out.constraints {
        assert!(c.refs.iter().all(|&r| r < out.primitives.len()));
        assert!(c.is_canonical());
    }
    assert_eq!(out.snapped_primitives.as_ref().map(Vec::len), Some(out.primitives.len()));
    assert!(p.parse_image(&img, false).unwrap().snapped_primitives.is_none());
    sketch2cad_core::Sketch::new(out.primitives.clone(), out.constraints.clone())
        .validate_with_tolerance(None)
        .unwrap();
    let from_gt = p.parse_primitives(s.primitives.clone(), false).unwrap();
    sketch2cad_core::Sketch::new(from_gt.primitives, from_gt.constraints)
        .validate_with_tolerance(None)
        .unwrap();
    assert_eq!(p.parse_image(&img, true).unwrap(), out);
}

#[test]
fn constraint_stage_runs_alone() {
    let p = pipeline();
    let s = &sketches(1, 201)[0];
    let out = p.parse_primitives(s.primitives.clone(), false).unwrap();
    assert_eq!(out.primitives, s.primitives);
    assert!(p.parse_primitives(Vec::new(), true).unwrap().constraints.is_empty());
}

#[test]
fn evaluation_reports_counts_for_every_ground_truth_element() {
    let data = sketches(5, 210);
    let p = PrimitiveNet::new(&tiny_prim()).unwrap();
    let imgs = primitive_inputs(&data, Regime::Noisy, &Default::default(), 1);
    let r = eval_primitive(&p, &data, &imgs, true).unwrap();
    let total: usize = data.iter().map(|s| s.primitives.len()).sum();
    assert_eq!(r.score.counts.total, total);
    let corr = r.corrected.unwrap();
    // Snapping never changes types or flags.
    assert_eq!(corr.counts.type_ok, r.score.counts.type_ok);
    assert_eq!(corr.counts.flag_ok, r.score.counts.flag_ok);

    let c = ConstraintNet::new(&tiny_cons()).unwrap();
    let ins = constraint_inputs(&data, Regime::Noiseless, &Default::default(), 1);
    let r = eval_constraint(&c, &data, &ins).unwrap();
    assert_eq!(r.counts.total, data.iter().map(|s| s.constraints.len()).sum::<usize>());
}

#[test]
fn noisy_inputs_are_reproducible_and_noisy() {
    let data = sketches(3, 220);
    let a = primitive_inputs(&data, Regime::Noisy, &Default::default(), 7);
    let b = primitive_inputs(&data, Regime::Noisy, &Default::default(), 7);
    let clean = primitive_inputs(&data, Regime::Noiseless, &Default::default(), 7);
    assert_eq!(a, b);
    assert_ne!(a, clean);
    let ca = constraint_inputs(&data, Regime::Noisy, &Default::default(), 7);
    assert_eq!(ca, constraint_inputs(&data, Regime::Noisy, &Default::default(), 7));
    assert_ne!(ca[0], data[0].primitives);
}

#[test]
fn one_hot_predictions_score_perfectly() {
    // Sanity link between the nets' loss wiring and core: a perfect prediction
    // set has only the no-object term.
    let s = &sketches(1, 230)[0];
    let n = tiny_prim().queries;
    let pred = sketch2cad_core::prediction::PrimitivePredictionSet::one_hot(&s.primitives, n);
    let l = primitive_loss(&s.primitives, &pred, &tiny_prim().weights).unwrap();
    assert!(l.terms.types.abs() < 1e-9 && l.terms.params.abs() < 1e-9);
    let cp = sketch2cad_core::prediction::ConstraintPredictionSet::one_hot(&s.constraints, 40, s.primitives.len());
    let l = constraint_loss(&s.constraints, &cp, &tiny_cons().weights).unwrap();
    assert!(l.terms.types.abs() < 1e-9 && l.terms.refs.abs() < 1e-9);
}

#[test]
fn constraint_only_pipeline_rejects_images() {
    let p = Pipeline::constraint_only(ConstraintNet::new(&tiny_cons()).unwrap());
    assert!(p.prim_id().is_none());
    let s = &sketches(1, 240)[0];
    assert!(p.parse_image(&rasterize(&s.primitives, None, &mut rand::rng()), false).is_err());
    assert_eq!(p.parse_primitives(s.primitives.clone(), false).unwrap().primitives, s.primitives);
}
