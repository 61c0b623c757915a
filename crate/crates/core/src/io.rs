//! Sketch JSON format.
//!
//! ```json
//! {"primitives":[{"type":"line","flag":true,"params":[10,10,50,10,0,0,0]}],
//!  "constraints":[{"type":"horizontal","refs":[0]}]}
//! ```
//!
//! `params` always has seven entries on the 64-level grid; `refs` has one or two
//! primitive indices. Arcs store start, an on-curve middle point, and end.

use crate::error::{Error, Result};
use crate::sketch::{Sketch, GEO_TOLERANCE};

pub fn serialize_sketch(s: &Sketch) -> String {
    serde_json::to_string(s).expect("sketch serialization cannot fail")
}

/// Parses and fully validates a sketch, including geometric consistency.
pub fn deserialize_sketch(text: &str) -> Result<Sketch> {
    deserialize_sketch_with(text, Some(GEO_TOLERANCE))
}

/// Parses a sketch; `tolerance = None` checks structure only, which is what
/// model outputs with imperfect geometry need.
pub fn deserialize_sketch_with(text: &str, tolerance: Option<f64>) -> Result<Sketch> {
    let mut sketch: Sketch = serde_json::from_str(text).map_err(parse_error)?;
    sketch.constraints = sketch.constraints.into_iter().map(|c| c.canonical()).collect();
    sketch
        .validate_with_tolerance(tolerance)
        .map_err(Error::Validation)?;
    Ok(sketch)
}

pub(crate) fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataset::{generate_sketch, GenConfig};
    use crate::sketch::{Constraint, ConstraintType, Primitive};

    #[test]
    fn documented_example_parses() {
        let text = r#"{"primitives":[{"type":"line","flag":true,"params":[10,10,50,10,0,0,0]}],
                       "constraints":[{"type":"horizontal","refs":[0]}]}"#;
        let s = deserialize_sketch(text).unwrap();
        assert_eq!(s.primitives, vec![Primitive::line(true, 10, 10, 50, 10)]);
        assert_eq!(s.constraints, vec![Constraint::unary(ConstraintType::Horizontal, 0)]);
        assert_eq!(
            serialize_sketch(&s),
            r#"{"primitives":[{"type":"line","flag":true,"params":[10,10,50,10,0,0,0]}],"constraints":[{"type":"horizontal","refs":[0]}]}"#
        );
    }

    #[test]
    fn unknown_type_is_parse_error() {
        let text = r#"{"primitives":[{"type":"spline","flag":true,"params":[0,0,0,0,0,0,0]}]}"#;
        match deserialize_sketch(text) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 1);
                assert!(column > 0);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn param_64_is_validation_error() {
        let text = r#"{"primitives":[{"type":"point","flag":false,"params":[64,3,0,0,0,0,0]}]}"#;
        assert!(matches!(deserialize_sketch(text), Err(Error::Validation(_))));
    }

    #[test]
    fn short_params_are_rejected() {
        let text = r#"{"primitives":[{"type":"point","flag":false,"params":[1,3]}]}"#;
        assert!(matches!(deserialize_sketch(text), Err(Error::Parse { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn generated_sketches_round_trip(seed in any::<u64>()) {
            let s = generate_sketch(&GenConfig { seed, ..GenConfig::default() }).unwrap();
            prop_assert_eq!(deserialize_sketch(&serialize_sketch(&s)).unwrap(), s);
        }
    }
}
