use crate::event::{Event, Schema};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// `v' = scale * v + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

impl Affine {
    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.offset
    }
}

/// Per-variable affine correction applied to event values before filtering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Calibration {
    pub terms: BTreeMap<String, Affine>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("calibration names unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("calibration for {0:?} needs a finite, non-zero scale and a finite offset")]
    BadCoefficients(String),
}

impl Calibration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, variable: impl Into<String>, scale: f64, offset: f64) -> Self {
        self.terms.insert(variable.into(), Affine { scale, offset });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), CalibrationError> {
        for (name, a) in &self.terms {
            if !schema.contains(name) {
                return Err(CalibrationError::UnknownVariable(name.clone()));
            }
            if !(a.scale.is_finite() && a.scale != 0.0 && a.offset.is_finite()) {
                return Err(CalibrationError::BadCoefficients(name.clone()));
            }
        }
        Ok(())
    }

    /// Dense per-index transform for `schema`; variables without a term are
    /// left unchanged.
    pub fn resolve(&self, schema: &Schema) -> Result<Vec<Option<Affine>>, CalibrationError> {
        self.validate(schema)?;
        Ok(schema.variables().iter().map(|v| self.terms.get(v).copied()).collect())
    }

    /// Copy of `event` with calibrated values.
    pub fn apply_to_event(&self, event: &Event, schema: &Schema) -> Result<Event, CalibrationError> {
        let resolved = self.resolve(schema)?;
        let mut out = event.clone();
        apply_resolved(&resolved, &mut out.values);
        Ok(out)
    }
}

pub(crate) fn apply_resolved(resolved: &[Option<Affine>], values: &mut [f64]) {
    for (v, a) in values.iter_mut().zip(resolved) {
        if let Some(a) = a {
            *v = a.apply(*v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let schema = Schema::default_physics();
        assert!(Calibration::new().with("bx", 2.0, 0.0).validate(&schema).is_ok());
        assert_eq!(
            Calibration::new().with("zz", 1.0, 0.0).validate(&schema),
            Err(CalibrationError::UnknownVariable("zz".into()))
        );
        assert!(Calibration::new().with("bx", 0.0, 0.0).validate(&schema).is_err());
        assert!(Calibration::new()
            .with("bx", 1.0, f64::INFINITY)
            .validate(&schema)
            .is_err());
    }

    #[test]
    fn serializes_as_map() {
        let cal = Calibration::new().with("bx", 2.0, 1.0);
        let json = serde_json::to_string(&cal).unwrap();
        assert_eq!(json, r#"{"bx":{"scale":2.0,"offset":1.0}}"#);
        assert_eq!(serde_json::from_str::<Calibration>(&json).unwrap(), cal);
    }

    #[test]
    fn applies_affine_terms() {
        let schema = Schema::default_physics();
        let ev = Event {
            event_id: 0,
            values: vec![1200.0, 5.0, 6.0, 7.0],
            tracks: vec![],
            vertices: vec![],
            payload: vec![],
        };
        let cal = Calibration::new().with("bx", 2.0, 0.0).with("evr", 1.0, -7.0);
        let out = cal.apply_to_event(&ev, &schema).unwrap();
        assert_eq!(out.values, vec![2400.0, 5.0, 6.0, 0.0]);
    }
}
