//! Single-process reference for a filter job: calibrate, filter and merge the
//! whole dataset in order, then encode with the reference encoder.

use super::{filter_gen, geb_ref};
use geps_core::event::{Event, Schema};
use geps_core::filter::{Calibration, FilterExpr};
use std::collections::HashMap;

pub fn calibrate(event: &Event, schema: &Schema, cal: Option<&Calibration>) -> Event {
    let mut out = event.clone();
    if let Some(cal) = cal {
        for (i, name) in schema.variables().iter().enumerate() {
            if let Some(a) = cal.terms.get(name) {
                out.values[i] = a.scale * out.values[i] + a.offset;
            }
        }
    }
    out
}

pub fn select(events: &[Event], schema: &Schema, filter: &FilterExpr, cal: Option<&Calibration>) -> Vec<Event> {
    events
        .iter()
        .map(|e| calibrate(e, schema, cal))
        .filter(|e| {
            let values: HashMap<&str, f64> = schema
                .variables()
                .iter()
                .map(String::as_str)
                .zip(e.values.iter().copied())
                .collect();
            filter_gen::eval(filter, &values)
        })
        .collect()
}

/// Bytes the merged result of a full-dataset job must have.
pub fn expected_result(
    dataset_id: u64,
    events: &[Event],
    schema: &Schema,
    filter: &FilterExpr,
    cal: Option<&Calibration>,
) -> Vec<u8> {
    let selected = select(events, schema, filter, cal);
    geb_ref::encode(dataset_id, 0, 0, schema.variables(), &selected)
}
