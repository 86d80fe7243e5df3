use super::calibration::{apply_resolved, Affine};
use super::{Calibration, CalibrationError, CmpOp, FilterExpr, ValidationError};
use crate::event::{Event, Schema};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("variable {0:?} is not in the schema")]
    UnknownVariable(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("event has {actual} values, schema declares {expected}")]
    ValueCount { expected: usize, actual: usize },
}

/// Evaluates `expr` against one event.
///
/// Both sides of `&` and `|` are always evaluated, so an unknown variable
/// anywhere in the tree is reported instead of being masked.
pub fn evaluate(
    expr: &FilterExpr,
    event: &Event,
    schema: &Schema,
    cal: Option<&Calibration>,
) -> Result<bool, EvalError> {
    if event.values.len() != schema.len() {
        return Err(EvalError::ValueCount {
            expected: schema.len(),
            actual: event.values.len(),
        });
    }
    let mut values = event.values.clone();
    if let Some(cal) = cal {
        apply_resolved(&cal.resolve(schema)?, &mut values);
    }
    eval_tree(expr, schema, &values)
}

fn eval_tree(expr: &FilterExpr, schema: &Schema, values: &[f64]) -> Result<bool, EvalError> {
    match expr {
        FilterExpr::Comparison { variable, op, literal } => {
            let idx = schema
                .index_of(variable)
                .ok_or_else(|| EvalError::UnknownVariable(variable.clone()))?;
            Ok(op.apply(values[idx], *literal))
        }
        FilterExpr::And(l, r) => {
            let (l, r) = (eval_tree(l, schema, values)?, eval_tree(r, schema, values)?);
            Ok(l && r)
        }
        FilterExpr::Or(l, r) => {
            let (l, r) = (eval_tree(l, schema, values)?, eval_tree(r, schema, values)?);
            Ok(l || r)
        }
        FilterExpr::Group(inner) => eval_tree(inner, schema, values),
    }
}

#[derive(Debug, Clone)]
enum Node {
    Cmp { index: usize, op: CmpOp, literal: f64 },
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, values: &[f64]) -> bool {
        match self {
            Node::Cmp { index, op, literal } => op.apply(values[*index], *literal),
            Node::And(l, r) => l.eval(values) && r.eval(values),
            Node::Or(l, r) => l.eval(values) || r.eval(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", "))]
    Invalid(Vec<ValidationError>),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

/// A filter bound to a schema: variable lookups resolved to value indices
/// and the calibration expanded per index.
#[derive(Debug, Clone)]
pub struct CompiledFilter {
    root: Node,
    calibration: Vec<Option<Affine>>,
    width: usize,
}

impl CompiledFilter {
    pub fn new(expr: &FilterExpr, schema: &Schema, cal: Option<&Calibration>) -> Result<Self, CompileError> {
        expr.validate(schema).map_err(CompileError::Invalid)?;
        let calibration = match cal {
            Some(cal) => cal.resolve(schema)?,
            None => vec![None; schema.len()],
        };
        Ok(Self {
            root: lower(expr, schema),
            calibration,
            width: schema.len(),
        })
    }

    /// Applies the calibration in place and evaluates the filter on the
    /// calibrated values.
    pub fn calibrate_and_test(&self, values: &mut [f64]) -> bool {
        debug_assert_eq!(values.len(), self.width);
        apply_resolved(&self.calibration, values);
        self.root.eval(values)
    }

    pub fn test(&self, event: &Event) -> bool {
        let mut values = event.values.clone();
        self.calibrate_and_test(&mut values)
    }
}

fn lower(expr: &FilterExpr, schema: &Schema) -> Node {
    match expr {
        FilterExpr::Comparison { variable, op, literal } => Node::Cmp {
            index: schema.index_of(variable).expect("validated"),
            op: *op,
            literal: *literal,
        },
        FilterExpr::And(l, r) => Node::And(Box::new(lower(l, schema)), Box::new(lower(r, schema))),
        FilterExpr::Or(l, r) => Node::Or(Box::new(lower(l, schema)), Box::new(lower(r, schema))),
        FilterExpr::Group(inner) => lower(inner, schema),
    }
}
