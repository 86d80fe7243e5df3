//! Filter expression language.
//!
//! ```text
//! expr       := orExpr
//! orExpr     := andExpr { ("|" | "||") andExpr }
//! andExpr    := atom { ("&" | "&&") atom }
//! atom       := comparison | "(" expr ")"
//! comparison := IDENT OP NUMBER
//! OP         := "<" | ">" | "<=" | ">=" | "==" | "!="
//! ```
//!
//! `&` binds tighter than `|`, both associate to the left, comparisons do not
//! chain. Whitespace is insignificant.

mod calibration;
mod eval;
mod parser;

pub use calibration::{Affine, Calibration, CalibrationError};
pub use eval::{evaluate, CompileError, CompiledFilter, EvalError};
pub use parser::{parse, Expected, SyntaxError};

use crate::event::Schema;
use std::fmt;

/// Maximum depth of a filter tree.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne];

    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    /// Doubles are compared exactly, including for `==` and `!=`.
    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterExpr {
    Comparison {
        variable: String,
        op: CmpOp,
        literal: f64,
    },
    And(Box<FilterExpr>, Box<FilterExpr>),
    Or(Box<FilterExpr>, Box<FilterExpr>),
    /// Parentheses that change how the tree would otherwise associate.
    Group(Box<FilterExpr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

impl FilterExpr {
    pub fn cmp(variable: impl Into<String>, op: CmpOp, literal: f64) -> Self {
        FilterExpr::Comparison {
            variable: variable.into(),
            op,
            literal,
        }
    }

    pub fn and(lhs: FilterExpr, rhs: FilterExpr) -> Self {
        FilterExpr::And(Box::new(lhs), Box::new(rhs))
    }

    pub fn or(lhs: FilterExpr, rhs: FilterExpr) -> Self {
        FilterExpr::Or(Box::new(lhs), Box::new(rhs))
    }

    pub fn group(inner: FilterExpr) -> Self {
        FilterExpr::Group(Box::new(inner))
    }

    pub fn depth(&self) -> usize {
        match self {
            FilterExpr::Comparison { .. } => 1,
            FilterExpr::And(l, r) | FilterExpr::Or(l, r) => 1 + l.depth().max(r.depth()),
            FilterExpr::Group(inner) => 1 + inner.depth(),
        }
    }

    /// Variables in order of first appearance, without repeats.
    pub fn variables(&self) -> Vec<&str> {
        fn walk<'a>(e: &'a FilterExpr, out: &mut Vec<&'a str>) {
            match e {
                FilterExpr::Comparison { variable, .. } => {
                    if !out.contains(&variable.as_str()) {
                        out.push(variable);
                    }
                }
                FilterExpr::And(l, r) | FilterExpr::Or(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                FilterExpr::Group(inner) => walk(inner, out),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    fn strip_groups(&self) -> &FilterExpr {
        match self {
            FilterExpr::Group(inner) => inner.strip_groups(),
            other => other,
        }
    }

    /// Rebuilds the tree so that `Group` nodes appear exactly where the
    /// canonical rendering needs parentheses. Parser output is already
    /// canonical.
    pub fn canonicalize(&self) -> FilterExpr {
        fn child(parent_is_and: bool, side: Side, e: &FilterExpr) -> FilterExpr {
            let inner = e.strip_groups();
            let c = inner.canonicalize();
            let needs = match inner {
                FilterExpr::Or(..) => parent_is_and || side == Side::Right,
                FilterExpr::And(..) => parent_is_and && side == Side::Right,
                _ => false,
            };
            if needs {
                FilterExpr::group(c)
            } else {
                c
            }
        }
        match self.strip_groups() {
            FilterExpr::Comparison { .. } => self.strip_groups().clone(),
            FilterExpr::And(l, r) => FilterExpr::and(child(true, Side::Left, l), child(true, Side::Right, r)),
            FilterExpr::Or(l, r) => FilterExpr::or(child(false, Side::Left, l), child(false, Side::Right, r)),
            FilterExpr::Group(_) => unreachable!("groups stripped"),
        }
    }

    pub fn is_canonical(&self) -> bool {
        *self == self.canonicalize()
    }

    /// Canonical text: `&` and `|`, no spaces, parentheses only where the
    /// tree shape requires them.
    pub fn render(&self) -> String {
        let mut out = String::new();
        write_canonical(&self.canonicalize(), &mut out);
        out
    }

    /// Every unknown variable, once, in order of first appearance.
    pub fn validate(&self, schema: &Schema) -> Result<(), Vec<ValidationError>> {
        let errors: Vec<ValidationError> = self
            .variables()
            .into_iter()
            .filter(|v| !schema.contains(v))
            .map(|v| ValidationError::UnknownVariable(v.to_owned()))
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// Free-function form of [`FilterExpr::validate`].
pub fn validate(expr: &FilterExpr, schema: &Schema) -> Result<(), Vec<ValidationError>> {
    expr.validate(schema)
}

/// Free-function form of [`FilterExpr::render`].
pub fn render(expr: &FilterExpr) -> String {
    expr.render()
}

fn write_canonical(e: &FilterExpr, out: &mut String) {
    match e {
        FilterExpr::Comparison { variable, op, literal } => {
            out.push_str(variable);
            out.push_str(op.as_str());
            out.push_str(&render_number(*literal));
        }
        FilterExpr::And(l, r) => {
            write_canonical(l, out);
            out.push('&');
            write_canonical(r, out);
        }
        FilterExpr::Or(l, r) => {
            write_canonical(l, out);
            out.push('|');
            write_canonical(r, out);
        }
        FilterExpr::Group(inner) => {
            out.push('(');
            write_canonical(inner, out);
            out.push(')');
        }
    }
}

/// Shortest decimal text that parses back to the same double.
pub fn render_number(v: f64) -> String {
    // Display never uses exponents, which gets unwieldy at extreme magnitudes.
    let mag = v.abs();
    if mag >= 1e16 || (mag != 0.0 && mag < 1e-6) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

impl fmt::Display for FilterExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, thiserror::Error, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum ValidationError {
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
}

/// Parses and validates a filter, returning its canonical text.
pub fn canonical_filter(text: &str, schema: &Schema) -> Result<(FilterExpr, String), FilterError> {
    let expr = parse(text)?;
    expr.validate(schema).map_err(FilterError::Invalid)?;
    let canonical = expr.render();
    Ok((expr, canonical))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("{}", join_errors(.0))]
    Invalid(Vec<ValidationError>),
}

fn join_errors(errors: &[ValidationError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The distinct expressions of the portal's job-status listing.
    pub(crate) const STATUS_TABLE_FILTERS: [&str; 9] = [
        "bx>2000&gotmean<100",
        "bx>50000&gotmean<6000",
        "bx>60000&gotmean<6000",
        "bx>504&levr<230",
        "bx>1504&levr<1000",
        "bx>1000&levr<100",
        "evr<10",
        "bx<100",
        "bx<10",
    ];

    #[test]
    fn status_table_corpus_round_trips() {
        let schema = Schema::default_physics();
        for text in STATUS_TABLE_FILTERS {
            let e = parse(text).unwrap();
            assert_eq!(e.validate(&schema), Ok(()));
            assert_eq!(e.render(), text);
        }
    }

    #[test]
    fn render_canonicalizes_spacing_and_synonyms() {
        assert_eq!(
            parse("bx > 2000 && gotmean < 100").unwrap().render(),
            "bx>2000&gotmean<100"
        );
        assert_eq!(parse("evr<10").unwrap().render(), "evr<10");
        assert_eq!(parse("((bx<1))").unwrap().render(), "bx<1");
    }

    #[test]
    fn or_over_and_needs_no_parentheses() {
        let e = FilterExpr::or(
            FilterExpr::cmp("bx", CmpOp::Lt, 10.0),
            FilterExpr::and(
                FilterExpr::cmp("evr", CmpOp::Gt, 1.0),
                FilterExpr::cmp("levr", CmpOp::Le, 2.0),
            ),
        );
        assert_eq!(e.render(), "bx<10|evr>1&levr<=2");
        assert_eq!(parse(&e.render()).unwrap(), e);
    }

    #[test]
    fn and_over_or_keeps_parentheses() {
        let e = FilterExpr::and(
            FilterExpr::or(
                FilterExpr::cmp("a", CmpOp::Lt, 1.0),
                FilterExpr::cmp("b", CmpOp::Lt, 2.0),
            ),
            FilterExpr::cmp("c", CmpOp::Ne, 3.0),
        );
        assert_eq!(e.render(), "(a<1|b<2)&c!=3");
        assert_eq!(parse(&e.render()).unwrap(), e.canonicalize());
    }

    #[test]
    fn right_nested_same_operator_keeps_parentheses() {
        let e = parse("a<1&(b<2&c<3)").unwrap();
        assert_eq!(e.render(), "a<1&(b<2&c<3)");
        let e = parse("(a<1&b<2)&c<3").unwrap();
        assert_eq!(e.render(), "a<1&b<2&c<3");
    }

    #[test]
    fn validate_lists_unknown_names_once() {
        let schema = Schema::default_physics();
        assert_eq!(parse("bx<10").unwrap().validate(&schema), Ok(()));
        assert_eq!(
            parse("zz<1").unwrap().validate(&schema),
            Err(vec![ValidationError::UnknownVariable("zz".into())])
        );
        assert_eq!(
            parse("zz<1&qq>2|zz>0").unwrap().validate(&schema),
            Err(vec![
                ValidationError::UnknownVariable("zz".into()),
                ValidationError::UnknownVariable("qq".into())
            ])
        );
    }

    #[test]
    fn numbers_render_shortest() {
        assert_eq!(render_number(2000.0), "2000");
        assert_eq!(render_number(0.5), "0.5");
        assert_eq!(render_number(-3.25), "-3.25");
        assert_eq!(render_number(1e300), "1e300");
        assert_eq!(render_number(1.5e-9), "1.5e-9");
    }
}
