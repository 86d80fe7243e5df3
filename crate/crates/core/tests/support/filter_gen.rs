//! Random filter trees, an independent evaluator and a fully parenthesized
//! renderer.

use geps_core::event::variable_range;
use geps_core::filter::{CmpOp, FilterExpr};
use rand::Rng;
use std::collections::HashMap;

/// The nine distinct expressions of the example job listing.
pub const GOLDEN: [&str; 9] = [
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

const OPS: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne];

/// Literal drawn from a mix of shapes that stress number rendering.
pub fn literal<R: Rng>(rng: &mut R) -> f64 {
    match rng.gen_range(0..6) {
        0 => rng.gen_range(-1000i64..100_000) as f64,
        1 => rng.gen_range(-1e6..1e6),
        2 => rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-300..300)),
        3 => (rng.gen_range(0..100_000) as f64) / 8.0,
        4 => 0.0,
        _ => f64::from_bits(rng.gen::<u64>() & !(0x7FFu64 << 52) | ((rng.gen_range(1..2046) as u64) << 52)),
    }
}

fn comparison<R: Rng>(rng: &mut R, vars: &[String], physical: bool) -> FilterExpr {
    let variable = vars[rng.gen_range(0..vars.len())].clone();
    let op = OPS[rng.gen_range(0..OPS.len())];
    let lit = if physical {
        let (lo, hi) = variable_range(&variable);
        // integral thresholds, like the example jobs
        rng.gen_range(lo..hi).floor()
    } else {
        literal(rng)
    };
    FilterExpr::cmp(variable, op, lit)
}

/// A tree in canonical form: `&` binds tighter than `|`, both associate to
/// the left, so parentheses are needed around an `|` below an `&`, and around
/// any right operand of the same operator.
pub fn canonical_tree<R: Rng>(rng: &mut R, vars: &[String], max_depth: usize, physical: bool) -> FilterExpr {
    if max_depth <= 1 || rng.gen_bool(0.3) {
        return comparison(rng, vars, physical);
    }
    let and = rng.gen_bool(0.5);
    let l = canonical_tree(rng, vars, max_depth - 1, physical);
    let r = canonical_tree(rng, vars, max_depth - 1, physical);
    let wrap = |e: FilterExpr, right: bool| -> FilterExpr {
        let needs = match (&e, and) {
            (FilterExpr::Or(..), true) => true,
            (FilterExpr::And(..), true) => right,
            (FilterExpr::Or(..), false) => right,
            _ => false,
        };
        if needs {
            FilterExpr::Group(Box::new(e))
        } else {
            e
        }
    };
    let (l, r) = (wrap(l, false), wrap(r, true));
    if and {
        FilterExpr::And(Box::new(l), Box::new(r))
    } else {
        FilterExpr::Or(Box::new(l), Box::new(r))
    }
}

pub fn eval(e: &FilterExpr, values: &HashMap<&str, f64>) -> bool {
    match e {
        FilterExpr::Comparison { variable, op, literal } => {
            let v = values[variable.as_str()];
            let l = *literal;
            match op {
                CmpOp::Lt => v < l,
                CmpOp::Gt => v > l,
                CmpOp::Le => v <= l,
                CmpOp::Ge => v >= l,
                CmpOp::Eq => v == l,
                CmpOp::Ne => v != l,
            }
        }
        FilterExpr::And(l, r) => eval(l, values) & eval(r, values),
        FilterExpr::Or(l, r) => eval(l, values) | eval(r, values),
        FilterExpr::Group(inner) => eval(inner, values),
    }
}

/// Every operator and operand in parentheses, with spaces and the doubled
/// operator spellings.
pub fn render_verbose(e: &FilterExpr) -> String {
    match e {
        FilterExpr::Comparison { variable, op, literal } => {
            format!(" {variable} {} {literal:e} ", op.as_str())
        }
        FilterExpr::And(l, r) => format!("( {} && {} )", render_verbose(l), render_verbose(r)),
        FilterExpr::Or(l, r) => format!("( {} || {} )", render_verbose(l), render_verbose(r)),
        FilterExpr::Group(inner) => render_verbose(inner),
    }
}

/// Tree without any `Group` nodes.
pub fn strip(e: &FilterExpr) -> FilterExpr {
    match e {
        FilterExpr::Comparison { .. } => e.clone(),
        FilterExpr::And(l, r) => FilterExpr::And(Box::new(strip(l)), Box::new(strip(r))),
        FilterExpr::Or(l, r) => FilterExpr::Or(Box::new(strip(l)), Box::new(strip(r))),
        FilterExpr::Group(inner) => strip(inner),
    }
}
