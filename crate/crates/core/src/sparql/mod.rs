//! SPARQL subset used by device and service discovery: `SELECT` over a basic
//! graph pattern from one optional `FROM` graph, with `FILTER` expressions
//! built from comparisons, boolean connectives and the Virtuoso geospatial
//! builtins `bif:st_point` / `bif:st_intersects`.

mod ast;
mod eval;
pub mod geo;
mod parser;

pub use ast::{Builtin, CompareOp, FilterExpr, PatternTerm, QueryAst, TriplePattern, Variable};
pub use eval::{eval_filter, evaluate, evaluate_with, BindingSet};
pub use geo::{haversine_km, st_intersects, st_point, GeoPoint, EARTH_RADIUS_KM};
pub use parser::parse;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        line: usize,
        col: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unknown function `{name}` at {line}:{col}")]
    UnknownFunction { name: String, line: usize, col: usize },
    #[error("function `{name}` at {line}:{col} takes {expected} arguments, got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        line: usize,
        col: usize,
    },
    #[error("selected variable {0} does not appear in any pattern")]
    UnboundSelect(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("type error in `{expr}`: {message}")]
    Type { expr: String, message: String },
    #[error("range error: {0}")]
    Range(String),
    #[error("variable {0} is unbound in filter")]
    Unbound(String),
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Parses and evaluates in one step.
pub fn run(text: &str, store: &crate::store::Store) -> Result<BindingSet, QueryError> {
    let ast = parse(text)?;
    Ok(evaluate(&ast, store)?)
}
