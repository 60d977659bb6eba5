use std::collections::HashMap;

use crate::exec::{self, ExecMode};
use crate::store::{Iri, Pattern, Store, Term};
use crate::vocab;

use super::ast::{Builtin, CompareOp, FilterExpr, PatternTerm, QueryAst, Variable};
use super::geo::{self, GeoPoint};
use super::EvalError;

/// Result rows; every row binds exactly the selected variables, in order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BindingSet {
    pub variables: Vec<Variable>,
    pub rows: Vec<Vec<Term>>,
}

impl BindingSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of one column, in row order.
    pub fn column(&self, var: &str) -> Vec<&Term> {
        match self.variables.iter().position(|v| v.name() == var) {
            Some(i) => self.rows.iter().map(|r| &r[i]).collect(),
            None => Vec::new(),
        }
    }

    /// Tab-separated rendering with a header row of variable names.
    pub fn to_tsv(&self) -> String {
        let mut out = self
            .variables
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("\t");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|t| t.to_string()).collect();
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// A partial solution: slot `i` holds the binding of variable `i`.
type Row = Vec<Option<Term>>;

#[derive(Clone, Debug)]
enum Value {
    Term(Term),
    Number(f64),
    Bool(bool),
    Point(GeoPoint),
}

/// Evaluates `ast` against `store`: left-to-right join of the patterns,
/// then every filter, then projection with rows in lexicographic order.
pub fn evaluate(ast: &QueryAst, store: &Store) -> Result<BindingSet, EvalError> {
    evaluate_with(ast, store, ExecMode::preferred())
}

pub fn evaluate_with(ast: &QueryAst, store: &Store, mode: ExecMode) -> Result<BindingSet, EvalError> {
    let graph = ast.graph();
    let mut slots: HashMap<&Variable, usize> = HashMap::new();
    for p in &ast.patterns {
        for v in p.variables() {
            let next = slots.len();
            slots.entry(v).or_insert(next);
        }
    }
    for f in &ast.filters {
        for v in f.variables() {
            let next = slots.len();
            slots.entry(v).or_insert(next);
        }
    }
    let width = slots.len();
    let mut rows: Vec<Row> = vec![vec![None; width]];
    for pattern in &ast.patterns {
        let positions = [&pattern.subject, &pattern.predicate, &pattern.object];
        let mut next = Vec::new();
        for row in &rows {
            let bound: Vec<Option<Term>> = positions
                .iter()
                .map(|pt| match pt {
                    PatternTerm::Term(t) => Some(t.clone()),
                    PatternTerm::Var(v) => row[slots[v]].clone(),
                })
                .collect();
            let predicate = match &bound[1] {
                Some(Term::Iri(iri)) => Some(iri.clone()),
                // A predicate bound to a non-IRI can never match.
                Some(_) => continue,
                None => None,
            };
            let probe = Pattern::new(bound[0].clone(), predicate, bound[2].clone());
            'triples: for triple in store.match_pattern(&graph, &probe) {
                let values = [triple.subject, Term::Iri(triple.predicate), triple.object];
                let mut extended = row.clone();
                for (pt, value) in positions.iter().zip(values) {
                    if let PatternTerm::Var(v) = pt {
                        let slot = &mut extended[slots[v]];
                        match slot {
                            Some(existing) if *existing != value => continue 'triples,
                            Some(_) => {}
                            None => *slot = Some(value),
                        }
                    }
                }
                next.push(extended);
            }
        }
        rows = next;
        if rows.is_empty() {
            break;
        }
    }
    if ast.patterns.is_empty() {
        rows.clear();
    }
    for filter in &ast.filters {
        rows = exec::try_filter(mode, rows, |row| {
            match eval_expr(filter, row, &slots)? {
                Value::Bool(b) => Ok(b),
                other => Err(EvalError::Type {
                    expr: filter.to_string(),
                    message: format!("filter produced {other:?}, expected a boolean"),
                }),
            }
        })?;
    }
    let mut out: Vec<Vec<Term>> = rows
        .into_iter()
        .map(|row| {
            ast.select
                .iter()
                .map(|v| row[slots[v]].clone().expect("select variable bound by a pattern"))
                .collect()
        })
        .collect();
    out.sort();
    Ok(BindingSet {
        variables: ast.select.clone(),
        rows: out,
    })
}

/// Evaluates a filter against a complete binding; used by callers that
/// check single solutions.
pub fn eval_filter(expr: &FilterExpr, bindings: &HashMap<Variable, Term>) -> Result<bool, EvalError> {
    let slots: HashMap<&Variable, usize> = bindings.keys().enumerate().map(|(i, v)| (v, i)).collect();
    let mut row: Row = vec![None; slots.len()];
    for (v, i) in &slots {
        row[*i] = bindings.get(*v).cloned();
    }
    let mut ext = slots.clone();
    for v in expr.variables() {
        if !ext.contains_key(v) {
            let i = row.len();
            row.push(None);
            ext.insert(v, i);
        }
    }
    match eval_expr(expr, &row, &ext)? {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError::Type {
            expr: expr.to_string(),
            message: format!("filter produced {other:?}, expected a boolean"),
        }),
    }
}

fn eval_expr(expr: &FilterExpr, row: &Row, slots: &HashMap<&Variable, usize>) -> Result<Value, EvalError> {
    let type_err = |message: String| EvalError::Type {
        expr: expr.to_string(),
        message,
    };
    Ok(match expr {
        FilterExpr::Var(v) => match slots.get(v).and_then(|&i| row[i].clone()) {
            Some(t) => Value::Term(t),
            None => return Err(EvalError::Unbound(v.to_string())),
        },
        FilterExpr::Number(n) => Value::Number(*n),
        FilterExpr::Bool(b) => Value::Bool(*b),
        FilterExpr::Constant(t) => Value::Term(t.clone()),
        FilterExpr::Not(e) => match eval_expr(e, row, slots)? {
            Value::Bool(b) => Value::Bool(!b),
            other => return Err(type_err(format!("`!` applied to {other:?}"))),
        },
        FilterExpr::And(a, b) | FilterExpr::Or(a, b) => {
            let is_and = matches!(expr, FilterExpr::And(..));
            let lhs = match eval_expr(a, row, slots)? {
                Value::Bool(x) => x,
                other => return Err(type_err(format!("boolean operand expected, got {other:?}"))),
            };
            if lhs != is_and {
                return Ok(Value::Bool(lhs));
            }
            match eval_expr(b, row, slots)? {
                Value::Bool(x) => Value::Bool(x),
                other => return Err(type_err(format!("boolean operand expected, got {other:?}"))),
            }
        }
        FilterExpr::Compare { op, lhs, rhs } => {
            let (l, r) = (eval_expr(lhs, row, slots)?, eval_expr(rhs, row, slots)?);
            Value::Bool(compare(*op, &l, &r).ok_or_else(|| {
                type_err(format!("cannot compare {l:?} {} {r:?}", op.symbol()))
            })?)
        }
        FilterExpr::Call { function, args } => {
            let vals = args
                .iter()
                .map(|a| eval_expr(a, row, slots))
                .collect::<Result<Vec<_>, _>>()?;
            match function {
                Builtin::StPoint => {
                    let lon = numeric(&vals[0]).ok_or_else(|| type_err(format!("longitude {:?} is not numeric", vals[0])))?;
                    let lat = numeric(&vals[1]).ok_or_else(|| type_err(format!("latitude {:?} is not numeric", vals[1])))?;
                    Value::Point(geo::st_point(lon, lat)?)
                }
                Builtin::StIntersects => {
                    let g = point(&vals[0]).ok_or_else(|| type_err(format!("{:?} is not a point geometry", vals[0])))?;
                    let c = point(&vals[1]).ok_or_else(|| type_err(format!("{:?} is not a point geometry", vals[1])))?;
                    let r = numeric(&vals[2]).ok_or_else(|| type_err(format!("radius {:?} is not numeric", vals[2])))?;
                    Value::Bool(geo::st_intersects(&g, &c, r)?)
                }
            }
        }
    })
}

fn numeric(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => Some(*n),
        Value::Term(Term::Literal(lit)) => {
            let dt = lit.datatype().map(Iri::as_str)?;
            if vocab::is_numeric_datatype(dt) {
                lit.lexical().trim().parse().ok()
            } else {
                None
            }
        }
        _ => None,
    }
}

fn point(v: &Value) -> Option<GeoPoint> {
    match v {
        Value::Point(p) => Some(*p),
        Value::Term(Term::Literal(lit)) => GeoPoint::from_wkt(lit.lexical()),
        _ => None,
    }
}

fn compare(op: CompareOp, l: &Value, r: &Value) -> Option<bool> {
    use std::cmp::Ordering;
    let ord: Option<Ordering> = match (numeric(l), numeric(r)) {
        (Some(a), Some(b)) => a.partial_cmp(&b),
        _ => match (l, r) {
            (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
            (Value::Term(a), Value::Term(b)) => match (a, b) {
                (Term::Literal(x), Term::Literal(y))
                    if x.datatype().is_none() && y.datatype().is_none() && x.language() == y.language() =>
                {
                    Some(x.lexical().cmp(y.lexical()))
                }
                _ => {
                    // Only (in)equality is defined for other terms.
                    return match op {
                        CompareOp::Eq => Some(a == b),
                        CompareOp::Ne => Some(a != b),
                        _ => None,
                    };
                }
            },
            _ => return None,
        },
    };
    // NaN never arises from parsed literals; treat it as incomparable.
    let ord = ord?;
    Some(match op {
        CompareOp::Lt => ord == Ordering::Less,
        CompareOp::Le => ord != Ordering::Greater,
        CompareOp::Eq => ord == Ordering::Equal,
        CompareOp::Ge => ord != Ordering::Less,
        CompareOp::Gt => ord == Ordering::Greater,
        CompareOp::Ne => ord != Ordering::Equal,
    })
}
