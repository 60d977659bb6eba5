use std::fmt;

use crate::store::{GraphId, Term};
use crate::vocab;

/// A query variable, stored without its leading `?`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variable(String);

impl Variable {
    /// `name` must match `[A-Za-z0-9_]+`.
    pub fn new(name: impl Into<String>) -> Option<Self> {
        let name = name.into();
        let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        ok.then_some(Variable(name))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PatternTerm {
    Var(Variable),
    Term(Term),
}

impl PatternTerm {
    pub fn as_var(&self) -> Option<&Variable> {
        match self {
            PatternTerm::Var(v) => Some(v),
            PatternTerm::Term(_) => None,
        }
    }
}

impl fmt::Display for PatternTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternTerm::Var(v) => v.fmt(f),
            PatternTerm::Term(t) => t.fmt(f),
        }
    }
}

/// One triple pattern. The predicate is either a variable or an IRI term.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl TriplePattern {
    pub fn variables(&self) -> impl Iterator<Item = &Variable> {
        [&self.subject, &self.predicate, &self.object]
            .into_iter()
            .filter_map(PatternTerm::as_var)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompareOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
    Ne,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Eq => "=",
            CompareOp::Ge => ">=",
            CompareOp::Gt => ">",
            CompareOp::Ne => "!=",
        }
    }
}

/// Registered filter functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    StIntersects,
    StPoint,
}

impl Builtin {
    pub fn lookup(iri: &str) -> Option<Builtin> {
        match iri.strip_prefix(vocab::BIF_NS)? {
            "st_intersects" => Some(Builtin::StIntersects),
            "st_point" => Some(Builtin::StPoint),
            _ => None,
        }
    }

    pub fn iri(self) -> &'static str {
        match self {
            Builtin::StIntersects => "bif:st_intersects",
            Builtin::StPoint => "bif:st_point",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::StIntersects => 3,
            Builtin::StPoint => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FilterExpr {
    Var(Variable),
    Number(f64),
    Bool(bool),
    Constant(Term),
    Call { function: Builtin, args: Vec<FilterExpr> },
    Compare { op: CompareOp, lhs: Box<FilterExpr>, rhs: Box<FilterExpr> },
    And(Box<FilterExpr>, Box<FilterExpr>),
    Or(Box<FilterExpr>, Box<FilterExpr>),
    Not(Box<FilterExpr>),
}

impl FilterExpr {
    pub fn variables(&self) -> Vec<&Variable> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a Variable>) {
        match self {
            FilterExpr::Var(v) => out.push(v),
            FilterExpr::Number(_) | FilterExpr::Bool(_) | FilterExpr::Constant(_) => {}
            FilterExpr::Call { args, .. } => args.iter().for_each(|a| a.collect_vars(out)),
            FilterExpr::Compare { lhs, rhs, .. } | FilterExpr::And(lhs, rhs) | FilterExpr::Or(lhs, rhs) => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            FilterExpr::Not(e) => e.collect_vars(out),
        }
    }
}

/// Canonical, fully parenthesised rendering; reparses to an equal tree.
impl fmt::Display for FilterExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterExpr::Var(v) => v.fmt(f),
            FilterExpr::Number(n) => write!(f, "{n}"),
            FilterExpr::Bool(b) => write!(f, "{b}"),
            FilterExpr::Constant(t) => t.fmt(f),
            FilterExpr::Call { function, args } => {
                write!(f, "<{}>(", function.iri())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    a.fmt(f)?;
                }
                f.write_str(")")
            }
            FilterExpr::Compare { op, lhs, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            FilterExpr::And(a, b) => write!(f, "({a} && {b})"),
            FilterExpr::Or(a, b) => write!(f, "({a} || {b})"),
            FilterExpr::Not(e) => write!(f, "!{e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryAst {
    pub select: Vec<Variable>,
    pub from: Option<GraphId>,
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<FilterExpr>,
}

impl QueryAst {
    /// The graph patterns are evaluated against.
    pub fn graph(&self) -> GraphId {
        self.from.clone().unwrap_or_else(GraphId::default_graph)
    }

    /// Canonical query text.
    pub fn to_sparql(&self) -> String {
        let mut out = String::from("SELECT");
        for v in &self.select {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
        if let Some(g) = &self.from {
            out.push_str(&format!("FROM {g}\n"));
        }
        out.push_str("WHERE\n{\n");
        for p in &self.patterns {
            out.push_str(&format!("{} {} {} .\n", p.subject, p.predicate, p.object));
        }
        for flt in &self.filters {
            out.push_str(&format!("FILTER ({flt}) .\n"));
        }
        out.push_str("}\n");
        out
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sparql())
    }
}
