//! Recursive-descent parser for the supported SPARQL subset.
//!
//! ```text
//! query    := SELECT var+ [FROM iriref] [WHERE] '{' element* '}'
//! element  := (triple | FILTER '(' expr ')') ['.']
//! triple   := subject predicate object
//! expr     := and ('||' and)*
//! and      := unary ('&&' unary)*
//! unary    := '!' unary | rel
//! rel      := primary [relop primary]
//! primary  := '(' expr ')' | call | var | number | literal | iri | true | false
//! call     := (iriref | pname) '(' [expr (',' expr)*] ')'
//! ```
//! Prefixed names are limited to the hardwired `geo:` and `bif:` namespaces.

use crate::store::{GraphId, Iri, Literal, Term};
use crate::vocab;

use super::ast::{Builtin, CompareOp, FilterExpr, PatternTerm, QueryAst, TriplePattern, Variable};
use super::ParseError;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Var(String),
    IriRef(String),
    PName(String, String),
    Str(String),
    LangTag(String),
    Number(String),
    Punct(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Var(v) => format!("variable `?{v}`"),
            Tok::IriRef(i) => format!("IRI `<{i}>`"),
            Tok::PName(p, l) => format!("prefixed name `{p}:{l}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::LangTag(t) => format!("language tag `@{t}`"),
            Tok::Number(n) => format!("number `{n}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCT: &[&str] = &["^^", "<=", ">=", "!=", "&&", "||", "{", "}", "(", ")", ".", ",", "<", ">", "=", "!"];

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize, chars: &[char]| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1, &chars);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let err = |msg: String| ParseError::Syntax {
            line: start_line,
            col: start_col,
            expected: vec![],
            found: msg,
        };
        let (tok, len) = if c == '?' || c == '$' {
            let n = chars[i + 1..]
                .iter()
                .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                .count();
            if n == 0 {
                return Err(err("`?` without a variable name".into()));
            }
            (Tok::Var(chars[i + 1..i + 1 + n].iter().collect()), n + 1)
        } else if c == '<' && iri_ref_len(&chars[i..]).is_some() {
            let n = iri_ref_len(&chars[i..]).unwrap_or(0);
            (Tok::IriRef(chars[i + 1..i + n - 1].iter().collect()), n)
        } else if c == '"' {
            let rest: String = chars[i..].iter().collect();
            let (value, used_bytes) =
                crate::store::snapshot_unquote(&rest).map_err(|m| err(format!("bad string literal: {m}")))?;
            let used = rest[..used_bytes].chars().count();
            (Tok::Str(value), used)
        } else if c == '@' {
            let n = chars[i + 1..]
                .iter()
                .take_while(|c| c.is_ascii_alphanumeric() || **c == '-')
                .count();
            (Tok::LangTag(chars[i + 1..i + 1 + n].iter().collect()), n + 1)
        } else if c.is_ascii_digit()
            || ((c == '-' || c == '+' || c == '.')
                && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.')
                && (c != '.' || chars.get(i + 1).is_some_and(char::is_ascii_digit)))
        {
            let n = number_len(&chars[i..]);
            (Tok::Number(chars[i..i + n].iter().collect()), n)
        } else if c.is_ascii_alphabetic() || c == '_' {
            let n = chars[i..]
                .iter()
                .take_while(|c| c.is_ascii_alphanumeric() || **c == '_' || **c == '-')
                .count();
            let word: String = chars[i..i + n].iter().collect();
            if chars.get(i + n) == Some(&':') {
                let m = chars[i + n + 1..]
                    .iter()
                    .take_while(|c| c.is_ascii_alphanumeric() || **c == '_' || **c == '-')
                    .count();
                let local: String = chars[i + n + 1..i + n + 1 + m].iter().collect();
                (Tok::PName(word, local), n + 1 + m)
            } else {
                (Tok::Word(word), n)
            }
        } else if let Some(p) = PUNCT.iter().find(|p| {
            let pc: Vec<char> = p.chars().collect();
            chars[i..].starts_with(&pc)
        }) {
            (Tok::Punct(p), p.chars().count())
        } else {
            return Err(err(format!("unexpected character `{c}`")));
        };
        out.push(Spanned {
            tok,
            line: start_line,
            col: start_col,
        });
        advance(&mut i, &mut line, &mut col, len, &chars);
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

/// Length of an `<iri>` token at the start of `chars`, including brackets.
fn iri_ref_len(chars: &[char]) -> Option<usize> {
    let mut n = 1;
    while let Some(&c) = chars.get(n) {
        match c {
            '>' => return (n > 1).then_some(n + 1),
            c if c.is_whitespace() || matches!(c, '<' | '"' | '{' | '}' | '|' | '^' | '`' | '\\') => {
                return None
            }
            _ => n += 1,
        }
    }
    None
}

fn number_len(chars: &[char]) -> usize {
    let mut n = 0;
    if matches!(chars.first(), Some('-' | '+')) {
        n += 1;
    }
    n += chars[n..].iter().take_while(|c| c.is_ascii_digit()).count();
    if chars.get(n) == Some(&'.') && chars.get(n + 1).is_some_and(char::is_ascii_digit) {
        n += 1;
        n += chars[n..].iter().take_while(|c| c.is_ascii_digit()).count();
    }
    if matches!(chars.get(n), Some('e' | 'E')) {
        let mut m = n + 1;
        if matches!(chars.get(m), Some('-' | '+')) {
            m += 1;
        }
        let digits = chars[m..].iter().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 {
            n = m + digits;
        }
    }
    n
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

/// Parses query text into an AST.
pub fn parse(text: &str) -> Result<QueryAst, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let ast = p.query()?;
    validate(&ast)?;
    Ok(ast)
}

fn validate(ast: &QueryAst) -> Result<(), ParseError> {
    for v in &ast.select {
        if !ast.patterns.iter().any(|p| p.variables().any(|pv| pv == v)) {
            return Err(ParseError::UnboundSelect(v.to_string()));
        }
    }
    Ok(())
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        let at = &self.toks[self.pos];
        Err(ParseError::Syntax {
            line: at.line,
            col: at.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: at.tok.describe(),
        })
    }

    fn at_word(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn at_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn expect_word(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_word(kw) {
            self.bump();
            Ok(())
        } else {
            self.fail(&[kw])
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.at_punct(p) {
            self.bump();
            Ok(())
        } else {
            self.fail(&[&format!("`{p}`")])
        }
    }

    fn query(&mut self) -> Result<QueryAst, ParseError> {
        self.expect_word("SELECT")?;
        let mut select = Vec::new();
        while let Tok::Var(name) = self.peek().clone() {
            self.bump();
            select.push(self.variable(name)?);
        }
        if select.is_empty() {
            return self.fail(&["variable"]);
        }
        let mut from = None;
        if self.at_word("FROM") {
            self.bump();
            match self.bump() {
                Tok::IriRef(iri) => from = Some(GraphId::new(self.iri(&iri)?)),
                _ => {
                    self.pos -= 1;
                    return self.fail(&["graph IRI"]);
                }
            }
        }
        if self.at_word("WHERE") {
            self.bump();
        }
        self.expect_punct("{")?;
        let (mut patterns, mut filters) = (Vec::new(), Vec::new());
        loop {
            if self.at_punct("}") {
                self.bump();
                break;
            }
            if self.at_word("FILTER") {
                self.bump();
                self.expect_punct("(")?;
                filters.push(self.expr()?);
                self.expect_punct(")")?;
            } else {
                patterns.push(self.triple()?);
            }
            if self.at_punct(".") {
                self.bump();
            }
        }
        if *self.peek() != Tok::Eof {
            return self.fail(&["end of input"]);
        }
        Ok(QueryAst {
            select,
            from,
            patterns,
            filters,
        })
    }

    fn variable(&self, name: String) -> Result<Variable, ParseError> {
        Variable::new(name).ok_or_else(|| self.fail::<()>(&["variable"]).unwrap_err())
    }

    fn iri(&self, text: &str) -> Result<Iri, ParseError> {
        Iri::new(text).map_err(|e| {
            let at = &self.toks[self.pos.saturating_sub(1)];
            ParseError::Syntax {
                line: at.line,
                col: at.col,
                expected: vec!["valid IRI".into()],
                found: e.to_string(),
            }
        })
    }

    fn expand(&self, prefix: &str, local: &str) -> Result<Iri, ParseError> {
        let ns = match prefix {
            "geo" => vocab::GEO_NS,
            "bif" => vocab::BIF_NS,
            _ => {
                let at = &self.toks[self.pos.saturating_sub(1)];
                return Err(ParseError::Syntax {
                    line: at.line,
                    col: at.col,
                    expected: vec!["`geo:` or `bif:` prefix".into()],
                    found: format!("unknown prefix `{prefix}:`"),
                });
            }
        };
        self.iri(&format!("{ns}{local}"))
    }

    /// A prefixed name, or a blank node label when the prefix is `_`.
    fn named(&self, prefix: &str, local: &str) -> Result<Term, ParseError> {
        if prefix == "_" {
            return Term::blank(local).map_err(|e| {
                let at = &self.toks[self.pos.saturating_sub(1)];
                ParseError::Syntax {
                    line: at.line,
                    col: at.col,
                    expected: vec!["blank node label".into()],
                    found: e.to_string(),
                }
            });
        }
        self.expand(prefix, local).map(Term::Iri)
    }

    fn triple(&mut self) -> Result<TriplePattern, ParseError> {
        let subject = match self.peek().clone() {
            Tok::Var(v) => {
                self.bump();
                PatternTerm::Var(self.variable(v)?)
            }
            Tok::IriRef(i) => {
                self.bump();
                PatternTerm::Term(Term::Iri(self.iri(&i)?))
            }
            Tok::PName(p, l) => {
                self.bump();
                PatternTerm::Term(self.named(&p, &l)?)
            }
            _ => return self.fail(&["variable", "IRI", "`FILTER`", "`}`"]),
        };
        let predicate = match self.peek().clone() {
            Tok::Var(v) => {
                self.bump();
                PatternTerm::Var(self.variable(v)?)
            }
            Tok::IriRef(i) => {
                self.bump();
                PatternTerm::Term(Term::Iri(self.iri(&i)?))
            }
            Tok::PName(p, l) => {
                self.bump();
                PatternTerm::Term(Term::Iri(self.expand(&p, &l)?))
            }
            Tok::Word(w) if w == "a" => {
                self.bump();
                PatternTerm::Term(Term::Iri(self.iri(vocab::RDF_TYPE)?))
            }
            _ => return self.fail(&["predicate (variable or IRI)"]),
        };
        let object = match self.peek().clone() {
            Tok::Var(v) => {
                self.bump();
                PatternTerm::Var(self.variable(v)?)
            }
            Tok::IriRef(i) => {
                self.bump();
                PatternTerm::Term(Term::Iri(self.iri(&i)?))
            }
            Tok::PName(p, l) => {
                self.bump();
                PatternTerm::Term(self.named(&p, &l)?)
            }
            Tok::Str(_) => PatternTerm::Term(self.literal()?),
            Tok::Number(n) => {
                self.bump();
                PatternTerm::Term(numeric_literal(&n))
            }
            _ => return self.fail(&["object (variable, IRI or literal)"]),
        };
        Ok(TriplePattern {
            subject,
            predicate,
            object,
        })
    }

    fn literal(&mut self) -> Result<Term, ParseError> {
        let Tok::Str(lex) = self.bump() else {
            unreachable!("literal() called off a string token")
        };
        if self.at_punct("^^") {
            self.bump();
            let dt = match self.bump() {
                Tok::IriRef(i) => self.iri(&i)?,
                Tok::PName(p, l) => self.expand(&p, &l)?,
                _ => {
                    self.pos -= 1;
                    return self.fail(&["datatype IRI"]);
                }
            };
            return Ok(Term::Literal(Literal::typed(lex, dt)));
        }
        if let Tok::LangTag(tag) = self.peek().clone() {
            self.bump();
            return Literal::lang(lex, &tag).map(Term::Literal).map_err(|e| {
                let at = &self.toks[self.pos - 1];
                ParseError::Syntax {
                    line: at.line,
                    col: at.col,
                    expected: vec!["language tag".into()],
                    found: e.to_string(),
                }
            });
        }
        Ok(Term::literal(lex))
    }

    fn expr(&mut self) -> Result<FilterExpr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.at_punct("||") {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = FilterExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<FilterExpr, ParseError> {
        let mut lhs = self.unary()?;
        while self.at_punct("&&") {
            self.bump();
            let rhs = self.unary()?;
            lhs = FilterExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<FilterExpr, ParseError> {
        if self.at_punct("!") {
            self.bump();
            return Ok(FilterExpr::Not(Box::new(self.unary()?)));
        }
        self.relational()
    }

    fn relational(&mut self) -> Result<FilterExpr, ParseError> {
        let lhs = self.primary()?;
        let op = match self.peek() {
            Tok::Punct("<") => CompareOp::Lt,
            Tok::Punct("<=") => CompareOp::Le,
            Tok::Punct("=") => CompareOp::Eq,
            Tok::Punct(">=") => CompareOp::Ge,
            Tok::Punct(">") => CompareOp::Gt,
            Tok::Punct("!=") => CompareOp::Ne,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.primary()?;
        Ok(FilterExpr::Compare {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }

    fn primary(&mut self) -> Result<FilterExpr, ParseError> {
        match self.peek().clone() {
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Var(v) => {
                self.bump();
                Ok(FilterExpr::Var(self.variable(v)?))
            }
            Tok::Number(n) => {
                self.bump();
                match n.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(FilterExpr::Number(x)),
                    _ => {
                        self.pos -= 1;
                        self.fail(&["finite number"])
                    }
                }
            }
            Tok::Str(_) => Ok(FilterExpr::Constant(self.literal()?)),
            Tok::Word(w) if w == "true" || w == "false" => {
                self.bump();
                Ok(FilterExpr::Bool(w == "true"))
            }
            Tok::IriRef(_) | Tok::PName(..) => {
                let (line, col) = (self.toks[self.pos].line, self.toks[self.pos].col);
                let iri = match self.bump() {
                    Tok::IriRef(i) => self.iri(&i)?,
                    Tok::PName(p, l) => self.expand(&p, &l)?,
                    _ => unreachable!(),
                };
                if !self.at_punct("(") {
                    return Ok(FilterExpr::Constant(Term::Iri(iri)));
                }
                let function = Builtin::lookup(iri.as_str()).ok_or_else(|| ParseError::UnknownFunction {
                    name: iri.to_string(),
                    line,
                    col,
                })?;
                self.bump();
                let mut args = Vec::new();
                if !self.at_punct(")") {
                    args.push(self.expr()?);
                    while self.at_punct(",") {
                        self.bump();
                        args.push(self.expr()?);
                    }
                }
                self.expect_punct(")")?;
                if args.len() != function.arity() {
                    return Err(ParseError::Arity {
                        name: function.iri().to_string(),
                        expected: function.arity(),
                        found: args.len(),
                        line,
                        col,
                    });
                }
                Ok(FilterExpr::Call { function, args })
            }
            _ => self.fail(&["expression"]),
        }
    }
}

fn numeric_literal(text: &str) -> Term {
    let dt = if text.contains(['e', 'E']) {
        vocab::XSD_DOUBLE
    } else if text.contains('.') {
        vocab::XSD_DECIMAL
    } else {
        vocab::XSD_INTEGER
    };
    Term::Literal(Literal::typed(text, Iri::new(dt).expect("xsd IRI")))
}
