//! Quad-per-line snapshot format:
//! `<subject> <predicate> <object> <graph> .` with `"lex"^^<dt>` / `"lex"@lang`
//! literal quoting. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{GraphId, Iri, Literal, Store, StoreError, Term, Triple};

/// Writes every quad of `store`, sorted, one per line.
pub fn write_snapshot(store: &Store, out: &mut impl Write) -> Result<(), StoreError> {
    let mut lines: Vec<String> = store
        .quads()
        .into_iter()
        .map(|(g, t)| format!("{t} {g} ."))
        .collect();
    lines.sort_unstable();
    for line in lines {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Loads quads into `store`. Fails on the first malformed line, reporting its
/// 1-based line number; nothing is inserted in that case.
pub fn read_snapshot(store: &Store, input: impl BufRead) -> Result<usize, StoreError> {
    let mut by_graph: BTreeMap<GraphId, Vec<Triple>> = BTreeMap::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| StoreError::Load {
            line: line_no,
            message: e.to_string(),
        })?;
        match parse_quad_line(&line) {
            Ok(Some((graph, triple))) => by_graph.entry(graph).or_default().push(triple),
            Ok(None) => {}
            Err(message) => return Err(StoreError::Load { line: line_no, message }),
        }
    }
    let mut inserted = 0;
    for (graph, triples) in by_graph {
        inserted += store.insert(&graph, &triples)?;
    }
    Ok(inserted)
}

/// Parses one snapshot line. `Ok(None)` for blank and comment lines.
pub fn parse_quad_line(line: &str) -> Result<Option<(GraphId, Triple)>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let mut cur = Cursor { rest: trimmed };
    let subject = cur.term()?;
    let predicate = match cur.term()? {
        Term::Iri(iri) => iri,
        other => return Err(format!("predicate must be an IRI, found {other}")),
    };
    let object = cur.term()?;
    let graph = match cur.term()? {
        Term::Iri(iri) => GraphId::new(iri),
        other => return Err(format!("graph must be an IRI, found {other}")),
    };
    cur.skip_ws();
    if cur.rest != "." {
        return Err(format!("expected terminating `.`, found `{}`", cur.rest));
    }
    let triple = Triple::new(subject, predicate, object).map_err(|e| e.to_string())?;
    Ok(Some((graph, triple)))
}

struct Cursor<'a> {
    rest: &'a str,
}

impl Cursor<'_> {
    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn term(&mut self) -> Result<Term, String> {
        self.skip_ws();
        if let Some(after) = self.rest.strip_prefix('<') {
            let end = after.find('>').ok_or("unterminated IRI")?;
            let iri = Iri::new(&after[..end]).map_err(|e| e.to_string())?;
            self.rest = &after[end + 1..];
            Ok(Term::Iri(iri))
        } else if let Some(after) = self.rest.strip_prefix("_:") {
            let end = after.find(char::is_whitespace).unwrap_or(after.len());
            let term = Term::blank(&after[..end]).map_err(|e| e.to_string())?;
            self.rest = &after[end..];
            Ok(term)
        } else if self.rest.starts_with('"') {
            self.literal()
        } else {
            Err(format!(
                "expected a term, found `{}`",
                self.rest.chars().take(16).collect::<String>()
            ))
        }
    }

    fn literal(&mut self) -> Result<Term, String> {
        let (lexical, consumed) = unquote(self.rest)?;
        self.rest = &self.rest[consumed..];
        if let Some(after) = self.rest.strip_prefix("^^<") {
            let end = after.find('>').ok_or("unterminated datatype IRI")?;
            let dt = Iri::new(&after[..end]).map_err(|e| e.to_string())?;
            self.rest = &after[end + 1..];
            Ok(Term::Literal(Literal::typed(lexical, dt)))
        } else if let Some(after) = self.rest.strip_prefix('@') {
            let end = after.find(char::is_whitespace).unwrap_or(after.len());
            let lit = Literal::lang(lexical, &after[..end]).map_err(|e| e.to_string())?;
            self.rest = &after[end..];
            Ok(Term::Literal(lit))
        } else {
            Ok(Term::Literal(Literal::plain(lexical)))
        }
    }
}

/// Decodes a double-quoted string starting at `input[0]`. Returns the decoded
/// text and the number of bytes consumed, including both quotes.
pub(crate) fn unquote(input: &str) -> Result<(String, usize), String> {
    let mut chars = input.char_indices();
    match chars.next() {
        Some((_, '"')) => {}
        _ => return Err("expected `\"`".into()),
    }
    let mut out = String::new();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => return Ok((out, i + 1)),
            '\\' => {
                let (_, esc) = chars.next().ok_or("dangling escape")?;
                match esc {
                    '"' => out.push('"'),
                    '\\' => out.push('\\'),
                    'n' => out.push('\n'),
                    'r' => out.push('\r'),
                    't' => out.push('\t'),
                    'u' | 'U' => {
                        let width = if esc == 'u' { 4 } else { 8 };
                        let mut hex = String::with_capacity(width);
                        for _ in 0..width {
                            hex.push(chars.next().ok_or("truncated unicode escape")?.1);
                        }
                        let code = u32::from_str_radix(&hex, 16)
                            .map_err(|_| format!("bad unicode escape `{hex}`"))?;
                        out.push(char::from_u32(code).ok_or("invalid code point")?);
                    }
                    other => return Err(format!("unknown escape `\\{other}`")),
                }
            }
            c => out.push(c),
        }
    }
    Err("unterminated literal".into())
}
