//! In-memory triple store partitioned into named graphs.
//!
//! Terms are interned into a per-store dictionary and every graph keeps three
//! permutation indexes (subject-, predicate- and object-leading) so that any
//! pattern with at least one bound position is answered by a range scan.
//! Readers share a `RwLock`; a single writer updates all three indexes under
//! the same guard, so an insert is observed atomically.

mod snapshot;
mod term;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::RangeInclusive;
use std::path::Path;
use std::sync::{Mutex, RwLock};

pub use snapshot::{parse_quad_line, read_snapshot, write_snapshot};
pub(crate) use snapshot::unquote as snapshot_unquote;
pub use term::{GraphId, Iri, Literal, Term, Triple, DEFAULT_GRAPH};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid IRI `{term}`: {reason}")]
    InvalidIri { term: String, reason: &'static str },
    #[error("invalid term `{term}`: {reason}")]
    InvalidTerm { term: String, reason: &'static str },
    #[error("snapshot line {line}: {message}")]
    Load { line: usize, message: String },
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A triple pattern; `None` positions match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Pattern {
    pub subject: Option<Term>,
    pub predicate: Option<Iri>,
    pub object: Option<Term>,
}

impl Pattern {
    pub fn any() -> Self {
        Pattern::default()
    }

    pub fn new(subject: Option<Term>, predicate: Option<Iri>, object: Option<Term>) -> Self {
        Pattern {
            subject,
            predicate,
            object,
        }
    }

    pub fn matches(&self, triple: &Triple) -> bool {
        self.subject.as_ref().is_none_or(|s| *s == triple.subject)
            && self.predicate.as_ref().is_none_or(|p| *p == triple.predicate)
            && self.object.as_ref().is_none_or(|o| *o == triple.object)
    }
}

/// Non-fatal events surfaced by read operations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    UnknownGraph(GraphId),
}

type Key = [u32; 3];

#[derive(Default)]
struct GraphIndex {
    spo: BTreeSet<Key>,
    pos: BTreeSet<Key>,
    osp: BTreeSet<Key>,
}

impl GraphIndex {
    fn insert(&mut self, [s, p, o]: Key) -> bool {
        if !self.spo.insert([s, p, o]) {
            return false;
        }
        self.pos.insert([p, o, s]);
        self.osp.insert([o, s, p]);
        true
    }

    fn remove(&mut self, [s, p, o]: Key) -> bool {
        if !self.spo.remove(&[s, p, o]) {
            return false;
        }
        self.pos.remove(&[p, o, s]);
        self.osp.remove(&[o, s, p]);
        true
    }

    fn len(&self) -> usize {
        self.spo.len()
    }
}

fn prefix_range(a: u32, b: Option<u32>) -> RangeInclusive<Key> {
    match b {
        Some(b) => [a, b, 0]..=[a, b, u32::MAX],
        None => [a, 0, 0]..=[a, u32::MAX, u32::MAX],
    }
}

#[derive(Default)]
struct Dictionary {
    ids: HashMap<Term, u32>,
    terms: Vec<Term>,
}

impl Dictionary {
    fn intern(&mut self, term: &Term) -> u32 {
        if let Some(&id) = self.ids.get(term) {
            return id;
        }
        let id = u32::try_from(self.terms.len()).expect("term dictionary overflow");
        self.terms.push(term.clone());
        self.ids.insert(term.clone(), id);
        id
    }

    fn lookup(&self, term: &Term) -> Option<u32> {
        self.ids.get(term).copied()
    }

    fn term(&self, id: u32) -> &Term {
        &self.terms[id as usize]
    }
}

#[derive(Default)]
struct Inner {
    dict: Dictionary,
    graphs: BTreeMap<GraphId, GraphIndex>,
}

impl Inner {
    fn decode(&self, [s, p, o]: Key) -> Triple {
        let predicate = match self.dict.term(p) {
            Term::Iri(iri) => iri.clone(),
            other => unreachable!("predicate interned as {other:?}"),
        };
        Triple {
            subject: self.dict.term(s).clone(),
            predicate,
            object: self.dict.term(o).clone(),
        }
    }
}

/// Thread-safe triple store. Share it behind an `Arc`.
#[derive(Default)]
pub struct Store {
    inner: RwLock<Inner>,
    diagnostics: Mutex<Vec<Diagnostic>>,
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    /// Inserts `triples` into `graph`, creating the graph if needed. Returns
    /// the number of triples that were not already present.
    pub fn insert(&self, graph: &GraphId, triples: &[Triple]) -> Result<usize, StoreError> {
        for t in triples {
            if t.subject.is_literal() {
                return Err(StoreError::InvalidTerm {
                    term: t.subject.to_string(),
                    reason: "literal in subject position",
                });
            }
        }
        let mut inner = self.inner.write().expect("store lock poisoned");
        let Inner { dict, graphs } = &mut *inner;
        let mut keys = Vec::with_capacity(triples.len());
        for t in triples {
            let s = dict.intern(&t.subject);
            let p = dict.intern(&Term::Iri(t.predicate.clone()));
            let o = dict.intern(&t.object);
            keys.push([s, p, o]);
        }
        let index = graphs.entry(graph.clone()).or_default();
        Ok(keys.into_iter().filter(|k| index.insert(*k)).count())
    }

    /// Removes `triples` from `graph`. Returns how many were present.
    /// Interned terms are kept; the dictionary only grows.
    pub fn remove(&self, graph: &GraphId, triples: &[Triple]) -> usize {
        let mut inner = self.inner.write().expect("store lock poisoned");
        let Inner { dict, graphs } = &mut *inner;
        let Some(index) = graphs.get_mut(graph) else {
            return 0;
        };
        triples
            .iter()
            .filter_map(|t| {
                Some([
                    dict.lookup(&t.subject)?,
                    dict.lookup(&Term::Iri(t.predicate.clone()))?,
                    dict.lookup(&t.object)?,
                ])
            })
            .filter(|k| index.remove(*k))
            .count()
    }

    /// Returns every triple of `graph` matching the bound positions of
    /// `pattern`, in index order. An unknown graph yields an empty result
    /// and a [`Diagnostic::UnknownGraph`] entry.
    pub fn match_pattern(&self, graph: &GraphId, pattern: &Pattern) -> Vec<Triple> {
        let inner = self.inner.read().expect("store lock poisoned");
        let Some(index) = inner.graphs.get(graph) else {
            drop(inner);
            if !graph.is_default() {
                self.note(Diagnostic::UnknownGraph(graph.clone()));
            }
            return Vec::new();
        };
        let lookup = |t: &Term| inner.dict.lookup(t);
        let s = pattern.subject.as_ref().map(lookup);
        let p = pattern
            .predicate
            .as_ref()
            .map(|p| inner.dict.lookup(&Term::Iri(p.clone())));
        let o = pattern.object.as_ref().map(lookup);
        // A bound term that was never interned cannot match.
        if matches!(s, Some(None)) || matches!(p, Some(None)) || matches!(o, Some(None)) {
            return Vec::new();
        }
        let (s, p, o) = (s.flatten(), p.flatten(), o.flatten());
        match (s, p, o) {
            (Some(s), _, Some(o)) if p.is_none() => index
                .osp
                .range(prefix_range(o, Some(s)))
                .map(|&[o, s, p]| inner.decode([s, p, o]))
                .collect(),
            (Some(s), p, o) => index
                .spo
                .range(prefix_range(s, p))
                .filter(|k| o.is_none_or(|o| k[2] == o))
                .map(|&k| inner.decode(k))
                .collect(),
            (None, Some(p), o) => index
                .pos
                .range(prefix_range(p, o))
                .map(|&[p, o, s]| inner.decode([s, p, o]))
                .collect(),
            (None, None, Some(o)) => index
                .osp
                .range(prefix_range(o, None))
                .map(|&[o, s, p]| inner.decode([s, p, o]))
                .collect(),
            (None, None, None) => index.spo.iter().map(|&k| inner.decode(k)).collect(),
        }
    }

    /// Convenience wrapper for a fully-positional match.
    pub fn find(
        &self,
        graph: &GraphId,
        subject: Option<&Term>,
        predicate: Option<&Iri>,
        object: Option<&Term>,
    ) -> Vec<Triple> {
        self.match_pattern(
            graph,
            &Pattern::new(subject.cloned(), predicate.cloned(), object.cloned()),
        )
    }

    pub fn count(&self, graph: &GraphId) -> usize {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.graphs.get(graph).map_or(0, GraphIndex::len)
    }

    pub fn total(&self) -> usize {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.graphs.values().map(GraphIndex::len).sum()
    }

    pub fn graphs(&self) -> Vec<GraphId> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.graphs.keys().cloned().collect()
    }

    pub fn contains_graph(&self, graph: &GraphId) -> bool {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.graphs.contains_key(graph)
    }

    /// All quads in the store, one `(graph, triple)` pair per entry.
    pub fn quads(&self) -> Vec<(GraphId, Triple)> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner
            .graphs
            .iter()
            .flat_map(|(g, idx)| idx.spo.iter().map(|&k| (g.clone(), inner.decode(k))))
            .collect()
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        self.diagnostics.lock().expect("diagnostics poisoned").clone()
    }

    pub fn take_diagnostics(&self) -> Vec<Diagnostic> {
        std::mem::take(&mut *self.diagnostics.lock().expect("diagnostics poisoned"))
    }

    fn note(&self, diag: Diagnostic) {
        let mut log = self.diagnostics.lock().expect("diagnostics poisoned");
        // Bounded: one entry per distinct graph is enough to act on.
        if !log.contains(&diag) {
            log.push(diag);
        }
    }

    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        write_snapshot(self, &mut out)?;
        std::io::Write::flush(&mut out)?;
        Ok(())
    }

    pub fn restore(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let file = std::fs::File::open(path)?;
        let store = Store::new();
        read_snapshot(&store, std::io::BufReader::new(file))?;
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn t(s: &str, p: &str, o: &str) -> Triple {
        Triple::new(Term::iri(s).unwrap(), iri(p), Term::iri(o).unwrap()).unwrap()
    }

    fn graph() -> GraphId {
        GraphId::parse("urn:g").unwrap()
    }

    #[test]
    fn empty_insert_is_zero() {
        let store = Store::new();
        assert_eq!(store.insert(&graph(), &[]).unwrap(), 0);
    }

    #[test]
    fn insert_is_idempotent() {
        let store = Store::new();
        let triple = t("urn:s", "urn:p", "urn:o");
        assert_eq!(store.insert(&graph(), std::slice::from_ref(&triple)).unwrap(), 1);
        assert_eq!(store.insert(&graph(), std::slice::from_ref(&triple)).unwrap(), 0);
        assert_eq!(store.insert(&graph(), &[triple.clone(), triple]).unwrap(), 0);
        assert_eq!(store.count(&graph()), 1);
    }

    #[test]
    fn duplicates_within_one_batch() {
        let store = Store::new();
        let triple = t("urn:s", "urn:p", "urn:o");
        assert_eq!(store.insert(&graph(), &[triple.clone(), triple]).unwrap(), 1);
    }

    #[test]
    fn remove_clears_every_index() {
        let store = Store::new();
        let a = t("urn:s", "urn:p", "urn:o");
        let b = t("urn:s", "urn:p", "urn:o2");
        store.insert(&graph(), &[a.clone(), b.clone()]).unwrap();
        assert_eq!(store.remove(&graph(), &[a.clone(), t("urn:q", "urn:p", "urn:o")]), 1);
        assert_eq!(store.remove(&graph(), std::slice::from_ref(&a)), 0);
        let o = Term::iri("urn:o").unwrap();
        assert!(store.find(&graph(), None, None, Some(&o)).is_empty());
        assert!(store.find(&graph(), None, Some(&iri("urn:p")), Some(&o)).is_empty());
        assert_eq!(store.match_pattern(&graph(), &Pattern::any()), vec![b]);
    }

    #[test]
    fn match_on_empty_store() {
        let store = Store::new();
        assert!(store.match_pattern(&GraphId::default_graph(), &Pattern::any()).is_empty());
        assert!(store.diagnostics().is_empty());
    }

    #[test]
    fn subject_bound_match() {
        let store = Store::new();
        let triple = t("urn:s", "urn:p", "urn:o");
        store.insert(&graph(), &[triple.clone(), t("urn:x", "urn:p", "urn:o")]).unwrap();
        let hits = store.find(&graph(), Some(&Term::iri("urn:s").unwrap()), None, None);
        assert_eq!(hits, vec![triple]);
    }

    #[test]
    fn unknown_graph_is_flagged() {
        let store = Store::new();
        let g = GraphId::parse("urn:missing").unwrap();
        assert!(store.match_pattern(&g, &Pattern::any()).is_empty());
        assert_eq!(store.diagnostics(), vec![Diagnostic::UnknownGraph(g)]);
    }

    #[test]
    fn count_tracks_distinct() {
        let store = Store::new();
        store.insert(&graph(), &[t("urn:a", "urn:p", "urn:o")]).unwrap();
        store.insert(&graph(), &[t("urn:b", "urn:p", "urn:o")]).unwrap();
        store.insert(&graph(), &[t("urn:c", "urn:p", "urn:o")]).unwrap();
        assert_eq!(store.count(&graph()), 3);
        assert_eq!(store.count(&GraphId::default_graph()), 0);
    }

    #[test]
    fn graphs_are_isolated() {
        let store = Store::new();
        let other = GraphId::parse("urn:other").unwrap();
        store.insert(&graph(), &[t("urn:a", "urn:p", "urn:o")]).unwrap();
        assert!(store.match_pattern(&other, &Pattern::any()).is_empty());
        assert_eq!(store.match_pattern(&graph(), &Pattern::any()).len(), 1);
    }

    fn random_store(rng: &mut ChaCha8Rng, n: usize) -> (Store, Vec<Triple>) {
        let store = Store::new();
        let mut all = Vec::new();
        for _ in 0..n {
            let s = Term::iri(format!("urn:s{}", rng.random_range(0..40))).unwrap();
            let p = iri(&format!("urn:p{}", rng.random_range(0..6)));
            let o = if rng.random_bool(0.5) {
                Term::iri(format!("urn:s{}", rng.random_range(0..40))).unwrap()
            } else {
                Term::literal(format!("{}", rng.random_range(0..30)))
            };
            all.push(Triple::new(s, p, o).unwrap());
        }
        store.insert(&graph(), &all).unwrap();
        all.sort();
        all.dedup();
        (store, all)
    }

    #[test]
    fn index_match_equals_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (store, all) = random_store(&mut rng, 1_000);
        for _ in 0..100 {
            let probe = &all[rng.random_range(0..all.len())];
            let other = &all[rng.random_range(0..all.len())];
            // Mix bound values from two triples so some patterns miss.
            let pattern = Pattern::new(
                rng.random_bool(0.5).then(|| probe.subject.clone()),
                rng.random_bool(0.5).then(|| other.predicate.clone()),
                rng.random_bool(0.5).then(|| probe.object.clone()),
            );
            let mut got = store.match_pattern(&graph(), &pattern);
            let mut want: Vec<Triple> = all.iter().filter(|t| pattern.matches(t)).cloned().collect();
            got.sort();
            want.sort();
            assert_eq!(got, want, "pattern {pattern:?}");
        }
    }

    #[test]
    fn match_order_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (store, _) = random_store(&mut rng, 200);
        let a = store.match_pattern(&graph(), &Pattern::any());
        let b = store.match_pattern(&graph(), &Pattern::any());
        assert_eq!(a, b);
    }
}
