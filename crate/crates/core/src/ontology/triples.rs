//! RDF-lite triple store with a `subClassOf` query shape.
//!
//! Only the query form `select ?s WHERE {?s rdfs:subClassOf <class>.
//! FILTER (?s=<iri>)} limit N` is understood. Subclass edges are followed
//! transitively, so a query against a coarse class returns everything below it
//! (tournament → round → hole).

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::RwLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::OntologyError;

pub const RDFS: &str = "http://www.w3.org/2000/01/rdf-schema#";
pub const RDFS_SUBCLASS_OF: &str = "http://www.w3.org/2000/01/rdf-schema#subClassOf";
pub const MASTERS_BASE: &str = "http://masters.ontology.ai/";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "value")]
pub enum Object {
    Iri(String),
    Literal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Object,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: Object) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object,
        }
    }

    pub fn subclass(child: impl Into<String>, parent: impl Into<String>) -> Self {
        Self::new(child, "rdfs:subClassOf", Object::Iri(parent.into()))
    }
}

/// Prefix → namespace map used to expand compact IRIs like `hole:HOLE`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prefixes(BTreeMap<String, String>);

impl Default for Prefixes {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("rdfs".to_string(), RDFS.to_string());
        m.insert(
            "rdf".to_string(),
            "http://www.w3.org/1999/02/22-rdf-syntax-ns#".to_string(),
        );
        m.insert("masters".to_string(), MASTERS_BASE.to_string());
        m.insert("hole".to_string(), format!("{MASTERS_BASE}hole#"));
        m.insert("round".to_string(), format!("{MASTERS_BASE}round#"));
        m.insert("tournament".to_string(), format!("{MASTERS_BASE}tournament#"));
        Self(m)
    }
}

impl Prefixes {
    pub fn insert(&mut self, prefix: impl Into<String>, namespace: impl Into<String>) {
        self.0.insert(prefix.into(), namespace.into());
    }

    /// Validates and expands an IRI. Full IRIs (`scheme://...` or unknown
    /// `scheme:rest`) pass through unchanged.
    pub fn expand(&self, iri: &str) -> Result<String, OntologyError> {
        let iri = iri.trim();
        let iri = iri
            .strip_prefix('<')
            .and_then(|s| s.strip_suffix('>'))
            .unwrap_or(iri);
        if iri.is_empty()
            || iri
                .chars()
                .any(|c| c.is_whitespace() || matches!(c, '<' | '>' | '"' | '{' | '}'))
        {
            return Err(OntologyError::MalformedIri(iri.to_string()));
        }
        let Some((prefix, rest)) = iri.split_once(':') else {
            return Err(OntologyError::MalformedIri(iri.to_string()));
        };
        if prefix.is_empty() {
            return Err(OntologyError::MalformedIri(iri.to_string()));
        }
        if rest.starts_with("//") {
            return Ok(iri.to_string());
        }
        match self.0.get(prefix) {
            Some(ns) => Ok(format!("{ns}{rest}")),
            None => Ok(iri.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubclassQuery {
    pub predicate: String,
    pub class: String,
    pub filter: Option<String>,
}

impl SubclassQuery {
    pub fn new(class: impl Into<String>) -> Self {
        Self {
            predicate: "rdfs:subClassOf".into(),
            class: class.into(),
            filter: None,
        }
    }

    pub fn with_filter(mut self, iri: impl Into<String>) -> Self {
        self.filter = Some(iri.into());
        self
    }
}

/// Parses the supported query shape; returns the pattern and the limit
/// (`usize::MAX` when the query has none).
pub fn parse_query(text: &str) -> Result<(SubclassQuery, usize), OntologyError> {
    let re = Regex::new(
        r"(?is)^\s*select\s+\?(\w+)\s+where\s*\{\s*\?(\w+)\s+(\S+)\s+(\S+?)\s*\.?\s*(?:filter\s*\(\s*\?(\w+)\s*=\s*(\S+?)\s*\)\s*)?\}\s*(?:limit\s+(\d+))?\s*$",
    )
    .expect("static regex");
    let caps = re
        .captures(text)
        .ok_or_else(|| OntologyError::Query(format!("unsupported query: {text}")))?;
    let var = &caps[1];
    if &caps[2] != var {
        return Err(OntologyError::Query(format!(
            "pattern subject ?{} does not match selected ?{var}",
            &caps[2]
        )));
    }
    if let Some(fv) = caps.get(5) {
        if fv.as_str() != var {
            return Err(OntologyError::Query(format!(
                "filter variable ?{} is not the selected variable",
                fv.as_str()
            )));
        }
    }
    for term in [&caps[3], &caps[4]] {
        if term.starts_with('?') {
            return Err(OntologyError::Query(format!("variable `{term}` only allowed in subject position")));
        }
    }
    let limit = match caps.get(7) {
        Some(m) => m
            .as_str()
            .parse()
            .map_err(|_| OntologyError::Query("bad limit".into()))?,
        None => usize::MAX,
    };
    Ok((
        SubclassQuery {
            predicate: caps[3].to_string(),
            class: caps[4].to_string(),
            filter: caps.get(6).map(|m| m.as_str().to_string()),
        },
        limit,
    ))
}

#[derive(Debug, Default)]
struct Graph {
    triples: BTreeSet<Triple>,
    /// parent class → direct subclasses
    children: HashMap<String, BTreeSet<String>>,
}

/// Concurrent-reader / exclusive-writer triple store.
#[derive(Debug, Default)]
pub struct TripleStore {
    prefixes: Prefixes,
    graph: RwLock<Graph>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_prefixes(prefixes: Prefixes) -> Self {
        Self {
            prefixes,
            graph: RwLock::default(),
        }
    }

    pub fn prefixes(&self) -> &Prefixes {
        &self.prefixes
    }

    fn normalize(&self, t: &Triple) -> Result<Triple, OntologyError> {
        let object = match &t.object {
            Object::Iri(iri) => Object::Iri(self.prefixes.expand(iri)?),
            Object::Literal(s) => Object::Literal(s.clone()),
        };
        Ok(Triple {
            subject: self.prefixes.expand(&t.subject)?,
            predicate: self.prefixes.expand(&t.predicate)?,
            object,
        })
    }

    /// Inserts the batch and returns how many triples were new. The batch is
    /// validated up front; a malformed IRI inserts nothing.
    pub fn upsert_triples(&self, triples: &[Triple]) -> Result<usize, OntologyError> {
        let normalized = triples
            .iter()
            .map(|t| self.normalize(t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut graph = self.graph.write().unwrap_or_else(|e| e.into_inner());
        let mut inserted = 0;
        for t in normalized {
            if graph.triples.contains(&t) {
                continue;
            }
            if t.predicate == RDFS_SUBCLASS_OF {
                if let Object::Iri(parent) = &t.object {
                    graph
                        .children
                        .entry(parent.clone())
                        .or_default()
                        .insert(t.subject.clone());
                }
            }
            graph.triples.insert(t);
            inserted += 1;
        }
        Ok(inserted)
    }

    pub fn len(&self) -> usize {
        self.graph.read().unwrap_or_else(|e| e.into_inner()).triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Subjects that are (transitively) subclasses of the query class and
    /// satisfy the filter, sorted, truncated to `limit`.
    pub fn query(&self, q: &SubclassQuery, limit: usize) -> Vec<String> {
        let Ok(predicate) = self.prefixes.expand(&q.predicate) else {
            return Vec::new();
        };
        if predicate != RDFS_SUBCLASS_OF {
            return Vec::new();
        }
        let Ok(class) = self.prefixes.expand(&q.class) else {
            return Vec::new();
        };
        let filter = match &q.filter {
            Some(f) => match self.prefixes.expand(f) {
                Ok(f) => Some(f),
                Err(_) => return Vec::new(),
            },
            None => None,
        };
        let graph = self.graph.read().unwrap_or_else(|e| e.into_inner());
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut queue: VecDeque<&str> = VecDeque::from([class.as_str()]);
        while let Some(node) = queue.pop_front() {
            if let Some(kids) = graph.children.get(node) {
                for kid in kids {
                    if kid != &class && seen.insert(kid.clone()) {
                        queue.push_back(kid);
                    }
                }
            }
        }
        seen.into_iter()
            .filter(|s| filter.as_ref().is_none_or(|f| f == s))
            .take(limit)
            .collect()
    }

    pub fn query_text(&self, text: &str) -> Result<Vec<String>, OntologyError> {
        let (q, limit) = parse_query(text)?;
        Ok(self.query(&q, limit))
    }
}

/// Tournament → round → hole hierarchy for a golf course.
pub fn golf_course(rounds: u32, holes: u32) -> Vec<Triple> {
    let mut out = vec![
        Triple::subclass("round:ROUND", "tournament:TOURNAMENT"),
        Triple::subclass("hole:HOLE", "round:ROUND"),
    ];
    for r in 1..=rounds {
        out.push(Triple::subclass(format!("{MASTERS_BASE}round_{r}"), "round:ROUND"));
    }
    for h in 1..=holes {
        out.push(Triple::subclass(format!("{MASTERS_BASE}hole_{h}"), "hole:HOLE"));
        out.push(Triple::new(
            format!("{MASTERS_BASE}hole_{h}"),
            "masters:holeNumber",
            Object::Literal(h.to_string()),
        ));
    }
    out
}
