//! Live-feed ontology, congruency checks and preprocessing.

mod congruency;
mod preprocess;
mod triples;

pub use congruency::{
    golf_state_is_legal, GOLF_HOLES, tennis_set_is_complete, tennis_set_is_legal, CongruencyRule, ConsistencyStatus,
    ConsistencyVerdict, RequiredFields, RuleRegistry,
};
pub use preprocess::{resolve_references, to_yards, PreprocessOutcome, Preprocessor, NAME_FIELDS};
pub use triples::{
    golf_course, parse_query, Object, Prefixes, SubclassQuery, Triple, TripleStore, MASTERS_BASE, RDFS_SUBCLASS_OF,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OntologyError {
    #[error("malformed IRI `{0}`")]
    MalformedIri(String),
    #[error("query error: {0}")]
    Query(String),
}
