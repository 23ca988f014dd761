//! `x̄′, p′ = pre(x̄, p)`: turn a raw event and prompt draft into clean data
//! and a corrected draft, or ask for a delayed retry.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{Map, Value};

use super::congruency::{ConsistencyVerdict, RuleRegistry};
use super::triples::{SubclassQuery, TripleStore, MASTERS_BASE};
use crate::bus::{DEFAULT_MAX_ATTEMPTS, DEFAULT_REQUEUE_DELAY};
use crate::model::{GroundTruthFeeds, PromptDraft, Property, ScoringEvent};
use crate::text::static_regex;

/// Payload fields that hold person names and are canonicalized against the
/// rosters.
pub const NAME_FIELDS: &[&str] = &["player", "player_one", "player_two", "artist", "winner", "loser"];

#[derive(Debug, Clone, PartialEq)]
pub enum PreprocessOutcome {
    Clean {
        data: Value,
        draft: PromptDraft,
        verdict: ConsistencyVerdict,
    },
    Requeue {
        delay: Duration,
        verdict: ConsistencyVerdict,
    },
    DeadLetter {
        verdict: ConsistencyVerdict,
    },
}

impl PreprocessOutcome {
    pub fn verdict(&self) -> &ConsistencyVerdict {
        match self {
            PreprocessOutcome::Clean { verdict, .. }
            | PreprocessOutcome::Requeue { verdict, .. }
            | PreprocessOutcome::DeadLetter { verdict } => verdict,
        }
    }
}

#[derive(Debug)]
pub struct Preprocessor {
    rules: RuleRegistry,
    ontology: Option<Arc<TripleStore>>,
    requeue_delay: Duration,
    max_attempts: u32,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new(RuleRegistry::shipped())
    }
}

impl Preprocessor {
    pub fn new(rules: RuleRegistry) -> Self {
        Self {
            rules,
            ontology: None,
            requeue_delay: DEFAULT_REQUEUE_DELAY,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn with_ontology(mut self, store: Arc<TripleStore>) -> Self {
        self.ontology = Some(store);
        self
    }

    pub fn with_requeue_delay(mut self, delay: Duration) -> Self {
        self.requeue_delay = delay;
        self
    }

    pub fn with_max_attempts(mut self, max: u32) -> Self {
        self.max_attempts = max;
        self
    }

    pub fn rules(&self) -> &RuleRegistry {
        &self.rules
    }

    pub fn check(&self, event: &ScoringEvent, feeds: &GroundTruthFeeds) -> ConsistencyVerdict {
        self.rules.check_congruency(event, feeds)
    }

    pub fn preprocess(&self, event: &ScoringEvent, draft: &PromptDraft, feeds: &GroundTruthFeeds) -> PreprocessOutcome {
        let verdict = self.check(event, feeds);
        if !verdict.is_consistent() {
            if event.attempt_count >= self.max_attempts {
                return PreprocessOutcome::DeadLetter { verdict };
            }
            return PreprocessOutcome::Requeue {
                delay: self.requeue_delay,
                verdict,
            };
        }
        let data = self.clean(event, feeds);
        let draft = PromptDraft {
            instruction: resolve_references(&draft.instruction, &data),
            input_tuple: data.clone(),
            desired_scene: draft.desired_scene.clone(),
        };
        PreprocessOutcome::Clean { data, draft, verdict }
    }

    fn clean(&self, event: &ScoringEvent, feeds: &GroundTruthFeeds) -> Value {
        let mut map: Map<String, Value> = event.payload.as_object().cloned().unwrap_or_default();
        for field in NAME_FIELDS {
            let Some(name) = map.get(*field).and_then(Value::as_str) else {
                continue;
            };
            let Some(person) = feeds.person_loose(name) else {
                continue;
            };
            map.insert(field.to_string(), Value::from(person.full_name.clone()));
            if let Some(rank) = person.rank {
                map.entry(format!("{field}_rank")).or_insert(Value::from(rank));
            }
            if !person.nation.is_empty() {
                map.entry(format!("{field}_nation"))
                    .or_insert(Value::from(person.nation.clone()));
            }
            map.entry(format!("{field}_pronouns"))
                .or_insert(Value::from(person.pronoun_class.as_str()));
        }
        let keys: Vec<String> = map.keys().cloned().collect();
        for key in keys {
            if key.ends_with("distance") {
                if let Some(yards) = map.get(&key).and_then(Value::as_str).and_then(to_yards) {
                    map.insert(key, Value::from(yards));
                }
            }
        }
        if event.property == Property::Golf {
            if let (Some(store), Some(hole)) = (&self.ontology, map.get("hole").and_then(Value::as_i64)) {
                let iri = format!("{MASTERS_BASE}hole_{hole}");
                let hits = store.query(&SubclassQuery::new("hole:HOLE").with_filter(iri), 1);
                if let Some(hit) = hits.into_iter().next() {
                    map.insert("hole_iri".into(), Value::from(hit));
                }
            }
        }
        Value::Object(map)
    }
}

/// Distance strings such as `"145 ft"` or `"30 m"` in yards, one decimal.
pub fn to_yards(raw: &str) -> Option<f64> {
    let re = static_regex!(r"(?i)^\s*(\d+(?:\.\d+)?)\s*(ft|feet|foot|yd|yds|yards?|m|meters?|metres?)\s*$");
    let caps = re.captures(raw)?;
    let value: f64 = caps[1].parse().ok()?;
    let unit = caps[2].to_ascii_lowercase();
    let yards = match unit.as_str() {
        "ft" | "feet" | "foot" => value / 3.0,
        "m" | "meter" | "meters" | "metre" | "metres" => value / 0.9144,
        _ => value,
    };
    Some((yards * 10.0).round() / 10.0)
}

/// Replaces `{field}` references in an instruction with values from `data`.
/// Unknown references are left as they are.
pub fn resolve_references(instruction: &str, data: &Value) -> String {
    let re = static_regex!(r"\{([A-Za-z_][A-Za-z0-9_]*)\}");
    re.replace_all(instruction, |caps: &regex::Captures<'_>| {
        match data.get(&caps[1]) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => caps[0].to_string(),
            Some(other) => other.to_string(),
        }
    })
    .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PersonRecord, PronounClass};
    use crate::ontology::congruency::ConsistencyStatus;
    use crate::ontology::triples::golf_course;
    use serde_json::json;

    fn feeds(hole: i64) -> GroundTruthFeeds {
        GroundTruthFeeds {
            scores: json!({"players": {"Golf Player One": {"hole": hole, "strokes": 1}}}),
            rosters: vec![PersonRecord::new("Golf Player One", "USA", PronounClass::Masculine).with_rank(12)],
            ..Default::default()
        }
    }

    fn event() -> ScoringEvent {
        ScoringEvent::new(
            "e",
            Property::Golf,
            "shot",
            json!({"player": "golf  player one", "hole": 9, "ball_position": "Pine Straw", "distance": "150 ft"}),
        )
    }

    fn draft() -> PromptDraft {
        PromptDraft::new("Describe {player} on hole {hole}.", "golf/shot")
    }

    #[test]
    fn consistent_event_is_cleaned_and_canonicalized() {
        let out = Preprocessor::default().preprocess(&event(), &draft(), &feeds(9));
        let PreprocessOutcome::Clean { data, draft, verdict } = out else {
            panic!("expected clean output, got {out:?}");
        };
        assert!(verdict.is_consistent());
        assert_eq!(data["player"], "Golf Player One");
        assert_eq!(data["player_rank"], 12);
        assert_eq!(data["player_pronouns"], "masculine");
        assert_eq!(data["distance"], 50.0);
        assert_eq!(draft.instruction, "Describe Golf Player One on hole 9.");
        assert_eq!(draft.input_tuple, data);
    }

    #[test]
    fn stale_event_requeues_with_five_seconds() {
        let out = Preprocessor::default().preprocess(&event(), &draft(), &feeds(8));
        match out {
            PreprocessOutcome::Requeue { delay, verdict } => {
                assert_eq!(delay, Duration::from_secs(5));
                assert_eq!(verdict.status, ConsistencyStatus::StaleFeed);
            }
            other => panic!("expected requeue, got {other:?}"),
        }
    }

    #[test]
    fn converging_feeds_clean_on_second_attempt() {
        let pre = Preprocessor::default();
        let mut e = event();
        assert!(matches!(pre.preprocess(&e, &draft(), &feeds(8)), PreprocessOutcome::Requeue { .. }));
        e.attempt_count += 1;
        assert!(matches!(pre.preprocess(&e, &draft(), &feeds(9)), PreprocessOutcome::Clean { .. }));
    }

    #[test]
    fn attempt_cap_dead_letters() {
        let pre = Preprocessor::default().with_max_attempts(2);
        let mut e = event();
        e.attempt_count = 2;
        assert!(matches!(pre.preprocess(&e, &draft(), &feeds(8)), PreprocessOutcome::DeadLetter { .. }));
    }

    #[test]
    fn ontology_enrichment() {
        let store = Arc::new(TripleStore::new());
        store.upsert_triples(&golf_course(4, 18)).unwrap();
        let pre = Preprocessor::default().with_ontology(store);
        let PreprocessOutcome::Clean { data, .. } = pre.preprocess(&event(), &draft(), &feeds(9)) else {
            panic!()
        };
        assert_eq!(data["hole_iri"], "http://masters.ontology.ai/hole_9");
    }

    #[test]
    fn units() {
        assert_eq!(to_yards("30 yd"), Some(30.0));
        assert_eq!(to_yards("10 m"), Some(10.9));
        assert_eq!(to_yards("Fairway"), None);
    }
}
