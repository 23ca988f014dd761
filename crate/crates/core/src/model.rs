//! Shared domain types and canonical JSON serialization.
//!
//! Every type here is a plain immutable value. The canonical encoding goes
//! through [`serde_json::Value`], whose object maps are ordered, so field and
//! payload key order is lexicographic and the bytes are stable for hashing.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Golf,
    Tennis,
    Football,
    Music,
}

impl Property {
    pub const ALL: [Property; 4] = [
        Property::Golf,
        Property::Tennis,
        Property::Football,
        Property::Music,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Property::Golf => "golf",
            Property::Tennis => "tennis",
            Property::Football => "football",
            Property::Music => "music",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Property {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "golf" => Ok(Property::Golf),
            "tennis" => Ok(Property::Tennis),
            "football" => Ok(Property::Football),
            "music" => Ok(Property::Music),
            other => Err(ModelError::InvalidEvent(format!("unknown property `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    #[default]
    Normal,
    FastTrack,
}

/// A property event carried on the bus: a golf shot, a tennis set end, a
/// roster update, an artist story request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringEvent {
    pub event_id: String,
    pub property: Property,
    pub scene_type: String,
    #[serde(default = "empty_object")]
    pub payload: Value,
    #[serde(default)]
    pub feed_timestamps: BTreeMap<String, u64>,
    #[serde(default)]
    pub attempt_count: u32,
    #[serde(default)]
    pub priority: Priority,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl Default for ScoringEvent {
    fn default() -> Self {
        Self {
            event_id: String::new(),
            property: Property::Golf,
            scene_type: String::new(),
            payload: empty_object(),
            feed_timestamps: BTreeMap::new(),
            attempt_count: 0,
            priority: Priority::Normal,
        }
    }
}

impl ScoringEvent {
    pub fn new(
        event_id: impl Into<String>,
        property: Property,
        scene_type: impl Into<String>,
        payload: Value,
    ) -> Self {
        Self {
            event_id: event_id.into(),
            property,
            scene_type: scene_type.into(),
            payload,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.event_id.trim().is_empty() {
            return Err(ModelError::InvalidEvent("event_id is empty".into()));
        }
        if self.scene_type.trim().is_empty() {
            return Err(ModelError::InvalidEvent("scene_type is empty".into()));
        }
        let obj = self
            .payload
            .as_object()
            .ok_or_else(|| ModelError::InvalidEvent("payload must be an object".into()))?;
        if obj.keys().any(|k| k.is_empty()) {
            return Err(ModelError::InvalidEvent("payload has an empty key".into()));
        }
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&Value> {
        self.payload.get(name).filter(|v| !v.is_null())
    }

    pub fn str_field(&self, name: &str) -> Option<&str> {
        self.field(name).and_then(Value::as_str)
    }

    /// Stable routing key `{property}/{scene_type}/{discriminator}`.
    ///
    /// The discriminator only reads identity fields of the payload, so feed
    /// timestamps, attempt counts and priority never change the key.
    pub fn canonical_key(&self) -> Result<String, ModelError> {
        self.validate()?;
        let disc = self.discriminator()?;
        Ok(format!("{}/{}/{}", self.property, self.scene_type, disc))
    }

    fn discriminator(&self) -> Result<String, ModelError> {
        // (required field, optional (field, prefix) suffixes)
        let (head, tail): (&str, &[(&str, &str)]) = match self.property {
            Property::Golf => ("player", &[("hole", "h"), ("shot", "s")]),
            Property::Tennis => ("match_id", &[("set", "s")]),
            Property::Football => ("player", &[("week", "w")]),
            Property::Music => ("artist", &[("category", "")]),
        };
        let head_value = self
            .field(head)
            .map(key_part)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                ModelError::InvalidEvent(format!(
                    "{} event lacks discriminator field `{head}`",
                    self.property
                ))
            })?;
        let mut out = head_value;
        for (name, prefix) in tail {
            if let Some(v) = self.field(name) {
                out.push('-');
                out.push_str(prefix);
                out.push_str(&key_part(v));
            }
        }
        Ok(out)
    }
}

fn key_part(v: &Value) -> String {
    let raw = match v {
        Value::String(s) => s.trim().to_string(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.to_string(),
            None => n.to_string(),
        },
        other => other.to_string(),
    };
    raw.split_whitespace().collect::<Vec<_>>().join("_")
}

/// A prompt before preprocessing: instruction, input tuple and target scene.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptDraft {
    pub instruction: String,
    #[serde(default = "empty_object")]
    pub input_tuple: Value,
    pub desired_scene: String,
}

impl PromptDraft {
    pub fn new(instruction: impl Into<String>, desired_scene: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            input_tuple: empty_object(),
            desired_scene: desired_scene.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.instruction.trim().is_empty() {
            return Err(ModelError::InvalidEvent("prompt instruction is empty".into()));
        }
        Ok(())
    }
}

/// One few-shot input/output pair.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    pub output: String,
}

impl Exemplar {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
        }
    }
}

/// Fully rendered prompt. `rendered` is produced by the template engine from
/// the remaining fields; see [`crate::prompt::build_prompt`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EngineeredPrompt {
    /// Scene the prompt was built for, `property/scene_type`.
    #[serde(default)]
    pub scene: String,
    pub preamble: String,
    pub instruction: String,
    /// The input tuple as it was bound into the template.
    #[serde(default)]
    pub input: String,
    #[serde(default)]
    pub few_shot: Vec<Exemplar>,
    #[serde(default)]
    pub context_passages: Vec<String>,
    #[serde(default)]
    pub avoid_topics: Vec<String>,
    pub rendered: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PronounClass {
    Feminine,
    Masculine,
    Neutral,
}

impl PronounClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            PronounClass::Feminine => "feminine",
            PronounClass::Masculine => "masculine",
            PronounClass::Neutral => "neutral",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "feminine" => Some(PronounClass::Feminine),
            "masculine" => Some(PronounClass::Masculine),
            "neutral" => Some(PronounClass::Neutral),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub full_name: String,
    #[serde(default)]
    pub nation: String,
    #[serde(default)]
    pub rank: Option<u32>,
    pub pronoun_class: PronounClass,
}

impl PersonRecord {
    pub fn new(full_name: impl Into<String>, nation: impl Into<String>, pronoun_class: PronounClass) -> Self {
        Self {
            full_name: full_name.into(),
            nation: nation.into(),
            rank: None,
            pronoun_class,
        }
    }

    pub fn with_rank(mut self, rank: u32) -> Self {
        self.rank = Some(rank);
        self
    }
}

/// Snapshot of the streaming ground-truth feeds.
///
/// Layout conventions used by the congruency rules and the fact checker:
/// `scores.players.<name>.<stat>` for per-person live statistics,
/// `schedule.<name>` for per-person schedule entries and
/// `draws_or_leaderboard.pairings` as a list of `[a, b]` name pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFeeds {
    #[serde(default = "empty_object")]
    pub scores: Value,
    #[serde(default = "empty_object")]
    pub schedule: Value,
    #[serde(default = "empty_object")]
    pub draws_or_leaderboard: Value,
    #[serde(default = "empty_object")]
    pub head_to_head: Value,
    #[serde(default)]
    pub rosters: Vec<PersonRecord>,
}

impl Default for GroundTruthFeeds {
    fn default() -> Self {
        Self {
            scores: empty_object(),
            schedule: empty_object(),
            draws_or_leaderboard: empty_object(),
            head_to_head: empty_object(),
            rosters: Vec::new(),
        }
    }
}

impl GroundTruthFeeds {
    /// Checks that every person referenced by the score feed is on a roster.
    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(players) = self.scores.get("players").and_then(Value::as_object) {
            for name in players.keys() {
                if self.person(name).is_none() {
                    return Err(ModelError::InvalidEvent(format!(
                        "score feed references `{name}` who is not on any roster"
                    )));
                }
            }
        }
        if self.rosters.iter().any(|p| p.full_name.trim().is_empty()) {
            return Err(ModelError::InvalidEvent("roster entry with empty name".into()));
        }
        Ok(())
    }

    pub fn person(&self, full_name: &str) -> Option<&PersonRecord> {
        self.rosters.iter().find(|p| p.full_name == full_name)
    }

    /// Roster lookup ignoring case and repeated whitespace.
    pub fn person_loose(&self, name: &str) -> Option<&PersonRecord> {
        let wanted = normalize_name(name);
        self.rosters
            .iter()
            .find(|p| normalize_name(&p.full_name) == wanted)
    }

    pub fn player_scores(&self, name: &str) -> Option<&Value> {
        self.scores.get("players").and_then(|p| p.get(name))
    }

    /// Opponents of `name` according to the draw pairings and head-to-head feed.
    pub fn opponents_of(&self, name: &str) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(pairs) = self
            .draws_or_leaderboard
            .get("pairings")
            .and_then(Value::as_array)
        {
            for pair in pairs.iter().filter_map(Value::as_array) {
                let names: Vec<&str> = pair.iter().filter_map(Value::as_str).collect();
                if names.len() == 2 {
                    if names[0] == name {
                        out.push(names[1].to_string());
                    } else if names[1] == name {
                        out.push(names[0].to_string());
                    }
                }
            }
        }
        if let Some(h2h) = self.head_to_head.get(name).and_then(Value::as_object) {
            for opp in h2h.keys() {
                if !out.iter().any(|o| o == opp) {
                    out.push(opp.clone());
                }
            }
        }
        out
    }

    /// All values the feeds hold for `(subject, attribute)`, one per source.
    /// The fact checker only corrects against a unique value.
    pub fn facts(&self, subject: &str, attribute: &str) -> Vec<Value> {
        let mut out: Vec<Value> = Vec::new();
        let mut push = |v: Option<&Value>| {
            if let Some(v) = v.filter(|v| !v.is_null()) {
                if !out.iter().any(|o| values_equal(o, v)) {
                    out.push(v.clone());
                }
            }
        };
        if let Some(p) = self.person(subject) {
            match attribute {
                "rank" => push(p.rank.map(Value::from).as_ref()),
                "nation" if !p.nation.is_empty() => push(Some(&Value::from(p.nation.clone()))),
                _ => {}
            }
        }
        push(self.player_scores(subject).and_then(|s| s.get(attribute)));
        push(self.schedule.get(subject).and_then(|s| s.get(attribute)));
        // `h2h_<stat>` reads `head_to_head.<subject>.<opponent>.<stat>`.
        if let Some(stat) = attribute.strip_prefix("h2h_") {
            if let Some(opps) = self.head_to_head.get(subject).and_then(Value::as_object) {
                for rec in opps.values() {
                    push(rec.get(stat));
                }
            }
        }
        push(
            self.draws_or_leaderboard
                .get("players")
                .and_then(|p| p.get(subject))
                .and_then(|s| s.get(attribute)),
        );
        out
    }

    /// Applies an RFC 7386 merge patch to the feeds.
    pub fn apply_patch(&mut self, patch: &Value) -> Result<(), ModelError> {
        if let Some(fields) = patch.as_object() {
            // Field by field, so a score update does not round-trip the rosters.
            for (field, part) in fields {
                let target = match field.as_str() {
                    "scores" => &mut self.scores,
                    "schedule" => &mut self.schedule,
                    "draws_or_leaderboard" => &mut self.draws_or_leaderboard,
                    "head_to_head" => &mut self.head_to_head,
                    "rosters" => {
                        self.rosters = if part.is_null() { Vec::new() } else { serde_json::from_value(part.clone())? };
                        continue;
                    }
                    _ => continue,
                };
                merge_patch(target, part);
                if target.is_null() {
                    *target = empty_object();
                }
            }
            return Ok(());
        }
        let mut whole = serde_json::to_value(&*self)?;
        merge_patch(&mut whole, patch);
        *self = serde_json::from_value(whole)?;
        Ok(())
    }
}

pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

/// RFC 7386 JSON merge patch.
pub fn merge_patch(target: &mut Value, patch: &Value) {
    match patch {
        Value::Object(patch_map) => {
            if !target.is_object() {
                *target = Value::Object(Default::default());
            }
            let map = target.as_object_mut().expect("object ensured above");
            for (k, v) in patch_map {
                if v.is_null() {
                    map.remove(k);
                } else {
                    merge_patch(map.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
        }
        other => *target = other.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentState {
    Draft,
    PendingReview,
    Published,
    Rejected,
}

impl ContentState {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContentState::Draft => "draft",
            ContentState::PendingReview => "pending_review",
            ContentState::Published => "published",
            ContentState::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "draft" => Some(ContentState::Draft),
            "pending_review" => Some(ContentState::PendingReview),
            "published" => Some(ContentState::Published),
            "rejected" => Some(ContentState::Rejected),
            _ => None,
        }
    }

    /// `draft → (pending_review →)? published | rejected`
    pub fn can_transition_to(self, next: ContentState) -> bool {
        use ContentState::*;
        matches!(
            (self, next),
            (Draft, PendingReview)
                | (Draft, Published)
                | (Draft, Rejected)
                | (PendingReview, Published)
                | (PendingReview, Rejected)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ContentState::Published | ContentState::Rejected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimKind {
    Rank,
    Score,
    Count,
    Date,
    Name,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClaimValue {
    Number(f64),
    Text(String),
}

impl ClaimValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ClaimValue::Number(n) => Some(*n),
            ClaimValue::Text(_) => None,
        }
    }
}

/// A statement parsed out of generated text. `start..end` are byte offsets
/// into the text the claim was extracted from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub kind: ClaimKind,
    pub surface: String,
    pub value: ClaimValue,
    pub start: usize,
    pub end: usize,
    /// Statistic the claim speaks about (`rank`, `hole`, ...), when the
    /// pattern that matched it names one.
    #[serde(default)]
    pub attribute: Option<String>,
    /// Person the claim is attributed to.
    #[serde(default)]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Verified,
    Corrected,
    Unverifiable,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub claim: Claim,
    pub status: VerdictStatus,
    #[serde(default)]
    pub correction: Option<String>,
}

/// Generated text with provenance and publication state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedContent {
    pub content_id: String,
    pub source_event: String,
    #[serde(default)]
    pub scene: String,
    pub raw_text: String,
    /// Set once post-processing has run.
    #[serde(default)]
    pub final_text: Option<String>,
    #[serde(default)]
    pub verdicts: Vec<VerificationVerdict>,
    pub state: ContentState,
    #[serde(default)]
    pub revision: u32,
}

impl GeneratedContent {
    pub fn draft(
        content_id: impl Into<String>,
        source_event: impl Into<String>,
        raw_text: impl Into<String>,
    ) -> Self {
        Self {
            content_id: content_id.into(),
            source_event: source_event.into(),
            scene: String::new(),
            raw_text: raw_text.into(),
            final_text: None,
            verdicts: Vec::new(),
            state: ContentState::Draft,
            revision: 1,
        }
    }

    pub fn transition(&mut self, next: ContentState) -> Result<(), ContentState> {
        if self.state.can_transition_to(next) {
            self.state = next;
            Ok(())
        } else {
            Err(self.state)
        }
    }
}

/// Canonical bytes: UTF-8 JSON with lexicographically ordered keys.
pub fn encode<T: Serialize>(value: &T) -> Result<Vec<u8>, ModelError> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_vec(&v)?)
}

pub fn encode_string<T: Serialize>(value: &T) -> Result<String, ModelError> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ModelError> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Serialize-then-parse.
pub fn roundtrip<T: Serialize + DeserializeOwned>(value: &T) -> Result<T, ModelError> {
    decode(&encode(value)?)
}
