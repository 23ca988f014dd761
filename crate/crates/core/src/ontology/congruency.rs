//! Rule-based cross-feed consistency checks run before generation.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{GroundTruthFeeds, Property, ScoringEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyStatus {
    Consistent,
    StaleFeed,
    MissingData,
    IllegalValue,
}

impl ConsistencyStatus {
    /// Lower wins when several rules fail at once.
    fn precedence(self) -> u8 {
        match self {
            ConsistencyStatus::MissingData => 0,
            ConsistencyStatus::IllegalValue => 1,
            ConsistencyStatus::StaleFeed => 2,
            ConsistencyStatus::Consistent => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub status: ConsistencyStatus,
    pub detail: String,
    pub offending_feeds: Vec<String>,
}

impl ConsistencyVerdict {
    pub fn consistent() -> Self {
        Self {
            status: ConsistencyStatus::Consistent,
            detail: String::new(),
            offending_feeds: Vec::new(),
        }
    }

    pub fn failure(status: ConsistencyStatus, detail: impl Into<String>, feeds: &[&str]) -> Self {
        Self {
            status,
            detail: detail.into(),
            offending_feeds: feeds.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.status == ConsistencyStatus::Consistent
    }
}

pub trait CongruencyRule: Send + Sync {
    fn name(&self) -> &str;
    fn applies_to(&self, event: &ScoringEvent) -> bool;
    /// `None` when the rule is satisfied.
    fn check(&self, event: &ScoringEvent, feeds: &GroundTruthFeeds) -> Option<ConsistencyVerdict>;
}

/// Ordered set of rules. Extensible: the shipped rules are a starting point.
pub struct RuleRegistry {
    rules: Vec<Box<dyn CongruencyRule>>,
}

impl std::fmt::Debug for RuleRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.rules.iter().map(|r| r.name())).finish()
    }
}

impl Default for RuleRegistry {
    fn default() -> Self {
        Self::shipped()
    }
}

impl RuleRegistry {
    pub fn empty() -> Self {
        Self { rules: Vec::new() }
    }

    pub fn shipped() -> Self {
        let mut r = Self::empty();
        r.register(RequiredFields::new(
            Property::Golf,
            "shot",
            &[("player", "track"), ("hole", "track"), ("ball_position", "ball_tracking")],
        ));
        r.register(RequiredFields::new(
            Property::Tennis,
            "match_start",
            &[("match_id", "scoring"), ("player_one", "draws"), ("player_two", "draws")],
        ));
        r.register(RequiredFields::new(
            Property::Tennis,
            "set_end",
            &[
                ("match_id", "scoring"),
                ("player_one", "draws"),
                ("player_two", "draws"),
                ("set", "scoring"),
                ("games", "scoring"),
            ],
        ));
        r.register(RequiredFields::new(
            Property::Football,
            "grade_rationale",
            &[("player", "stats"), ("opponent", "schedule"), ("projection", "stats")],
        ));
        r.register(RequiredFields::new(Property::Music, "artist_story", &[("artist", "request")]));
        r.register(GolfLegality);
        r.register(GolfScoreSync);
        r.register(TennisSetLegality);
        r.register(TennisScoreSync);
        r.register(FootballNonNegative);
        r
    }

    pub fn register(&mut self, rule: impl CongruencyRule + 'static) {
        self.rules.push(Box::new(rule));
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Runs every applicable rule. Among failures, missing data beats illegal
    /// values beats stale feeds; ties go to the earlier-registered rule.
    pub fn check_congruency(&self, event: &ScoringEvent, feeds: &GroundTruthFeeds) -> ConsistencyVerdict {
        self.rules
            .iter()
            .filter(|r| r.applies_to(event))
            .filter_map(|r| r.check(event, feeds))
            .filter(|v| !v.is_consistent())
            .min_by_key(|v| v.status.precedence())
            .unwrap_or_else(ConsistencyVerdict::consistent)
    }
}

pub struct RequiredFields {
    property: Property,
    scene_type: String,
    name: String,
    fields: Vec<(String, String)>,
}

impl RequiredFields {
    pub fn new(property: Property, scene_type: &str, fields: &[(&str, &str)]) -> Self {
        Self {
            property,
            scene_type: scene_type.to_string(),
            name: format!("required-fields:{property}/{scene_type}"),
            fields: fields
                .iter()
                .map(|(f, feed)| (f.to_string(), feed.to_string()))
                .collect(),
        }
    }
}

impl CongruencyRule for RequiredFields {
    fn name(&self) -> &str {
        &self.name
    }

    fn applies_to(&self, event: &ScoringEvent) -> bool {
        event.property == self.property && event.scene_type == self.scene_type
    }

    fn check(&self, event: &ScoringEvent, _feeds: &GroundTruthFeeds) -> Option<ConsistencyVerdict> {
        let missing: Vec<&(String, String)> = self
            .fields
            .iter()
            .filter(|(f, _)| match event.field(f) {
                None => true,
                Some(Value::String(s)) => s.trim().is_empty(),
                Some(_) => false,
            })
            .collect();
        if missing.is_empty() {
            return None;
        }
        let names: Vec<&str> = missing.iter().map(|(f, _)| f.as_str()).collect();
        let mut feeds: Vec<&str> = missing.iter().map(|(_, feed)| feed.as_str()).collect();
        feeds.dedup();
        Some(ConsistencyVerdict::failure(
            ConsistencyStatus::MissingData,
            format!("missing payload fields: {}", names.join(", ")),
            &feeds,
        ))
    }
}

fn int_field(v: Option<&Value>) -> Option<i64> {
    v.and_then(|v| v.as_i64().or_else(|| v.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)))
}

pub const GOLF_HOLES: i64 = 18;

/// Hole numbers are 1..=18 and stroke counts start at 1.
pub fn golf_state_is_legal(hole: i64, shot: Option<i64>) -> bool {
    (1..=GOLF_HOLES).contains(&hole) && shot.is_none_or(|s| s >= 1)
}

struct GolfLegality;

impl CongruencyRule for GolfLegality {
    fn name(&self) -> &str {
        "golf-legality"
    }

    fn applies_to(&self, event: &ScoringEvent) -> bool {
        event.property == Property::Golf && event.field("hole").is_some()
    }

    fn check(&self, event: &ScoringEvent, feeds: &GroundTruthFeeds) -> Option<ConsistencyVerdict> {
        let Some(hole) = int_field(event.field("hole")) else {
            return Some(ConsistencyVerdict::failure(
                ConsistencyStatus::IllegalValue,
                "hole is not an integer",
                &["track"],
            ));
        };
        let shot = match event.field("shot") {
            None => None,
            Some(v) => match int_field(Some(v)) {
                Some(s) => Some(s),
                None => {
                    return Some(ConsistencyVerdict::failure(
                        ConsistencyStatus::IllegalValue,
                        "shot is not an integer",
                        &["track"],
                    ))
                }
            },
        };
        if !golf_state_is_legal(hole, shot) {
            return Some(ConsistencyVerdict::failure(
                ConsistencyStatus::IllegalValue,
                format!("illegal golf state hole={hole} shot={shot:?}"),
                &["track"],
            ));
        }
        let player = event.str_field("player")?;
        let strokes = int_field(feeds.player_scores(player).and_then(|s| s.get("strokes")));
        if let Some(strokes) = strokes {
            if strokes < 0 {
                return Some(ConsistencyVerdict::failure(
                    ConsistencyStatus::IllegalValue,
                    format!("negative stroke count {strokes} for {player}"),
                    &["score"],
                ));
            }
        }
        None
    }
}

/// Shot (track) feed and score feed must agree on the hole being played.
struct GolfScoreSync;

impl CongruencyRule for GolfScoreSync {
    fn name(&self) -> &str {
        "golf-score-sync"
    }

    fn applies_to(&self, event: &ScoringEvent) -> bool {
        event.property == Property::Golf
            && event.field("player").is_some()
            && event.field("hole").is_some()
    }

    fn check(&self, event: &ScoringEvent, feeds: &GroundTruthFeeds) -> Option<ConsistencyVerdict> {
        let player = event.str_field("player")?;
        let hole = int_field(event.field("hole"))?;
        let canonical = feeds
            .person_loose(player)
            .map(|p| p.full_name.as_str())
            .unwrap_or(player);
        match int_field(feeds.player_scores(canonical).and_then(|s| s.get("hole"))) {
            Some(h) if h == hole => None,
            Some(h) => Some(ConsistencyVerdict::failure(
                ConsistencyStatus::StaleFeed,
                format!("track feed hole {hole} but score feed hole {h} for {canonical}"),
                &["track", "score"],
            )),
            None => Some(ConsistencyVerdict::failure(
                ConsistencyStatus::StaleFeed,
                format!("score feed has no entry for {canonical}"),
                &["score"],
            )),
        }
    }
}

/// Whether `(a, b)` games can occur in a standard tiebreak set, in progress
/// or finished. A set ends at six games with a two-game margin, at 7-5 or at
/// 7-6.
pub fn tennis_set_is_legal(a: u32, b: u32) -> bool {
    let (hi, lo) = (a.max(b), a.min(b));
    hi <= 5 || (hi == 6 && lo <= 6) || (hi == 7 && (lo == 5 || lo == 6))
}

pub fn tennis_set_is_complete(a: u32, b: u32) -> bool {
    let (hi, lo) = (a.max(b), a.min(b));
    (hi == 6 && lo <= 4) || (hi == 7 && (lo == 5 || lo == 6))
}

fn games(event: &ScoringEvent) -> Option<(i64, i64)> {
    let g = event.field("games")?.as_array()?;
    if g.len() != 2 {
        return None;
    }
    Some((int_field(g.first())?, int_field(g.get(1))?))
}

struct TennisSetLegality;

impl CongruencyRule for TennisSetLegality {
    fn name(&self) -> &str {
        "tennis-set-legality"
    }

    fn applies_to(&self, event: &ScoringEvent) -> bool {
        event.property == Property::Tennis && event.field("games").is_some()
    }

    fn check(&self, event: &ScoringEvent, _feeds: &GroundTruthFeeds) -> Option<ConsistencyVerdict> {
        let illegal = |detail: String| {
            Some(ConsistencyVerdict::failure(
                ConsistencyStatus::IllegalValue,
                detail,
                &["scoring"],
            ))
        };
        let Some((a, b)) = games(event) else {
            return illegal("games must be a pair of integers".into());
        };
        if a < 0 || b < 0 || !tennis_set_is_legal(a as u32, b as u32) {
            return illegal(format!("illegal set score {a}-{b}"));
        }
        if event.scene_type == "set_end" && !tennis_set_is_complete(a as u32, b as u32) {
            return illegal(format!("set_end with unfinished set score {a}-{b}"));
        }
        if let Some(set) = event.field("set") {
            match int_field(Some(set)) {
                Some(s) if (1..=5).contains(&s) => {}
                _ => return illegal(format!("illegal set number {set}")),
            }
        }
        None
    }
}

/// Scoring feed games for each player must match the event's set score.
struct TennisScoreSync;

impl CongruencyRule for TennisScoreSync {
    fn name(&self) -> &str {
        "tennis-score-sync"
    }

    fn applies_to(&self, event: &ScoringEvent) -> bool {
        event.property == Property::Tennis && event.field("games").is_some()
    }

    fn check(&self, event: &ScoringEvent, feeds: &GroundTruthFeeds) -> Option<ConsistencyVerdict> {
        let (a, b) = games(event)?;
        for (field, expected) in [("player_one", a), ("player_two", b)] {
            let name = event.str_field(field)?;
            if let Some(fed) = int_field(feeds.player_scores(name).and_then(|s| s.get("games"))) {
                if fed != expected {
                    return Some(ConsistencyVerdict::failure(
                        ConsistencyStatus::StaleFeed,
                        format!("event games {expected} but scoring feed {fed} for {name}"),
                        &["scoring", "score"],
                    ));
                }
            }
        }
        None
    }
}

struct FootballNonNegative;

fn first_negative(v: &Value, path: &str) -> Option<(String, f64)> {
    match v {
        Value::Number(n) => n.as_f64().filter(|x| *x < 0.0).map(|x| (path.to_string(), x)),
        Value::Object(m) => m.iter().find_map(|(k, v)| {
            let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            first_negative(v, &p)
        }),
        Value::Array(a) => a
            .iter()
            .enumerate()
            .find_map(|(i, v)| first_negative(v, &format!("{path}[{i}]"))),
        _ => None,
    }
}

impl CongruencyRule for FootballNonNegative {
    fn name(&self) -> &str {
        "football-non-negative"
    }

    fn applies_to(&self, event: &ScoringEvent) -> bool {
        event.property == Property::Football
    }

    fn check(&self, event: &ScoringEvent, _feeds: &GroundTruthFeeds) -> Option<ConsistencyVerdict> {
        first_negative(&event.payload, "").map(|(path, x)| {
            ConsistencyVerdict::failure(
                ConsistencyStatus::IllegalValue,
                format!("negative statistic {path}={x}"),
                &["stats"],
            )
        })
    }
}
