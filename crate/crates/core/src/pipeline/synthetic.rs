//! Seeded synthetic golf rounds for replay runs and load tests.
//!
//! Each player plays 18 holes with shots spread evenly over them. Every shot
//! comes with a score feed patch at the same instant. For the events picked
//! as inconsistent the patch lands `lag_ms` after the shot instead, so the
//! first delivery still sees the previous hole. Keep `lag_ms` below
//! `spacing_ms` so the late patch never overtakes the next shot.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::runner::ReplayScript;
use crate::model::{GroundTruthFeeds, PersonRecord, Property, PronounClass, ScoringEvent};
use crate::ontology::GOLF_HOLES;

pub const FIRST_NAMES: [&str; 16] = [
    "Avery", "Blake", "Casey", "Dana", "Elliot", "Frankie", "Gray", "Harper", "Indy", "Jordan", "Kai", "Logan", "Morgan", "Noel", "Parker", "Quinn",
];

pub const LAST_NAMES: [&str; 16] = [
    "Ashdown", "Brightwater", "Coldfield", "Dunmore", "Eastbrook", "Fairhaven", "Greenhill", "Holloway", "Ironside", "Juniper", "Kingsley",
    "Longmere", "Marchbank", "Northcott", "Oakhurst", "Pemberton",
];

const NATIONS: [&str; 8] = ["USA", "ESP", "ENG", "JPN", "KOR", "AUS", "RSA", "SWE"];
const POSITIONS: [&str; 6] = ["fairway", "rough", "bunker", "green", "tee box", "pine straw"];

/// `n` distinct first × last names, ranked 1..=n in a seeded order.
pub fn golf_roster(n: usize, seed: u64) -> Vec<PersonRecord> {
    assert!(n <= FIRST_NAMES.len() * LAST_NAMES.len(), "at most {} synthetic players", FIRST_NAMES.len() * LAST_NAMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<String> = FIRST_NAMES
        .iter()
        .flat_map(|f| LAST_NAMES.iter().map(move |l| format!("{f} {l}")))
        .collect();
    names.shuffle(&mut rng);
    names
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, name)| {
            let class = if rng.random_bool(0.5) { PronounClass::Feminine } else { PronounClass::Masculine };
            PersonRecord::new(name, NATIONS[rng.random_range(0..NATIONS.len())], class).with_rank(i as u32 + 1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GolfScriptSpec {
    pub events: usize,
    pub players: usize,
    /// Time between two shots of the same player.
    pub spacing_ms: u64,
    /// Share of events whose hole change reaches the score feed late. Only
    /// the first shot on a hole can be stale, which caps the share.
    pub inconsistent_rate: f64,
    /// How late a stale patch arrives. For a requeued shot to publish, the
    /// lag must fit inside one requeue window of script time (delay times
    /// replay speed) and `spacing_ms` must exceed it, or the player's next
    /// shot has already moved the feed on and the retry is dead-lettered.
    pub lag_ms: u64,
    pub seed: u64,
}

impl Default for GolfScriptSpec {
    fn default() -> Self {
        Self {
            events: 1000,
            players: 50,
            spacing_ms: 60_000,
            inconsistent_rate: 0.0,
            lag_ms: 0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRound {
    pub feeds: GroundTruthFeeds,
    pub script: ReplayScript,
    /// Ids of the events whose feed patch arrives late.
    pub inconsistent: BTreeSet<String>,
}

struct Shot {
    at_ms: u64,
    player: usize,
    hole: i64,
    shot: i64,
    new_hole: bool,
}

pub fn golf_round(spec: &GolfScriptSpec) -> SyntheticRound {
    let players = spec.players.max(1);
    let roster = golf_roster(players, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);

    let mut shots = Vec::with_capacity(spec.events);
    for (i, _) in roster.iter().enumerate() {
        let count = spec.events / players + usize::from(i < spec.events % players);
        let offset = spec.spacing_ms * i as u64 / players as u64;
        let mut last_hole = 0;
        let mut shot = 0;
        for j in 0..count {
            let hole = 1 + (j as i64 * GOLF_HOLES) / count as i64;
            if hole != last_hole {
                shot = 0;
            }
            shot += 1;
            shots.push(Shot {
                at_ms: offset + j as u64 * spec.spacing_ms,
                player: i,
                hole,
                shot,
                new_hole: hole != last_hole,
            });
            last_hole = hole;
        }
    }

    shots.sort_by_key(|s| (s.at_ms, s.player));
    let mut starts: Vec<usize> = (0..shots.len()).filter(|&k| shots[k].new_hole).collect();
    starts.shuffle(&mut rng);
    let wanted = ((spec.inconsistent_rate * shots.len() as f64).round() as usize).min(starts.len());
    let late: BTreeSet<usize> = starts.into_iter().take(wanted).collect();

    let mut script = ReplayScript::default();
    let mut inconsistent = BTreeSet::new();
    let mut strokes = vec![0i64; players];
    for (k, s) in shots.iter().enumerate() {
        let name = &roster[s.player].full_name;
        strokes[s.player] += 1;
        let id = format!("golf-{:03}-{:02}-{}", s.player, s.hole, s.shot);
        let patch = json!({"scores": {"players": {name.as_str(): {"hole": s.hole, "shot": s.shot, "strokes": strokes[s.player]}}}});
        let at = if late.contains(&k) {
            inconsistent.insert(id.clone());
            s.at_ms + spec.lag_ms
        } else {
            s.at_ms
        };
        script.push_patch(at, patch);
        let position = POSITIONS[rng.random_range(0..POSITIONS.len())];
        let mut event = ScoringEvent::new(
            id,
            Property::Golf,
            "shot",
            json!({"player": name, "hole": s.hole, "shot": s.shot, "ball_position": position}),
        );
        event.feed_timestamps.insert("track".into(), s.at_ms);
        script.push_event(s.at_ms, event);
    }
    script.entries.sort_by_key(|e| e.at_ms);

    SyntheticRound {
        feeds: GroundTruthFeeds {
            rosters: roster,
            scores: json!({"players": {}}),
            ..Default::default()
        },
        script,
        inconsistent,
    }
}
