//! Slot-filler sentences: hourly batch generation of fill-in-the-blank
//! templates per (statistic, percentile band), export as CDN artifacts, and
//! the online fill step that personalizes them without calling a model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::generator::{DecodingParams, FinishReason, GenerateError, TextGenerator};
use crate::hash::{etag, fnv1a64_parts};
use crate::model::PromptDraft;
use crate::prompt::{ExemplarBank, PromptEngine, PromptError, PromptOptions};
use crate::store::{Cdn, Kind, StoreError};
use crate::text::{number_text, ordinal};

pub const SLOT_SCENE: &str = "football/slot";
pub const SLOT_BANK: &str = include_str!("../assets/exemplars/football_slot.json");
pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 20;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

/// Registered statistics and their prose labels.
pub const STAT_TYPES: [(&str, &str); 13] = [
    ("next_game_projection", "next game projection"),
    ("season_projection", "season projection"),
    ("need", "team need"),
    ("touchdowns", "touchdowns"),
    ("receptions", "receptions"),
    ("rushing_yards", "rushing yards"),
    ("receiving_yards", "receiving yards"),
    ("passing_yards", "passing yards"),
    ("targets", "targets"),
    ("snap_share", "snap share"),
    ("red_zone_touches", "red zone touches"),
    ("consistency", "week-to-week consistency"),
    ("matchup_strength", "matchup strength"),
];

/// Closed placeholder vocabulary.
pub const PLACEHOLDERS: [&str; 10] = [
    "first_name",
    "last_name",
    "position",
    "team",
    "opponent",
    "value",
    "projection_points",
    "team_gain",
    "percentile",
    "week",
];

#[derive(Debug, Error)]
pub enum SlotError {
    #[error("percentile {0} is outside [0, 100]")]
    OutOfRange(f64),
    #[error("invalid band configuration: {0}")]
    BadBands(String),
    #[error("unknown statistic `{0}`")]
    UnknownStat(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("generator unavailable: {0}")]
    GeneratorUnavailable(String),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("artifact `{key}`: {message}")]
    BadArtifact { key: String, message: String },
}

pub fn stat_label(stat: &str) -> Option<&'static str> {
    STAT_TYPES.iter().find(|(s, _)| *s == stat).map(|(_, l)| *l)
}

pub fn slot_bank() -> ExemplarBank {
    ExemplarBank::from_json(SLOT_BANK.as_bytes()).expect("shipped slot bank parses")
}

/// Percentile bands: `labels[i]` covers `[edges[i], edges[i+1])`, the last
/// band is closed at 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
}

impl Default for Bands {
    fn default() -> Self {
        Self {
            edges: vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0],
            labels: ["poor", "below-average", "average", "strong", "outstanding"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl Bands {
    pub fn validate(&self) -> Result<(), SlotError> {
        if self.labels.is_empty() || self.edges.len() != self.labels.len() + 1 {
            return Err(SlotError::BadBands("need one more edge than labels".into()));
        }
        if self.edges[0] != 0.0 || *self.edges.last().expect("non-empty") != 100.0 {
            return Err(SlotError::BadBands("edges must run from 0 to 100".into()));
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SlotError::BadBands("edges must increase".into()));
        }
        Ok(())
    }

    pub fn band(&self, percentile: f64) -> Result<&str, SlotError> {
        if !(0.0..=100.0).contains(&percentile) {
            return Err(SlotError::OutOfRange(percentile));
        }
        let i = self.edges[1..].iter().position(|e| percentile < *e).unwrap_or(self.labels.len() - 1);
        Ok(&self.labels[i])
    }

    /// `(low, high)` edges of a label.
    pub fn range(&self, label: &str) -> Option<(f64, f64)> {
        let i = self.labels.iter().position(|l| l == label)?;
        Some((self.edges[i], self.edges[i + 1]))
    }
}

/// Five-band lookup with the default edges.
pub fn band(percentile: f64) -> Result<&'static str, SlotError> {
    static BANDS: OnceLock<Bands> = OnceLock::new();
    BANDS.get_or_init(Bands::default).band(percentile)
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_ ]+)\}").expect("static regex"))
}

/// `"last name"` and `"LAST_NAME"` both become `last_name`.
fn canonical_placeholder(raw: &str) -> String {
    raw.trim().to_lowercase().replace(' ', "_")
}

/// Placeholder names used in `text`, canonicalized.
pub fn placeholders_in(text: &str) -> BTreeSet<String> {
    placeholder_re()
        .captures_iter(text)
        .map(|c| canonical_placeholder(&c[1]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotTemplate {
    pub stat_type: String,
    pub band: String,
    pub text: String,
    pub placeholders: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    MissingStop,
    UnknownPlaceholder(String),
    NoPlaceholder,
    Stray(String),
}

/// Checks a raw generation against the placeholder registry.
pub fn validate_template(text: &str, finish: FinishReason) -> Result<BTreeSet<String>, Rejection> {
    if finish != FinishReason::Stop {
        return Err(Rejection::MissingStop);
    }
    let found = placeholders_in(text);
    if let Some(bad) = found.iter().find(|p| !PLACEHOLDERS.contains(&p.as_str())) {
        return Err(Rejection::UnknownPlaceholder(bad.clone()));
    }
    if found.is_empty() {
        return Err(Rejection::NoPlaceholder);
    }
    // Braces left over after removing well-formed placeholders.
    let rest = placeholder_re().replace_all(text, "");
    if rest.contains(['{', '}']) || rest.contains("${") {
        return Err(Rejection::Stray(rest.into_owned()));
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub variants_per_cell: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Generation attempts per variant before its cell is declared degraded.
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bands: Bands,
    #[serde(default = "DecodingParams::football")]
    pub params: DecodingParams,
}

fn default_k() -> usize {
    DEFAULT_K
}
fn default_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}

impl BatchConfig {
    pub fn new(variants_per_cell: usize) -> Self {
        Self {
            variants_per_cell,
            k: DEFAULT_K,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            seed: 0,
            bands: Bands::default(),
            params: DecodingParams::football(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub stat_type: String,
    pub band: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub templates: Vec<SlotTemplate>,
    pub degraded: Vec<Cell>,
    pub rejected: usize,
    pub generations: usize,
}

impl BatchResult {
    pub fn is_degraded(&self, stat: &str, band: &str) -> bool {
        self.degraded.iter().any(|c| c.stat_type == stat && c.band == band)
    }
}

fn band_phrase(label: &str) -> String {
    let article = if label.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
    format!("{article} {label}")
}

/// Generates `variants_per_cell` templates for every statistic and band.
///
/// A malformed output is discarded and the variant regenerated; after
/// `max_attempts` tries the cell is marked degraded and its partial output
/// dropped. Permanent generator errors, or a cell that got no output at all
/// because every call failed, abort the whole batch.
pub fn batch_generate(
    config: &BatchConfig,
    generator: &dyn TextGenerator,
    engine: &PromptEngine,
    bank: &ExemplarBank,
) -> Result<BatchResult, SlotError> {
    config.bands.validate()?;
    let mut out = BatchResult::default();
    for (stat, label) in STAT_TYPES {
        for band_label in &config.bands.labels {
            let (lo, hi) = config.bands.range(band_label).expect("label from the same bands");
            let data = json!({
                "stat_type": stat,
                "stat_label": label,
                "band": band_label,
                "band_phrase": band_phrase(band_label),
                "percentile_low": lo,
                "percentile_high": hi,
            });
            let draft = PromptDraft::new(
                format!("Write a fill-in-the-blank sentence about {label} for a player in the {band_label} percentile band."),
                SLOT_SCENE,
            );
            let mut cell = Vec::new();
            let mut degraded = false;
            'variants: for variant in 0..config.variants_per_cell {
                let mut errors = 0;
                let mut last_error = String::new();
                for attempt in 0..config.max_attempts {
                    let seed = fnv1a64_parts([
                        config.seed.to_le_bytes().as_slice(),
                        stat.as_bytes(),
                        band_label.as_bytes(),
                        &(variant as u64).to_le_bytes(),
                        &attempt.to_le_bytes(),
                    ]);
                    let prompt = engine.build_prompt(
                        &draft,
                        &data,
                        &PromptOptions {
                            bank: Some(bank),
                            k: config.k,
                            seed,
                            ..Default::default()
                        },
                    )?;
                    out.generations += 1;
                    let generation = match generator.generate(&prompt, &config.params.clone().with_seed(seed)) {
                        Ok(g) => g,
                        Err(GenerateError::Retryable(e)) => {
                            errors += 1;
                            last_error = e;
                            continue;
                        }
                        Err(e) => return Err(SlotError::GeneratorUnavailable(e.to_string())),
                    };
                    match validate_template(&generation.text, generation.finish_reason) {
                        Ok(placeholders) => {
                            cell.push(SlotTemplate {
                                stat_type: stat.to_string(),
                                band: band_label.clone(),
                                text: generation.text,
                                placeholders,
                            });
                            continue 'variants;
                        }
                        Err(_) => out.rejected += 1,
                    }
                }
                if errors == config.max_attempts {
                    return Err(SlotError::GeneratorUnavailable(last_error));
                }
                degraded = true;
                break;
            }
            if degraded {
                out.degraded.push(Cell {
                    stat_type: stat.to_string(),
                    band: band_label.clone(),
                });
            } else {
                out.templates.extend(cell);
            }
        }
    }
    Ok(out)
}

/// One JSON artifact per statistic, keyed by band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotArtifact {
    pub schema_version: u32,
    pub stat_type: String,
    /// Content hash of `bands`.
    pub content_version: String,
    pub bands: BTreeMap<String, Vec<String>>,
}

impl SlotArtifact {
    pub fn new(stat_type: impl Into<String>, bands: BTreeMap<String, Vec<String>>) -> Self {
        let bytes = serde_json::to_vec(&bands).expect("string map serializes");
        Self {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            stat_type: stat_type.into(),
            content_version: etag(&bytes),
            bands,
        }
    }
}

pub fn artifact_key(stat: &str) -> String {
    format!("slots/{stat}.json")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub artifacts: usize,
    /// Keys whose bytes changed; each got one purge request.
    pub purged: Vec<String>,
    pub unchanged: Vec<String>,
}

fn prior_artifact(cdn: &Cdn, key: &str) -> Result<Option<SlotArtifact>, SlotError> {
    match cdn.origin().backend().get(Kind::Object, key)? {
        None => Ok(None),
        Some(s) => serde_json::from_slice(&s.bytes).map(Some).map_err(|e| SlotError::BadArtifact {
            key: key.to_string(),
            message: e.to_string(),
        }),
    }
}

/// Writes one artifact per statistic through the CDN. Degraded cells keep the
/// previous artifact's sentences for that band. Store calls are retried
/// `retries` times before the export fails.
pub fn export_artifacts(batch: &BatchResult, cdn: &Cdn, bands: &Bands, retries: u32) -> Result<ExportReport, SlotError> {
    let with_retry = |f: &dyn Fn() -> Result<bool, StoreError>| -> Result<bool, StoreError> {
        let mut last = None;
        for _ in 0..=retries {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    };
    let mut report = ExportReport::default();
    for (stat, _) in STAT_TYPES {
        let key = artifact_key(stat);
        let prior = {
            let mut last = None;
            let mut got = None;
            for _ in 0..=retries {
                match prior_artifact(cdn, &key) {
                    Ok(p) => {
                        got = Some(p);
                        break;
                    }
                    Err(e) => last = Some(e),
                }
            }
            match got {
                Some(p) => p,
                None => return Err(last.expect("failed attempt recorded")),
            }
        };
        let mut by_band: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for label in &bands.labels {
            if batch.is_degraded(stat, label) {
                if let Some(old) = prior.as_ref().and_then(|p| p.bands.get(label)) {
                    by_band.insert(label.clone(), old.clone());
                }
                continue;
            }
            let texts: Vec<String> = batch
                .templates
                .iter()
                .filter(|t| t.stat_type == stat && &t.band == label)
                .map(|t| t.text.clone())
                .collect();
            by_band.insert(label.clone(), texts);
        }
        let artifact = SlotArtifact::new(stat, by_band);
        let bytes = serde_json::to_vec_pretty(&artifact).expect("artifact serializes");
        let changed = with_retry(&|| cdn.publish(&key, &bytes))?;
        report.artifacts += 1;
        if changed {
            report.purged.push(key);
        } else {
            report.unchanged.push(key);
        }
    }
    Ok(report)
}

/// In-memory view of the live artifacts used by the fill endpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArtifactSet {
    pub bands: Bands,
    pub by_stat: HashMap<String, SlotArtifact>,
}

impl ArtifactSet {
    /// Loads every statistic's artifact through the CDN. Missing artifacts
    /// are skipped.
    pub fn from_cdn(cdn: &Cdn, bands: Bands) -> Result<Self, SlotError> {
        let mut by_stat = HashMap::new();
        for (stat, _) in STAT_TYPES {
            let key = artifact_key(stat);
            match cdn.fetch(&key) {
                Ok(entry) => {
                    let a: SlotArtifact = serde_json::from_slice(&entry.bytes).map_err(|e| SlotError::BadArtifact {
                        key: key.clone(),
                        message: e.to_string(),
                    })?;
                    by_stat.insert(stat.to_string(), a);
                }
                Err(StoreError::NotFound(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(Self { bands, by_stat })
    }

    pub fn from_batch(batch: &BatchResult, bands: Bands) -> Self {
        let mut grouped: HashMap<String, BTreeMap<String, Vec<String>>> = HashMap::new();
        for t in &batch.templates {
            grouped
                .entry(t.stat_type.clone())
                .or_default()
                .entry(t.band.clone())
                .or_default()
                .push(t.text.clone());
        }
        let by_stat = grouped.into_iter().map(|(s, b)| (s.clone(), SlotArtifact::new(s, b))).collect();
        Self { bands, by_stat }
    }

    pub fn templates(&self, stat: &str, band: &str) -> &[String] {
        self.by_stat
            .get(stat)
            .and_then(|a| a.bands.get(band))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn template_count(&self) -> usize {
        self.by_stat.values().flat_map(|a| a.bands.values()).map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerInfo {
    pub first_name: String,
    pub last_name: String,
    pub position: String,
    #[serde(default)]
    pub team: Option<String>,
    #[serde(default)]
    pub opponent: Option<String>,
    /// Raw statistic values keyed by statistic name.
    #[serde(default)]
    pub stats: BTreeMap<String, f64>,
}

impl PlayerInfo {
    pub fn full_name(&self) -> String {
        format!("{} {}", self.first_name, self.last_name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPayload {
    pub user_id: String,
    #[serde(default)]
    pub week: u32,
    pub roster: Vec<PlayerInfo>,
    #[serde(default)]
    pub league: Value,
    /// Need per roster position in `[0, 1]`.
    #[serde(default)]
    pub team_weaknesses: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleEntry {
    pub stat_type: String,
    pub percentile: f64,
    /// Explicit placeholder values; these win over payload-derived ones.
    #[serde(default)]
    pub values: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Personalized {
    pub sentences: Vec<String>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => n.as_f64().map(|f| number_text(round2(f))),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn derived_value(name: &str, payload: &UserPayload, player: &PlayerInfo, entry: &RationaleEntry) -> Option<String> {
    let stat_value = || player.stats.get(&entry.stat_type).copied();
    match name {
        "first_name" => Some(player.first_name.clone()),
        "last_name" => Some(player.last_name.clone()),
        "position" => Some(player.position.clone()),
        "team" => player.team.clone(),
        "opponent" => player.opponent.clone(),
        "week" => (payload.week > 0).then(|| payload.week.to_string()),
        "percentile" => Some(ordinal(entry.percentile.round() as i64)),
        "value" => stat_value().map(|v| number_text(round2(v))),
        "projection_points" => player
            .stats
            .get("next_game_projection")
            .map(|v| number_text(round2(*v))),
        "team_gain" => {
            let need = payload.team_weaknesses.get(&player.position)?;
            stat_value().map(|v| number_text(round2(v * need)))
        }
        _ => None,
    }
}

/// Fills each rationale entry's template. Entries whose template needs a
/// value that is not available are skipped with a diagnostic; a returned
/// sentence never contains an unresolved slot.
pub fn personalize(set: &ArtifactSet, payload: &UserPayload, player: &str, rationale: &[RationaleEntry]) -> Personalized {
    let mut out = Personalized::default();
    let Some(info) = payload
        .roster
        .iter()
        .find(|p| p.full_name() == player || p.last_name == player)
    else {
        if !rationale.is_empty() {
            out.diagnostics.push(format!("player `{player}` is not on the roster"));
        }
        return out;
    };
    for entry in rationale {
        let band = match set.bands.band(entry.percentile) {
            Ok(b) => b,
            Err(e) => {
                out.diagnostics.push(format!("{}: {e}", entry.stat_type));
                continue;
            }
        };
        let choices = set.templates(&entry.stat_type, band);
        if choices.is_empty() {
            out.diagnostics.push(format!("{}: no template for band `{band}`", entry.stat_type));
            continue;
        }
        let h = fnv1a64_parts([
            payload.user_id.as_bytes(),
            info.full_name().as_bytes(),
            &payload.week.to_le_bytes(),
            entry.stat_type.as_bytes(),
        ]);
        let template = &choices[(h % choices.len() as u64) as usize];

        let mut missing = None;
        let filled = placeholder_re().replace_all(template, |c: &regex::Captures<'_>| {
            let name = canonical_placeholder(&c[1]);
            let v = entry
                .values
                .get(&name)
                .and_then(value_text)
                .or_else(|| derived_value(&name, payload, info, entry))
                .filter(|v| !v.contains(['{', '}']));
            match v {
                Some(v) => v,
                None => {
                    missing.get_or_insert(name);
                    String::new()
                }
            }
        });
        match missing {
            Some(name) => out
                .diagnostics
                .push(format!("{}: no value for placeholder `{name}`", entry.stat_type)),
            None => out.sentences.push(filled.into_owned()),
        }
    }
    out
}
