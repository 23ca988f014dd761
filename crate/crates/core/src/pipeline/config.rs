//! Declarative pipeline configuration and its startup validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::bus::{DEFAULT_MAX_ATTEMPTS, DEFAULT_REQUEUE_DELAY};
use crate::generator::{DecodingParams, RemoteConfig};
use crate::model::Property;
use crate::postprocess::{ScreenPolicy, DEFAULT_MAX_ATTEMPTS as DEFAULT_POST_ATTEMPTS};
use crate::prompt::{football_bank, ExemplarBank, PromptEngine};
use crate::slots::{slot_bank, Bands};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicConfig {
    pub name: String,
    pub partitions: usize,
    /// Partitions reserved for content-update traffic.
    #[serde(default)]
    pub fast_track: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub property: Property,
    pub scene_type: String,
    /// Registered template name.
    pub template: String,
    /// `builtin:<name>` or a path to an exemplar bank JSON file.
    #[serde(default)]
    pub exemplar_bank: Option<String>,
    #[serde(default)]
    pub k: usize,
    /// Decoding preset name (`golf`, `tennis`, `football`, `music`).
    pub preset: String,
    #[serde(default)]
    pub instruction: String,
    #[serde(default)]
    pub input_format: Option<String>,
    #[serde(default)]
    pub preamble: String,
    /// Passages retrieved from the corpus into the prompt's context block.
    #[serde(default)]
    pub context_passages: usize,
    #[serde(default)]
    pub policy: ScreenPolicy,
    /// Content waits for a human approve call before it is published.
    pub review_required: bool,
    /// Generation attempts before screening failures go to human review.
    #[serde(default = "default_post_attempts")]
    pub max_attempts: u32,
    /// Topic carrying this scene's events; defaults to the property name.
    #[serde(default)]
    pub topic: Option<String>,
}

fn default_post_attempts() -> u32 {
    DEFAULT_POST_ATTEMPTS
}

impl SceneConfig {
    pub fn key(&self) -> String {
        format!("{}/{}", self.property, self.scene_type)
    }

    pub fn topic_name(&self) -> String {
        self.topic.clone().unwrap_or_else(|| self.property.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StoreBackend {
    #[default]
    Memory,
    Fs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StoreConfig {
    #[serde(default)]
    pub backend: StoreBackend,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Seconds between slot batches. `GENTEXT_SLOT_INTERVAL_S` overrides it.
    pub slot_interval_s: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { slot_interval_s: 3600 }
    }
}

impl SchedulerConfig {
    pub fn effective_interval_s(&self) -> u64 {
        std::env::var("GENTEXT_SLOT_INTERVAL_S")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(self.slot_interval_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    /// Timestamps are divided by this factor.
    pub speed: f64,
    /// Simulated time one worker spends on an event.
    pub service_time_ms: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            speed: 1.0,
            service_time_ms: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongruencyConfig {
    pub requeue_delay_ms: u64,
    pub max_attempts: u32,
}

impl Default for CongruencyConfig {
    fn default() -> Self {
        Self {
            requeue_delay_ms: DEFAULT_REQUEUE_DELAY.as_millis() as u64,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GeneratorConfig {
    #[serde(default)]
    pub kind: GeneratorKind,
    #[serde(default)]
    pub corruption_rate: f64,
    /// Required for `remote`. `GENTEXT_REMOTE_URL` overrides the URL.
    #[serde(default)]
    pub remote: Option<RemoteConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotsConfig {
    pub variants_per_cell: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bands: Bands,
    /// `builtin:football_slot` or a path.
    #[serde(default)]
    pub exemplar_bank: Option<String>,
}

fn default_k() -> usize {
    crate::slots::DEFAULT_K
}

impl Default for SlotsConfig {
    fn default() -> Self {
        Self {
            variants_per_cell: 21,
            k: default_k(),
            seed: 0,
            bands: Bands::default(),
            exemplar_bank: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub topics: Vec<TopicConfig>,
    pub scenes: Vec<SceneConfig>,
    /// Initial ground-truth feed snapshot (JSON).
    #[serde(default)]
    pub feeds: Option<PathBuf>,
    /// Passage corpus for retrieval-augmented scenes (JSON).
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Extra `*.mustache` templates.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    /// Overrides for `patterns.json`, `pronouns.json`, `lexicons.json`.
    #[serde(default)]
    pub postprocess_dir: Option<PathBuf>,
    #[serde(default)]
    pub store: StoreConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub replay: ReplayConfig,
    #[serde(default)]
    pub congruency: CongruencyConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub slots: SlotsConfig,
}

fn scene(property: Property, scene_type: &str, template: &str, preset: &str, review_required: bool) -> SceneConfig {
    SceneConfig {
        property,
        scene_type: scene_type.into(),
        template: template.into(),
        exemplar_bank: None,
        k: 0,
        preset: preset.into(),
        instruction: String::new(),
        input_format: None,
        preamble: String::new(),
        context_passages: 0,
        policy: ScreenPolicy::default(),
        review_required,
        max_attempts: DEFAULT_POST_ATTEMPTS,
        topic: None,
    }
}

impl PipelineConfig {
    /// Every shipped scene with its property preset. Tennis and music content
    /// waits for a reviewer; golf and football publish automatically.
    pub fn builtin() -> Self {
        let mut golf = scene(Property::Golf, "shot", "golf_tennis", "golf", false);
        golf.instruction = "Describe the shot by {player} in one factual sentence.".into();
        let mut start = scene(Property::Tennis, "match_start", "golf_tennis", "tennis", true);
        start.instruction = "Write an opening line for the match between {player_one} and {player_two}.".into();
        let mut set_end = scene(Property::Tennis, "set_end", "golf_tennis", "tennis", true);
        set_end.instruction = "Summarize the set that {player_one} just won.".into();
        let mut football = scene(Property::Football, "grade_rationale", "football", "football", false);
        football.instruction = "Create a bullet point about next game projection.".into();
        football.exemplar_bank = Some("builtin:football_grade_rationale".into());
        football.k = 20;
        let mut music = scene(Property::Music, "artist_story", "grammys", "music", true);
        music.instruction = "Write two short bullets about {artist}.".into();
        music.context_passages = 3;
        music.policy = ScreenPolicy::default().with_avoid_topics(["violence", "drugs"]).with_char_limit(150);
        Self {
            topics: vec![
                TopicConfig {
                    name: "golf".into(),
                    partitions: 8,
                    fast_track: vec![6, 7],
                },
                TopicConfig {
                    name: "tennis".into(),
                    partitions: 4,
                    fast_track: vec![3],
                },
                TopicConfig {
                    name: "football".into(),
                    partitions: 4,
                    fast_track: vec![3],
                },
                TopicConfig {
                    name: "music".into(),
                    partitions: 2,
                    fast_track: vec![1],
                },
            ],
            scenes: vec![golf, start, set_end, football, music],
            feeds: None,
            corpus: None,
            templates_dir: None,
            postprocess_dir: None,
            store: StoreConfig::default(),
            scheduler: SchedulerConfig::default(),
            replay: ReplayConfig::default(),
            congruency: CongruencyConfig::default(),
            generator: GeneratorConfig::default(),
            slots: SlotsConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(vec![format!("parse: {e}")]))
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(vec![format!("{}: {e}", path.display())]))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.feeds);
        fix(&mut self.corpus);
        fix(&mut self.templates_dir);
        fix(&mut self.postprocess_dir);
        fix(&mut self.store.path);
        let fix_bank = |b: &mut Option<String>| {
            if let Some(s) = b {
                if !s.starts_with("builtin:") && Path::new(s.as_str()).is_relative() {
                    *s = base.join(s.as_str()).display().to_string();
                }
            }
        };
        for s in &mut self.scenes {
            fix_bank(&mut s.exemplar_bank);
        }
        fix_bank(&mut self.slots.exemplar_bank);
    }

    /// Checks every scene reference and returns all problems at once.
    pub fn validate(&self, engine: &PromptEngine) -> Result<(), PipelineError> {
        let mut problems = Vec::new();
        let topics: BTreeSet<&str> = self.topics.iter().map(|t| t.name.as_str()).collect();
        if topics.len() != self.topics.len() {
            problems.push("duplicate topic names".to_string());
        }
        for t in &self.topics {
            if t.partitions == 0 {
                problems.push(format!("topic `{}` has no partitions", t.name));
            }
            if t.fast_track.iter().any(|p| *p >= t.partitions) {
                problems.push(format!("topic `{}` fast-track partition out of range", t.name));
            }
            if !t.fast_track.is_empty() && t.fast_track.len() >= t.partitions {
                problems.push(format!("topic `{}` has no normal partitions left", t.name));
            }
        }
        let mut keys = BTreeSet::new();
        for s in &self.scenes {
            let key = s.key();
            if !keys.insert(key.clone()) {
                problems.push(format!("scene `{key}` defined twice"));
            }
            if engine.template(&s.template).is_none() {
                problems.push(format!("scene `{key}` references unknown template `{}`", s.template));
            }
            if DecodingParams::preset(&s.preset).is_none() {
                problems.push(format!("scene `{key}` references unknown preset `{}`", s.preset));
            }
            if !topics.contains(s.topic_name().as_str()) {
                problems.push(format!("scene `{key}` references unknown topic `{}`", s.topic_name()));
            }
            if s.max_attempts == 0 {
                problems.push(format!("scene `{key}` needs max_attempts ≥ 1"));
            }
            match &s.exemplar_bank {
                Some(spec) => match load_bank(spec) {
                    Ok(bank) if bank.examples.len() < s.k => problems.push(format!(
                        "scene `{key}` wants {} exemplars but `{spec}` has {}",
                        s.k,
                        bank.examples.len()
                    )),
                    Ok(_) => {}
                    Err(e) => problems.push(format!("scene `{key}`: {e}")),
                },
                None if s.k > 0 => problems.push(format!("scene `{key}` wants {} exemplars but has no bank", s.k)),
                None => {}
            }
        }
        if let Err(e) = self.slots.bands.validate() {
            problems.push(format!("slots: {e}"));
        }
        if self.generator.kind == GeneratorKind::Remote && self.generator.remote.is_none() && std::env::var("GENTEXT_REMOTE_URL").is_err() {
            problems.push("remote generator needs `generator.remote` or GENTEXT_REMOTE_URL".into());
        }
        if !(0.0..=1.0).contains(&self.generator.corruption_rate) {
            problems.push("generator.corruption_rate must be in [0, 1]".into());
        }
        if !(self.replay.speed > 0.0) {
            problems.push("replay.speed must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(problems))
        }
    }
}

/// Resolves `builtin:<name>` or reads a bank file.
pub fn load_bank(spec: &str) -> Result<ExemplarBank, String> {
    match spec.strip_prefix("builtin:") {
        Some("football_grade_rationale") => Ok(football_bank()),
        Some("football_slot") => Ok(slot_bank()),
        Some(other) => Err(format!("unknown builtin bank `{other}`")),
        None => {
            let bytes = std::fs::read(spec).map_err(|e| format!("{spec}: {e}"))?;
            ExemplarBank::from_json(&bytes).map_err(|e| format!("{spec}: {e}"))
        }
    }
}
