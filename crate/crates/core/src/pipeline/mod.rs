//! The end-to-end dataflow: bus → congruency check → prompt → generator →
//! post-processing → store/CDN or the review queue.
//!
//! [`Pipeline`] owns every component and handles one delivery at a time via
//! [`Pipeline::process`]; [`Runner`] drives it over a replay script with a
//! simulated or a wall clock. Review actions, the story composer and the slot
//! batch live in their own files as further `impl Pipeline` blocks.

mod config;
mod review;
mod runner;
mod slotgen;
mod story;
pub mod synthetic;

pub use config::{
    load_bank, CongruencyConfig, GeneratorConfig, GeneratorKind, PipelineConfig, ReplayConfig, SceneConfig, SchedulerConfig, SlotsConfig, StoreBackend,
    StoreConfig, TopicConfig,
};
pub use review::{ReviewError, ReviewItem};
pub use runner::{LatencySummary, ReplayScript, RunSummary, Runner, ScriptEntry, ScriptItem};
pub use slotgen::{PersonalizeRequest, SlotRun};
pub use story::{StoryKind, StoryMode, StoryRequest, StoryResult, STORY_CHAR_LIMIT};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bus::{BusConfig, BusError, Envelope, EventBus, Topic, DEFAULT_LEASE};
use crate::clock::{SharedClock, SimClock, SystemClock};
use crate::generator::{DecodingParams, GenerateError, MockGenerator, RemoteConfig, RemoteGenerator, TextGenerator};
use crate::hash::fnv1a64;
use crate::model::{
    encode, ContentState, GeneratedContent, GroundTruthFeeds, ModelError, Priority, PromptDraft, ScoringEvent, VerificationVerdict,
};
use crate::ontology::{PreprocessOutcome, Preprocessor, RuleRegistry, NAME_FIELDS};
use crate::postprocess::{PostError, PostProcessor};
use crate::prompt::{retrieve_context, ExemplarBank, Passage, PromptEngine, PromptError, PromptOptions, RetrievalCorpus};
use crate::slots::SlotError;
use crate::store::{content_object_key, Cdn, ContentStore, FsBackend, Kind, StoreError};

/// Consumer group the pipeline reads with.
pub const CONSUMER_GROUP: &str = "pipeline";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("no scene registered for `{0}`")]
    UnknownScene(String),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Post(#[from] PostError),
    #[error(transparent)]
    Slots(#[from] SlotError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
}

#[derive(Debug, Clone)]
struct SceneRuntime {
    config: SceneConfig,
    bank: Option<ExemplarBank>,
    params: DecodingParams,
}

/// The public object stored at `content/{id}.json` and served by the CDN.
/// It carries no revision, so republishing identical text is a no-op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedContent {
    pub content_id: String,
    pub scene: String,
    pub text: String,
}

impl PublishedContent {
    pub fn of(content: &GeneratedContent) -> Self {
        Self {
            content_id: content.content_id.clone(),
            scene: content.scene.clone(),
            text: content.final_text.clone().unwrap_or_else(|| content.raw_text.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Published,
    PendingReview,
    Rejected,
    DeadLetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TraceOutcome {
    Requeued {
        delay_ms: u64,
        reason: String,
    },
    DeadLettered {
        reason: String,
    },
    Stored {
        state: ContentState,
        content_id: String,
        revision: u32,
        generations: u32,
        corrected: usize,
        /// The CDN object changed and its key was purged.
        purged: bool,
    },
}

/// One handled delivery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub event_id: String,
    pub topic: String,
    pub partition: usize,
    pub sequence: u64,
    /// Congruency attempts before this one.
    pub attempt: u32,
    pub priority: Priority,
    pub appended_ms: u64,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub outcome: TraceOutcome,
    #[serde(default)]
    pub verdicts: Vec<VerificationVerdict>,
}

impl EventTrace {
    pub fn terminal(&self) -> Option<Terminal> {
        match &self.outcome {
            TraceOutcome::Requeued { .. } => None,
            TraceOutcome::DeadLettered { .. } => Some(Terminal::DeadLetter),
            TraceOutcome::Stored { state, .. } => Some(match state {
                ContentState::Published => Terminal::Published,
                ContentState::Rejected => Terminal::Rejected,
                _ => Terminal::PendingReview,
            }),
        }
    }
}

/// What the consumer should do with a delivery after [`Pipeline::process`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Ack,
    Requeue(Duration),
    DeadLetter,
}

/// Optional replacements for the components a config would build.
#[derive(Default)]
pub struct PipelineParts {
    pub clock: Option<Arc<SimClock>>,
    pub generator: Option<Arc<dyn TextGenerator>>,
    pub store: Option<ContentStore>,
    pub feeds: Option<GroundTruthFeeds>,
    pub corpus: Option<RetrievalCorpus>,
}

pub struct Pipeline {
    config: PipelineConfig,
    clock: SharedClock,
    sim: Option<Arc<SimClock>>,
    bus: EventBus,
    feeds: RwLock<Arc<GroundTruthFeeds>>,
    engine: PromptEngine,
    preprocessor: Preprocessor,
    post: PostProcessor,
    generator: Arc<dyn TextGenerator>,
    cdn: Cdn,
    scenes: BTreeMap<String, SceneRuntime>,
    corpus: Option<RetrievalCorpus>,
    traces: Mutex<Vec<EventTrace>>,
    /// Submissions per event id not yet accounted for by a run summary.
    submissions: Mutex<BTreeMap<String, usize>>,
    /// Parsed slot artifacts; dropped on export and on purge of a slot key.
    slot_cache: RwLock<Option<Arc<crate::slots::ArtifactSet>>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("scenes", &self.scenes.keys().collect::<Vec<_>>())
            .field("generator", &self.generator.name())
            .field("simulated", &self.sim.is_some())
            .finish()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, PipelineError> {
    let load = |message: String| PipelineError::Load {
        path: path.clone(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| load(e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| load(e.to_string()))
}

fn ms(d: Duration) -> u64 {
    d.as_millis() as u64
}

/// Bus key for an event: the match for tennis, else the first person named,
/// else the event id. Events sharing a key share a partition.
pub fn routing_key(event: &ScoringEvent) -> String {
    if let Some(m) = event.payload.get("match_id") {
        return match m {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
    }
    NAME_FIELDS
        .iter()
        .find_map(|f| event.str_field(f))
        .map(str::to_string)
        .unwrap_or_else(|| event.event_id.clone())
}

fn source_key(content_id: &str) -> String {
    format!("source/{content_id}")
}

impl Pipeline {
    /// Builds everything from `config` on the wall clock.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        Self::with_parts(config, PipelineParts::default())
    }

    /// Builds everything from `config` on a fresh simulated clock.
    pub fn simulated(config: PipelineConfig) -> Result<Self, PipelineError> {
        Self::with_parts(
            config,
            PipelineParts {
                clock: Some(SimClock::new()),
                ..Default::default()
            },
        )
    }

    pub fn with_parts(config: PipelineConfig, parts: PipelineParts) -> Result<Self, PipelineError> {
        let mut engine = PromptEngine::builtin();
        if let Some(dir) = &config.templates_dir {
            engine.load_dir(dir)?;
        }
        config.validate(&engine)?;

        let mut scenes = BTreeMap::new();
        for s in &config.scenes {
            engine.bind_scene(s.key(), &s.template)?;
            let bank = match &s.exemplar_bank {
                Some(spec) => Some(load_bank(spec).map_err(|m| PipelineError::Config(vec![m]))?),
                None => None,
            };
            let params = DecodingParams::preset(&s.preset).expect("validated preset");
            scenes.insert(
                s.key(),
                SceneRuntime {
                    config: s.clone(),
                    bank,
                    params,
                },
            );
        }
        story::bind_story_scenes(&mut engine)?;

        let feeds = match (parts.feeds, &config.feeds) {
            (Some(f), _) => f,
            (None, Some(path)) => read_json(path)?,
            (None, None) => GroundTruthFeeds::default(),
        };
        feeds.validate()?;

        let corpus = match (parts.corpus, &config.corpus) {
            (Some(c), _) => Some(c),
            (None, Some(path)) => Some(RetrievalCorpus::new(read_json::<Vec<Passage>>(path)?)?),
            (None, None) => None,
        };

        let store = match parts.store {
            Some(s) => s,
            None => match config.store.backend {
                StoreBackend::Memory => ContentStore::memory(),
                StoreBackend::Fs => {
                    let root = config.store.path.clone().unwrap_or_else(|| PathBuf::from("store"));
                    ContentStore::new(Arc::new(FsBackend::open(root)?))?
                }
            },
        };

        let generator: Arc<dyn TextGenerator> = match parts.generator {
            Some(g) => g,
            None => build_generator(&config.generator, &feeds),
        };

        let post = match &config.postprocess_dir {
            Some(dir) => PostProcessor::from_dir(dir)?,
            None => PostProcessor::builtin(),
        };

        let (clock, sim): (SharedClock, _) = match parts.clock {
            Some(sim) => (sim.clone(), Some(sim)),
            None => (SystemClock::shared(), None),
        };
        let bus = EventBus::with_config(
            clock.clone(),
            BusConfig {
                max_attempts: config.congruency.max_attempts,
                lease: DEFAULT_LEASE,
            },
        );
        for t in &config.topics {
            bus.create_topic(Topic::new(&t.name, t.partitions).with_fast_track(t.fast_track.iter().copied()))?;
        }
        let preprocessor = Preprocessor::new(RuleRegistry::shipped())
            .with_requeue_delay(Duration::from_millis(config.congruency.requeue_delay_ms))
            .with_max_attempts(config.congruency.max_attempts);

        Ok(Self {
            config,
            clock,
            sim,
            bus,
            feeds: RwLock::new(Arc::new(feeds)),
            engine,
            preprocessor,
            post,
            generator,
            cdn: Cdn::new(store),
            scenes,
            corpus,
            traces: Mutex::default(),
            submissions: Mutex::default(),
            slot_cache: RwLock::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    /// The simulated clock, when the pipeline runs on one.
    pub fn sim_clock(&self) -> Option<&Arc<SimClock>> {
        self.sim.as_ref()
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn cdn(&self) -> &Cdn {
        &self.cdn
    }

    pub fn store(&self) -> &ContentStore {
        self.cdn.origin()
    }

    pub fn engine(&self) -> &PromptEngine {
        &self.engine
    }

    pub fn generator(&self) -> &Arc<dyn TextGenerator> {
        &self.generator
    }

    pub fn post_processor(&self) -> &PostProcessor {
        &self.post
    }

    pub fn corpus(&self) -> Option<&RetrievalCorpus> {
        self.corpus.as_ref()
    }

    pub fn scene(&self, key: &str) -> Option<&SceneConfig> {
        self.scenes.get(key).map(|s| &s.config)
    }

    /// Snapshot of the live feeds.
    pub fn feeds(&self) -> Arc<GroundTruthFeeds> {
        self.feeds.read().expect("feeds poisoned").clone()
    }

    pub fn apply_feed_patch(&self, patch: &Value) -> Result<(), PipelineError> {
        let mut guard = self.feeds.write().expect("feeds poisoned");
        Arc::make_mut(&mut guard).apply_patch(patch)?;
        Ok(())
    }

    pub fn traces(&self) -> Vec<EventTrace> {
        self.traces.lock().expect("traces poisoned").clone()
    }

    pub fn take_traces(&self) -> Vec<EventTrace> {
        std::mem::take(&mut *self.traces.lock().expect("traces poisoned"))
    }

    fn take_submissions(&self) -> BTreeMap<String, usize> {
        std::mem::take(&mut *self.submissions.lock().expect("submissions poisoned"))
    }

    fn record(&self, trace: EventTrace) {
        self.traces.lock().expect("traces poisoned").push(trace);
    }

    fn topic_for(&self, event: &ScoringEvent) -> Result<String, PipelineError> {
        let key = format!("{}/{}", event.property, event.scene_type);
        self.scenes
            .get(&key)
            .map(|s| s.config.topic_name())
            .ok_or(PipelineError::UnknownScene(key))
    }

    /// Publishes `event` onto its scene's topic and returns the partition.
    pub fn submit(&self, event: ScoringEvent) -> Result<usize, PipelineError> {
        event.validate()?;
        let topic = self.topic_for(&event)?;
        let key = routing_key(&event);
        let priority = event.priority;
        let id = event.event_id.clone();
        let partition = self.bus.publish(&topic, &key, event, priority)?;
        *self.submissions.lock().expect("submissions poisoned").entry(id).or_insert(0) += 1;
        Ok(partition)
    }

    /// Resubmits `event` on the fast-track partitions. Its content id is the
    /// event id, so the result replaces the existing item as a new revision.
    pub fn fast_track(&self, mut event: ScoringEvent) -> Result<usize, PipelineError> {
        event.priority = Priority::FastTrack;
        event.attempt_count = 0;
        self.submit(event)
    }

    /// Handles one delivery and says how to settle it. `started` is when a
    /// worker picked it up. The caller settles the envelope and records the
    /// trace.
    pub fn process(&self, envelope: &Envelope, started: Duration) -> (Disposition, EventTrace) {
        let event = &envelope.payload;
        let (disposition, outcome, verdicts) = self.handle(event);
        let finished = if self.sim.is_some() {
            started + Duration::from_millis(self.config.replay.service_time_ms)
        } else {
            self.clock.now()
        };
        let trace = EventTrace {
            event_id: event.event_id.clone(),
            topic: envelope.topic.clone(),
            partition: envelope.partition,
            sequence: envelope.sequence,
            attempt: event.attempt_count,
            priority: event.priority,
            appended_ms: ms(envelope.appended_at),
            started_ms: ms(started),
            finished_ms: ms(finished),
            outcome,
            verdicts,
        };
        (disposition, trace)
    }

    fn handle(&self, event: &ScoringEvent) -> (Disposition, TraceOutcome, Vec<VerificationVerdict>) {
        let key = format!("{}/{}", event.property, event.scene_type);
        let Some(scene) = self.scenes.get(&key) else {
            return dead(format!("no scene registered for `{key}`"));
        };
        let feeds = self.feeds();
        let draft = PromptDraft::new(scene.config.instruction.clone(), key.clone());
        match self.preprocessor.preprocess(event, &draft, &feeds) {
            PreprocessOutcome::Requeue { delay, verdict } => (
                Disposition::Requeue(delay),
                TraceOutcome::Requeued {
                    delay_ms: ms(delay),
                    reason: verdict.detail,
                },
                Vec::new(),
            ),
            PreprocessOutcome::DeadLetter { verdict } => dead(verdict.detail),
            PreprocessOutcome::Clean { data, draft, .. } => match self.generate_and_store(event, scene, &data, &draft, &feeds) {
                Ok(done) => done,
                Err(PipelineError::Generate(e)) if e.is_retryable() => retry(&self.config, e.to_string()),
                Err(PipelineError::Store(StoreError::Unavailable(m))) => retry(&self.config, m),
                Err(e) => dead(e.to_string()),
            },
        }
    }

    fn generate_and_store(
        &self,
        event: &ScoringEvent,
        scene: &SceneRuntime,
        data: &Value,
        draft: &PromptDraft,
        feeds: &GroundTruthFeeds,
    ) -> Result<(Disposition, TraceOutcome, Vec<VerificationVerdict>), PipelineError> {
        let key = &draft.desired_scene;
        let subjects: Vec<String> = NAME_FIELDS
            .iter()
            .filter_map(|f| data.get(*f).and_then(Value::as_str))
            .map(str::to_string)
            .collect();
        // Pronouns are only enforced on single-subject pieces.
        let person = match subjects.as_slice() {
            [one] => feeds.person(one),
            _ => None,
        };
        let passages: Vec<Passage> = match (&self.corpus, scene.config.context_passages) {
            (Some(corpus), k) if k > 0 => {
                let query = if subjects.is_empty() { draft.instruction.clone() } else { subjects.join(" ") };
                retrieve_context(&query, None, corpus, k).into_iter().map(|s| s.passage).collect()
            }
            _ => Vec::new(),
        };
        let seed = fnv1a64(event.event_id.as_bytes());
        let policy = &scene.config.policy;
        let opts = PromptOptions {
            bank: scene.bank.as_ref(),
            k: scene.config.k,
            seed,
            context: &passages,
            avoid_topics: &policy.avoid_topics,
            preamble: &scene.config.preamble,
            subject: person,
            input_format: scene.config.input_format.as_deref(),
        };
        let prompt = self.engine.build_prompt(draft, data, &opts)?;

        let generated = self
            .post
            .post_with_regeneration(scene.config.max_attempts, key, feeds, person, &subjects, policy, |attempt| {
                let params = scene.params.clone().with_seed(seed.wrapping_add(attempt as u64));
                self.generator.generate(&prompt, &params).map(|g| g.text)
            });
        let (raw, final_text, verdicts, generations, state) = match generated {
            Ok(out) => {
                let state = if out.state == ContentState::PendingReview || scene.config.review_required {
                    ContentState::PendingReview
                } else {
                    ContentState::Published
                };
                (out.raw, Some(out.result.text), out.result.verdicts, out.attempts, state)
            }
            Err(e) if e.is_retryable() => return Err(e.into()),
            Err(_) => (String::new(), None, Vec::new(), 1, ContentState::Rejected),
        };

        let store = self.store();
        let lock = store.lock_content(&event.event_id);
        let _guard = lock.lock().expect("content lock poisoned");
        let prior = match store.get_content(&event.event_id) {
            Ok(c) => Some(c),
            Err(StoreError::NotFound(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let mut content = GeneratedContent::draft(event.event_id.clone(), event.event_id.clone(), raw);
        content.scene = key.clone();
        content.final_text = final_text;
        content.verdicts = verdicts.clone();
        content.revision = prior.map_or(1, |p| p.revision + 1);
        content.transition(state).expect("draft reaches every state");

        let mut source = event.clone();
        source.attempt_count = 0;
        store.put(Kind::Document, &source_key(&content.content_id), &encode(&source)?)?;
        store.put_content(&content)?;
        let purged = if state == ContentState::Published {
            self.cdn
                .publish(&content_object_key(&content.content_id), &encode(&PublishedContent::of(&content))?)?
        } else {
            false
        };
        let corrected = content.verdicts.iter().filter(|v| v.status == crate::model::VerdictStatus::Corrected).count();
        Ok((
            Disposition::Ack,
            TraceOutcome::Stored {
                state,
                content_id: content.content_id,
                revision: content.revision,
                generations,
                corrected,
                purged,
            },
            verdicts,
        ))
    }

    /// The event a content item was generated from.
    pub fn source_event(&self, content_id: &str) -> Result<ScoringEvent, PipelineError> {
        let stored = self.store().get(Kind::Document, &source_key(content_id))?;
        Ok(serde_json::from_slice(&stored.bytes).map_err(ModelError::from)?)
    }

    /// Processes everything already on the bus, including delayed requeues.
    pub fn drain(&self) -> Result<RunSummary, PipelineError> {
        Runner::new(self).run(&ReplayScript::default())
    }
}

fn dead(reason: String) -> (Disposition, TraceOutcome, Vec<VerificationVerdict>) {
    (Disposition::DeadLetter, TraceOutcome::DeadLettered { reason }, Vec::new())
}

fn retry(config: &PipelineConfig, reason: String) -> (Disposition, TraceOutcome, Vec<VerificationVerdict>) {
    let delay = Duration::from_millis(config.congruency.requeue_delay_ms);
    (
        Disposition::Requeue(delay),
        TraceOutcome::Requeued {
            delay_ms: ms(delay),
            reason,
        },
        Vec::new(),
    )
}

/// The configured backend. `GENTEXT_REMOTE_URL` and `GENTEXT_REMOTE_TOKEN`
/// override or supply the remote endpoint.
pub fn build_generator(config: &GeneratorConfig, feeds: &GroundTruthFeeds) -> Arc<dyn TextGenerator> {
    match config.kind {
        GeneratorKind::Mock => Arc::new(
            MockGenerator::new()
                .with_corruption_rate(config.corruption_rate)
                .with_roster(feeds.rosters.iter().map(|p| p.full_name.clone())),
        ),
        GeneratorKind::Remote => {
            let mut remote = config.remote.clone().unwrap_or_else(|| RemoteConfig::new(""));
            if let Ok(url) = std::env::var("GENTEXT_REMOTE_URL") {
                remote.url = url;
            }
            if remote.token_env.is_none() {
                remote.token_env = Some("GENTEXT_REMOTE_TOKEN".into());
            }
            Arc::new(RemoteGenerator::new(remote))
        }
    }
}
