//! Artist story composer. Free requests retrieve context from the whole
//! corpus; categorical requests only from passages tagged with the chosen
//! category. Every generated piece waits for review.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::review::{ReviewError, ReviewItem};
use super::{Pipeline, PipelineError};
use crate::generator::DecodingParams;
use crate::hash::fnv1a64_parts;
use crate::model::{encode, normalize_name, ContentState, GeneratedContent, PromptDraft};
use crate::postprocess::{ScreenPolicy, DEFAULT_MAX_ATTEMPTS};
use crate::prompt::{retrieve_context, Passage, PromptEngine, PromptError, PromptOptions, ScoredPassage};
use crate::store::{Kind, StoreError};

/// Every story piece is cut to this many characters.
pub const STORY_CHAR_LIMIT: usize = 150;

const CONTEXT_PASSAGES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoryMode {
    Free,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoryKind {
    Headline,
    Bullets,
    Witty,
    Summary,
}

impl StoryKind {
    pub const ALL: [StoryKind; 4] = [StoryKind::Headline, StoryKind::Bullets, StoryKind::Witty, StoryKind::Summary];

    pub fn as_str(&self) -> &'static str {
        match self {
            StoryKind::Headline => "headline",
            StoryKind::Bullets => "bullets",
            StoryKind::Witty => "witty",
            StoryKind::Summary => "summary",
        }
    }

    pub fn scene(&self) -> String {
        format!("music/story_{}", self.as_str())
    }

    fn instruction(&self) -> &'static str {
        match self {
            StoryKind::Headline => "Write one headline about {artist}.",
            StoryKind::Bullets => "Write two short bullets about {artist}.",
            StoryKind::Witty => "Write one witty line about {artist}.",
            StoryKind::Summary => "Summarize the story of {artist} in one sentence.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryRequest {
    pub artist: String,
    pub mode: StoryMode,
    /// Required exactly when `mode` is categorical.
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub avoid_topics: Vec<String>,
    pub kinds: Vec<StoryKind>,
}

impl StoryRequest {
    pub fn validate(&self) -> Result<(), String> {
        if self.artist.trim().is_empty() {
            return Err("artist is required".into());
        }
        if self.kinds.is_empty() {
            return Err("at least one output kind is required".into());
        }
        match (self.mode, &self.category) {
            (StoryMode::Categorical, None) => Err("categorical requests need a category".into()),
            (StoryMode::Categorical, Some(c)) if c.trim().is_empty() => Err("categorical requests need a category".into()),
            (StoryMode::Free, Some(_)) => Err("free requests take no category".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoryResult {
    /// Context shown to the model, in rank order.
    pub passages: Vec<ScoredPassage>,
    pub items: Vec<ReviewItem>,
}

fn story_source_key(id: &str) -> String {
    format!("story_source/{id}")
}

pub(super) fn bind_story_scenes(engine: &mut PromptEngine) -> Result<(), PromptError> {
    for kind in StoryKind::ALL {
        engine.bind_scene(kind.scene(), "grammys")?;
    }
    Ok(())
}

impl Pipeline {
    fn artist_known(&self, artist: &str) -> bool {
        let wanted = normalize_name(artist);
        let lower = artist.to_lowercase();
        self.feeds().rosters.iter().any(|p| normalize_name(&p.full_name) == wanted)
            || self
                .corpus
                .as_ref()
                .is_some_and(|c| c.passages().iter().any(|p| p.text.to_lowercase().contains(&lower)))
    }

    /// The single-kind request a story item came from.
    pub(super) fn story_source(&self, id: &str) -> Result<Option<StoryRequest>, ReviewError> {
        match self.store().get(Kind::Document, &story_source_key(id)) {
            Ok(s) => serde_json::from_slice(&s.bytes).map(Some).map_err(|e| ReviewError::Invalid(e.to_string())),
            Err(StoreError::NotFound(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Generates the requested pieces and parks them for review. Asking
    /// again for the same artist, mode, category and kind yields a new
    /// revision of the same item.
    pub fn compose_story(&self, req: &StoryRequest) -> Result<StoryResult, ReviewError> {
        req.validate().map_err(ReviewError::Invalid)?;
        if !self.artist_known(&req.artist) {
            return Err(ReviewError::Invalid(format!("unknown artist `{}`", req.artist)));
        }
        let category = req.category.as_deref();
        let passages = match (&self.corpus, req.mode) {
            (Some(corpus), _) => retrieve_context(&format!("{} {}", req.artist, category.unwrap_or_default()), category, corpus, CONTEXT_PASSAGES),
            (None, StoryMode::Categorical) => return Err(ReviewError::Invalid("no corpus loaded for categorical requests".into())),
            (None, StoryMode::Free) => Vec::new(),
        };
        let context: Vec<Passage> = passages.iter().map(|s| s.passage.clone()).collect();

        let base_policy = self.scene("music/artist_story").map(|s| s.policy.clone()).unwrap_or_default();
        let mut avoid = base_policy.avoid_topics.clone();
        for t in &req.avoid_topics {
            if !avoid.contains(t) {
                avoid.push(t.clone());
            }
        }
        let policy = ScreenPolicy {
            avoid_topics: avoid,
            char_limit: Some(STORY_CHAR_LIMIT),
            ..base_policy
        };
        let feeds = self.feeds();
        let person = feeds.person_loose(&req.artist);
        let artist = person.map_or(req.artist.clone(), |p| p.full_name.clone());
        let data = json!({"artist": artist, "category": category});
        let mode = serde_json::to_string(&req.mode).map_err(|e| ReviewError::Invalid(e.to_string()))?;

        let mut items = Vec::new();
        for kind in &req.kinds {
            let scene = kind.scene();
            let seed = fnv1a64_parts([artist.as_bytes(), mode.as_bytes(), category.unwrap_or_default().as_bytes(), scene.as_bytes()]);
            let draft = PromptDraft::new(kind.instruction().replace("{artist}", &artist), scene.clone());
            let opts = PromptOptions {
                seed,
                context: &context,
                avoid_topics: &policy.avoid_topics,
                subject: person,
                ..Default::default()
            };
            let prompt = self.engine.build_prompt(&draft, &data, &opts).map_err(PipelineError::from)?;

            let id = format!("story-{:016x}-{}", seed, kind.as_str());
            let store = self.store();
            let lock = store.lock_content(&id);
            let _guard = lock.lock().expect("content lock poisoned");
            let revision = store.get_content(&id).map_or(1, |c| c.revision + 1);
            // Later revisions sample differently.
            let seed = seed.wrapping_add(u64::from(revision - 1) << 8);
            let subjects: Vec<String> = person.map(|p| p.full_name.clone()).into_iter().collect();
            let out = self
                .post
                .post_with_regeneration(DEFAULT_MAX_ATTEMPTS, &scene, &feeds, person, &subjects, &policy, |attempt| {
                    let params = DecodingParams::music().with_seed(seed.wrapping_add(attempt as u64));
                    self.generator.generate(&prompt, &params).map(|g| g.text)
                })
                .map_err(PipelineError::from)?;

            let mut content = GeneratedContent::draft(id.clone(), format!("story:{artist}"), out.raw);
            content.scene = scene;
            content.final_text = Some(out.result.text);
            content.verdicts = out.result.verdicts;
            content.revision = revision;
            content.transition(ContentState::PendingReview).expect("draft to pending");
            let single = StoryRequest {
                kinds: vec![*kind],
                ..req.clone()
            };
            store.put(Kind::Document, &story_source_key(&id), &encode(&single).map_err(PipelineError::from)?)?;
            store.put_content(&content)?;
            items.push(content.into());
        }
        Ok(StoryResult { passages, items })
    }
}
