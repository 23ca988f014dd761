//! Human review actions over pending content, with optimistic locking on
//! the content revision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Pipeline, PipelineError, PublishedContent};
use crate::model::{encode, ContentState, GeneratedContent, VerificationVerdict};
use crate::store::{content_object_key, StoreError};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("no content `{0}`")]
    NotFound(String),
    #[error("conflict on `{id}`: {message}")]
    Conflict {
        id: String,
        message: String,
        state: ContentState,
        revision: u32,
    },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl From<StoreError> for ReviewError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => ReviewError::NotFound(id),
            other => ReviewError::Pipeline(other.into()),
        }
    }
}

/// What a reviewer sees of a content item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub content_id: String,
    pub scene: String,
    pub scene_type: String,
    pub raw_text: String,
    pub final_text: Option<String>,
    pub verdicts: Vec<VerificationVerdict>,
    pub state: ContentState,
    pub revision: u32,
}

impl From<GeneratedContent> for ReviewItem {
    fn from(c: GeneratedContent) -> Self {
        let scene_type = c.scene.rsplit('/').next().unwrap_or_default().to_string();
        Self {
            content_id: c.content_id,
            scene: c.scene,
            scene_type,
            raw_text: c.raw_text,
            final_text: c.final_text,
            verdicts: c.verdicts,
            state: c.state,
            revision: c.revision,
        }
    }
}

fn conflict(c: &GeneratedContent, message: impl Into<String>) -> ReviewError {
    ReviewError::Conflict {
        id: c.content_id.clone(),
        message: message.into(),
        state: c.state,
        revision: c.revision,
    }
}

fn check_revision(c: &GeneratedContent, expected: Option<u32>) -> Result<(), ReviewError> {
    match expected {
        Some(r) if r != c.revision => Err(conflict(c, format!("revision is {} not {r}", c.revision))),
        _ => Ok(()),
    }
}

fn require_pending(c: &GeneratedContent) -> Result<(), ReviewError> {
    if c.state == ContentState::PendingReview {
        Ok(())
    } else {
        Err(conflict(c, format!("item is {} not pending_review", c.state.as_str())))
    }
}

impl Pipeline {
    pub fn review_list(&self, state: ContentState) -> Result<Vec<ReviewItem>, ReviewError> {
        let store = self.store();
        store
            .list_by_state(state)
            .into_iter()
            .map(|id| Ok(store.get_content(&id)?.into()))
            .collect()
    }

    pub fn review_get(&self, id: &str) -> Result<ReviewItem, ReviewError> {
        Ok(self.store().get_content(id)?.into())
    }

    /// Replaces the text of a pending item. Fails with a conflict when the
    /// item moved past `expected_revision`.
    pub fn review_edit(&self, id: &str, text: &str, expected_revision: u32) -> Result<ReviewItem, ReviewError> {
        if text.trim().is_empty() {
            return Err(ReviewError::Invalid("edited text is empty".into()));
        }
        let store = self.store();
        let lock = store.lock_content(id);
        let _guard = lock.lock().expect("content lock poisoned");
        let mut c = store.get_content(id)?;
        check_revision(&c, Some(expected_revision))?;
        require_pending(&c)?;
        c.final_text = Some(text.to_string());
        c.revision += 1;
        store.put_content(&c)?;
        Ok(c.into())
    }

    /// Publishes a pending item and purges its CDN key. Returns the item and
    /// whether the public object changed.
    pub fn review_approve(&self, id: &str, expected_revision: Option<u32>) -> Result<(ReviewItem, bool), ReviewError> {
        let store = self.store();
        let lock = store.lock_content(id);
        let _guard = lock.lock().expect("content lock poisoned");
        let mut c = store.get_content(id)?;
        check_revision(&c, expected_revision)?;
        require_pending(&c)?;
        c.transition(ContentState::Published).map_err(|s| conflict(&c, format!("cannot publish from {}", s.as_str())))?;
        store.put_content(&c)?;
        let bytes = encode(&PublishedContent::of(&c)).map_err(PipelineError::from)?;
        let changed = self.cdn.publish(&content_object_key(id), &bytes)?;
        Ok((c.into(), changed))
    }

    /// Rejects a pending item. With `regenerate` its source event goes back
    /// on the fast-track partitions and comes back as a new revision; story
    /// items are recomposed on the spot.
    pub fn review_reject(&self, id: &str, expected_revision: Option<u32>, regenerate: bool) -> Result<ReviewItem, ReviewError> {
        let store = self.store();
        let item = {
            let lock = store.lock_content(id);
            let _guard = lock.lock().expect("content lock poisoned");
            let mut c = store.get_content(id)?;
            check_revision(&c, expected_revision)?;
            require_pending(&c)?;
            c.transition(ContentState::Rejected).map_err(|s| conflict(&c, format!("cannot reject from {}", s.as_str())))?;
            store.put_content(&c)?;
            c
        };
        if regenerate {
            match self.story_source(id)? {
                Some(req) => {
                    self.compose_story(&req)?;
                }
                None => {
                    let source = self.source_event(id)?;
                    self.fast_track(source)?;
                }
            }
        }
        Ok(item.into())
    }
}
