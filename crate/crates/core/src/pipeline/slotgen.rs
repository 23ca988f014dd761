//! Slot-filler batch run and the online fill step, wired to the pipeline's
//! generator and CDN.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::load_bank;
use super::{Pipeline, PipelineError};
use crate::slots::{
    batch_generate, export_artifacts, personalize, slot_bank, ArtifactSet, BatchConfig, Cell, ExportReport, Personalized, RationaleEntry,
    UserPayload, DEFAULT_MAX_ATTEMPTS,
};

const EXPORT_RETRIES: u32 = 2;
const SLOT_PREFIX: &str = "slots/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRun {
    pub templates: usize,
    pub generations: usize,
    pub rejected: usize,
    pub degraded: Vec<Cell>,
    pub export: ExportReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizeRequest {
    pub payload: UserPayload,
    pub player: String,
    #[serde(default)]
    pub rationale: Vec<RationaleEntry>,
}

impl Pipeline {
    /// Generates every (statistic, band) cell and exports the artifacts.
    /// Nothing is exported when the generator fails part-way.
    pub fn batch_slotgen(&self) -> Result<SlotRun, PipelineError> {
        let s = &self.config.slots;
        let bank = match &s.exemplar_bank {
            Some(spec) => load_bank(spec).map_err(|m| PipelineError::Config(vec![m]))?,
            None => slot_bank(),
        };
        let config = BatchConfig {
            k: s.k,
            seed: s.seed,
            bands: s.bands.clone(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            ..BatchConfig::new(s.variants_per_cell)
        };
        let batch = batch_generate(&config, self.generator.as_ref(), &self.engine, &bank)?;
        let export = export_artifacts(&batch, &self.cdn, &s.bands, EXPORT_RETRIES);
        *self.slot_cache.write().expect("slot cache poisoned") = None;
        let export = export?;
        Ok(SlotRun {
            templates: batch.templates.len(),
            generations: batch.generations,
            rejected: batch.rejected,
            degraded: batch.degraded,
            export,
        })
    }

    /// The live artifacts, read through the CDN once and then kept until
    /// the next export or a purge of a slot key.
    pub fn artifact_set(&self) -> Result<Arc<ArtifactSet>, PipelineError> {
        if let Some(set) = self.slot_cache.read().expect("slot cache poisoned").as_ref() {
            return Ok(set.clone());
        }
        let set = Arc::new(ArtifactSet::from_cdn(&self.cdn, self.config.slots.bands.clone())?);
        *self.slot_cache.write().expect("slot cache poisoned") = Some(set.clone());
        Ok(set)
    }

    pub fn personalize(&self, req: &PersonalizeRequest) -> Result<Personalized, PipelineError> {
        let set = self.artifact_set()?;
        Ok(personalize(&set, &req.payload, &req.player, &req.rationale))
    }

    /// Evicts `keys` from the CDN cache. Returns how many were cached.
    pub fn purge<S: AsRef<str>>(&self, keys: &[S]) -> usize {
        if keys.iter().any(|k| k.as_ref().starts_with(SLOT_PREFIX)) {
            *self.slot_cache.write().expect("slot cache poisoned") = None;
        }
        self.cdn.purge(keys)
    }
}
