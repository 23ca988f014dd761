//! `p′′ = prompt(p′)`: templates, few-shot blocks and retrieved context.

mod fewshot;
mod retrieval;
mod template;

pub use fewshot::{assemble_few_shot, exemplar_block, ExemplarBank, STOP_SEQUENCE};
pub use retrieval::{retrieve_context, tokenize, Passage, RetrievalCorpus, Retriever, ScoredPassage, TfIdfRetriever};
pub use template::{is_truthy, render, Template};

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{EngineeredPrompt, Exemplar, PersonRecord, PromptDraft};
use crate::ontology::resolve_references;

/// Always present in the rendered preamble.
pub const HAP_CLAUSE: &str = "Do not include hateful, abusive or profane (HAP) content.";

pub const GOLF_TENNIS_TEMPLATE: &str = include_str!("../../assets/templates/golf_tennis.mustache");
pub const FOOTBALL_TEMPLATE: &str = include_str!("../../assets/templates/football.mustache");
pub const GRAMMYS_TEMPLATE: &str = include_str!("../../assets/templates/grammys.mustache");
pub const FOOTBALL_BANK: &str = include_str!("../../assets/exemplars/football_grade_rationale.json");

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template `{template}`: {message}")]
    Parse { template: String, message: String },
    #[error("template `{template}`: missing variable `{variable}`")]
    MissingVariable { template: String, variable: String },
    #[error("no template registered for scene `{0}`")]
    UnknownScene(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("scene `{scene}` wants {wanted} exemplars but only {available} exist")]
    NotEnoughExemplars {
        scene: String,
        wanted: usize,
        available: usize,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("asset: {0}")]
    Asset(String),
}

/// Everything besides the draft that goes into a prompt.
#[derive(Debug, Clone, Default)]
pub struct PromptOptions<'a> {
    pub bank: Option<&'a ExemplarBank>,
    /// Number of exemplars drawn from `bank`.
    pub k: usize,
    pub seed: u64,
    pub context: &'a [Passage],
    pub avoid_topics: &'a [String],
    pub preamble: &'a str,
    /// Subject of the piece; its pronoun class becomes an instruction.
    pub subject: Option<&'a PersonRecord>,
    /// `{field}` pattern for the input line. Canonical JSON of the clean data
    /// when absent.
    pub input_format: Option<&'a str>,
}

/// Registered templates and the scene → template mapping.
#[derive(Debug, Clone, Default)]
pub struct PromptEngine {
    templates: BTreeMap<String, Template>,
    scenes: BTreeMap<String, String>,
}

impl PromptEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped template family with the default scene bindings.
    pub fn builtin() -> Self {
        let mut engine = Self::new();
        for (name, body) in [
            ("golf_tennis", GOLF_TENNIS_TEMPLATE),
            ("football", FOOTBALL_TEMPLATE),
            ("grammys", GRAMMYS_TEMPLATE),
        ] {
            engine
                .register_template(Template::parse(name, body).expect("shipped template parses"));
        }
        for (scene, tpl) in [
            ("golf/shot", "golf_tennis"),
            ("tennis/match_start", "golf_tennis"),
            ("tennis/set_end", "golf_tennis"),
            ("football/grade_rationale", "football"),
            ("football/slot", "football"),
            ("music/artist_story", "grammys"),
        ] {
            engine.bind_scene(scene, tpl).expect("shipped binding");
        }
        engine
    }

    pub fn register_template(&mut self, template: Template) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn bind_scene(&mut self, scene: impl Into<String>, template: &str) -> Result<(), PromptError> {
        if !self.templates.contains_key(template) {
            return Err(PromptError::UnknownTemplate(template.to_string()));
        }
        self.scenes.insert(scene.into(), template.to_string());
        Ok(())
    }

    /// Loads (or reloads) every `*.mustache` file in `dir`, named by file stem.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, PromptError> {
        let entries = std::fs::read_dir(dir).map_err(|e| PromptError::Asset(format!("{}: {e}", dir.display())))?;
        let mut n = 0;
        for entry in entries {
            let path = entry.map_err(|e| PromptError::Asset(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("mustache") {
                continue;
            }
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| PromptError::Asset(format!("bad file name {}", path.display())))?;
            let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Asset(format!("{}: {e}", path.display())))?;
            self.register_template(Template::parse(name, body)?);
            n += 1;
        }
        Ok(n)
    }

    pub fn template(&self, name: &str) -> Option<&Template> {
        self.templates.get(name)
    }

    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.templates.values()
    }

    pub fn template_for(&self, scene: &str) -> Result<&Template, PromptError> {
        self.scenes
            .get(scene)
            .and_then(|t| self.templates.get(t))
            .ok_or_else(|| PromptError::UnknownScene(scene.to_string()))
    }

    pub fn has_scene(&self, scene: &str) -> bool {
        self.scenes.contains_key(scene)
    }

    pub fn build_prompt(
        &self,
        draft: &PromptDraft,
        clean_data: &Value,
        opts: &PromptOptions<'_>,
    ) -> Result<EngineeredPrompt, PromptError> {
        let template = self.template_for(&draft.desired_scene)?;

        let preamble = if opts.preamble.contains(HAP_CLAUSE) {
            opts.preamble.trim().to_string()
        } else if opts.preamble.trim().is_empty() {
            HAP_CLAUSE.to_string()
        } else {
            format!("{} {HAP_CLAUSE}", opts.preamble.trim())
        };

        let mut instruction = draft.instruction.trim().to_string();
        if let Some(person) = opts.subject {
            let line = pronoun_instruction(person);
            if instruction.is_empty() {
                instruction = line;
            } else {
                instruction = format!("{instruction} {line}");
            }
        }

        let few_shot: Vec<Exemplar> = match opts.bank {
            Some(bank) => bank.select(opts.k, opts.seed)?,
            None => Vec::new(),
        };

        let input = match opts.input_format {
            Some(fmt) => resolve_references(fmt, clean_data),
            None => serde_json::to_string(clean_data).map_err(|e| PromptError::Asset(e.to_string()))?,
        };
        let context_passages: Vec<String> = opts.context.iter().map(|p| p.text.clone()).collect();

        let bindings = json!({
            "preamble": preamble,
            "instruction_prefix": "instruction:",
            "instruction": instruction,
            "examples_prefix": "examples:",
            "examples": exemplar_block(&few_shot),
            "input_prefix": "input:",
            "input": input,
            "context_prefix": "context:",
            "context": context_passages.join(" "),
            "avoid_topic_prefix": "avoid topic:",
            "avoid_topic": opts.avoid_topics.join(", "),
            "output_prefix": "output:",
        });
        let rendered = template.render(&bindings)?;

        Ok(EngineeredPrompt {
            scene: draft.desired_scene.clone(),
            preamble,
            instruction,
            input,
            few_shot,
            context_passages,
            avoid_topics: opts.avoid_topics.to_vec(),
            rendered,
        })
    }
}

/// `build_prompt` against the built-in engine.
pub fn build_prompt(draft: &PromptDraft, clean_data: &Value, opts: &PromptOptions<'_>) -> Result<EngineeredPrompt, PromptError> {
    PromptEngine::builtin().build_prompt(draft, clean_data, opts)
}

pub fn pronoun_instruction(person: &PersonRecord) -> String {
    format!(
        "Use {} pronouns when referring to {}.",
        person.pronoun_class.as_str(),
        person.full_name
    )
}

/// The shipped football exemplar bank.
pub fn football_bank() -> ExemplarBank {
    ExemplarBank::from_json(FOOTBALL_BANK.as_bytes()).expect("shipped bank parses")
}
