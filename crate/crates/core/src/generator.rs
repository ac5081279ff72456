//! Stage-2 story generation: the eight-method prompt matrix.
//!
//! Every method assembles a chat request from a fixed recipe of artifacts —
//! role-play instruction, optional persona (system), optional story rules
//! (user), and optional retrieved demonstrations (few-shot turns) — then
//! issues exactly one story request. The non-personalized baseline instead
//! reuses the source's average-author template untouched. Assembly is a
//! pure function of its inputs: equal artifacts produce byte-equal requests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{count_words, AuthorProfile, SourceKind, Story, WritingPrompt};
use crate::gateway::{Backend, ChatRequest, GatewayError, RoleTag, SamplingConfig};
use crate::prompts::{self, PromptRegistry};
use crate::retrieval::build_index;
use crate::stylist::{ablate, render_rules, PersonaDescription, StoryRules};
use crate::tagparse::{NarrativeCategory, WritingSheet};

// ===== Methods =====

/// The eight story-generation methods under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GenerationMethod {
    #[serde(rename = "avg_author")]
    AverageAuthor,
    #[serde(rename = "rag")]
    Rag,
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "sheet")]
    Sheet,
    #[serde(rename = "sheet_np")]
    SheetNoPersona,
    #[serde(rename = "summ")]
    Summ,
    #[serde(rename = "summ_np")]
    SummNoPersona,
    #[serde(rename = "oracle")]
    Oracle,
}

impl GenerationMethod {
    pub const ALL: [GenerationMethod; 8] = [
        GenerationMethod::AverageAuthor,
        GenerationMethod::Rag,
        GenerationMethod::Delta,
        GenerationMethod::Sheet,
        GenerationMethod::SheetNoPersona,
        GenerationMethod::Summ,
        GenerationMethod::SummNoPersona,
        GenerationMethod::Oracle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            GenerationMethod::AverageAuthor => "avg_author",
            GenerationMethod::Rag => "rag",
            GenerationMethod::Delta => "delta",
            GenerationMethod::Sheet => "sheet",
            GenerationMethod::SheetNoPersona => "sheet_np",
            GenerationMethod::Summ => "summ",
            GenerationMethod::SummNoPersona => "summ_np",
            GenerationMethod::Oracle => "oracle",
        }
    }

    pub fn parse_label(label: &str) -> Option<GenerationMethod> {
        GenerationMethod::ALL
            .into_iter()
            .find(|m| m.label() == label)
    }

    /// Whether the system prompt carries the persona description.
    pub fn uses_persona(self) -> bool {
        matches!(self, GenerationMethod::Sheet | GenerationMethod::Summ)
    }

    /// Whether the user prompt carries story rules.
    pub fn uses_rules(self) -> bool {
        !matches!(self, GenerationMethod::AverageAuthor | GenerationMethod::Rag)
    }
}

impl std::fmt::Display for GenerationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

// ===== Errors =====

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("method {method} requires {what}, which is not available")]
    MissingArtifact {
        method: GenerationMethod,
        what: &'static str,
    },
    #[error("source {kind:?} requires story metadata, but none was provided")]
    MetadataRequired { kind: SourceKind },
    #[error("no template registered for source {kind:?}")]
    UnknownSourceTemplate { kind: SourceKind },
    #[error("backend returned an empty story")]
    EmptyCompletion,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

// ===== Configuration and records =====

/// Knobs shared by every generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Retrieved few-shot demonstrations for methods that take them.
    pub k_shots: usize,
    /// Target length; `None` means match the ground-truth story's length
    /// (falling back to the author's mean profiling length).
    pub story_length_words: Option<usize>,
    /// Category-ablation switch for the importance experiment.
    pub excluded_category: Option<NarrativeCategory>,
    pub sampling: SamplingConfig,
    /// Whether the rule-transfer method also gets a retrieved demonstration
    /// (the oracle always does).
    pub delta_demo: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            k_shots: 1,
            story_length_words: None,
            excluded_category: None,
            sampling: SamplingConfig::story(),
            delta_demo: false,
        }
    }
}

/// One generated story with enough provenance to re-identify its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedStory {
    pub author_id: String,
    pub source: SourceKind,
    pub wp: WritingPrompt,
    pub method: GenerationMethod,
    pub text: String,
    pub inputs_digest: String,
    pub word_count: usize,
}

/// Per-author (and per-prompt, for rules) artifacts available to the
/// generator. Which fields must be present depends on the method.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactStore {
    pub sheet: Option<WritingSheet>,
    pub summary: Option<WritingSheet>,
    pub sheet_persona: Option<PersonaDescription>,
    pub summary_persona: Option<PersonaDescription>,
    pub sheet_rules: Option<StoryRules>,
    pub summary_rules: Option<StoryRules>,
    pub transfer_rules: Option<StoryRules>,
    pub oracle_rules: Option<StoryRules>,
}

/// The resolved ingredients for one assembled request.
#[derive(Debug, Clone, Default)]
pub struct PromptArtifacts<'a> {
    pub persona: Option<&'a PersonaDescription>,
    pub rules: Option<&'a StoryRules>,
    pub demos: Vec<&'a Story>,
    pub metadata: Option<&'a BTreeMap<String, String>>,
}

// ===== Demonstration selection =====

/// Top-k profiling stories whose prompts are most similar to the target
/// prompt, most relevant first. `k = 0` yields no demonstrations.
pub fn select_demonstrations<'a>(
    profile: &'a AuthorProfile,
    wp: &WritingPrompt,
    k: usize,
) -> Vec<&'a Story> {
    if k == 0 || profile.profiling.is_empty() {
        return Vec::new();
    }
    let docs: Vec<(usize, &str)> = profile
        .profiling
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.prompt.text.as_str()))
        .collect();
    let index = build_index(&docs).expect("profiling set is non-empty");
    index
        .top_k(&wp.text, k.min(profile.profiling.len()))
        .into_iter()
        .map(|hit| &profile.profiling[hit.doc_id])
        .collect()
}

// ===== Prompt assembly =====

fn demo_turns(demos: &[&Story]) -> Vec<(String, String)> {
    demos
        .iter()
        .map(|demo| {
            let user = format!(
                "{}\n\nWriting Prompt: {}",
                prompts::story_instruction(demo.word_count),
                demo.prompt.text
            );
            (user, demo.text.clone())
        })
        .collect()
}

/// Builds the complete chat request for one (method, prompt) pair. Pure:
/// equal inputs yield byte-equal requests. Artifacts a method does not use
/// are ignored, so persona-free variants can share the same artifact set.
pub fn assemble_prompt(
    method: GenerationMethod,
    wp: &WritingPrompt,
    artifacts: &PromptArtifacts<'_>,
    length_words: usize,
    sampling: SamplingConfig,
    registry: &PromptRegistry,
) -> Result<ChatRequest, GeneratorError> {
    if method == GenerationMethod::AverageAuthor {
        let template = registry
            .avg_template(wp.source)
            .ok_or(GeneratorError::UnknownSourceTemplate { kind: wp.source })?;
        let user = format!("{}\n\nWriting Prompt: {}", template.user, wp.text);
        let request = ChatRequest::new(RoleTag::StoryGen, template.system.clone(), user)?
            .with_sampling(sampling);
        return Ok(request);
    }

    let rules = if method.uses_rules() {
        Some(artifacts.rules.ok_or(GeneratorError::MissingArtifact {
            method,
            what: "story rules",
        })?)
    } else {
        None
    };
    let persona = if method.uses_persona() {
        Some(artifacts.persona.ok_or(GeneratorError::MissingArtifact {
            method,
            what: "persona description",
        })?)
    } else {
        None
    };
    if method == GenerationMethod::Rag && artifacts.demos.is_empty() {
        return Err(GeneratorError::MissingArtifact {
            method,
            what: "retrieved demonstrations",
        });
    }
    if wp.source.requires_metadata() && artifacts.metadata.is_none() {
        return Err(GeneratorError::MetadataRequired { kind: wp.source });
    }

    let mut system = registry
        .roleplay_instruction(wp.source)
        .ok_or(GeneratorError::UnknownSourceTemplate { kind: wp.source })?
        .to_string();
    if rules.is_some() {
        system.push(' ');
        system.push_str(prompts::RULES_ADHERENCE);
    }
    if !artifacts.demos.is_empty() {
        system.push(' ');
        system.push_str(prompts::DEMOS_ADHERENCE);
    }
    // The persona paragraph goes last so the persona-free variants differ
    // from their counterparts by exactly this trailing segment.
    if let Some(persona) = persona {
        system.push_str("\n\n");
        system.push_str(&prompts::persona_segment(&persona.full_text));
    }

    let mut user = format!(
        "{}\n\nWriting Prompt: {}",
        prompts::story_instruction(length_words),
        wp.text
    );
    if let Some(metadata) = artifacts.metadata {
        user.push_str("\n\n");
        user.push_str(&prompts::metadata_segment(&prompts::render_metadata(metadata)));
    }
    if let Some(rules) = rules {
        user.push_str("\n\nStory Rules:\n");
        user.push_str(&render_rules(rules));
    }

    let request = ChatRequest::new(RoleTag::StoryGen, system, user)?
        .with_few_shot(demo_turns(&artifacts.demos))
        .with_sampling(sampling);
    Ok(request)
}

// ===== Generation =====

fn mean_profiling_words(profile: &AuthorProfile) -> usize {
    if profile.profiling.is_empty() {
        return 0;
    }
    let total: usize = profile.profiling.iter().map(|s| s.word_count).sum();
    (total as f64 / profile.profiling.len() as f64).round() as usize
}

fn resolve_rules(
    method: GenerationMethod,
    store: &ArtifactStore,
) -> Result<Option<&StoryRules>, GeneratorError> {
    let missing = |what| GeneratorError::MissingArtifact { method, what };
    let rules = match method {
        GenerationMethod::AverageAuthor | GenerationMethod::Rag => None,
        GenerationMethod::Delta => Some(
            store
                .transfer_rules
                .as_ref()
                .ok_or(missing("transferred story rules"))?,
        ),
        GenerationMethod::Sheet | GenerationMethod::SheetNoPersona => Some(
            store
                .sheet_rules
                .as_ref()
                .ok_or(missing("sheet-derived story rules"))?,
        ),
        GenerationMethod::Summ | GenerationMethod::SummNoPersona => Some(
            store
                .summary_rules
                .as_ref()
                .ok_or(missing("summary-derived story rules"))?,
        ),
        GenerationMethod::Oracle => Some(
            store
                .oracle_rules
                .as_ref()
                .ok_or(missing("ground-truth contrast rules"))?,
        ),
    };
    Ok(rules)
}

fn resolve_persona(
    method: GenerationMethod,
    store: &ArtifactStore,
) -> Result<Option<&PersonaDescription>, GeneratorError> {
    if !method.uses_persona() {
        return Ok(None);
    }
    let missing = GeneratorError::MissingArtifact {
        method,
        what: "persona description",
    };
    match method {
        GenerationMethod::Sheet => store.sheet_persona.as_ref().map(Some).ok_or(missing),
        GenerationMethod::Summ => store.summary_persona.as_ref().map(Some).ok_or(missing),
        _ => unreachable!("only persona methods reach here"),
    }
}

fn wants_demos(method: GenerationMethod, config: &GenerationConfig) -> bool {
    match method {
        GenerationMethod::AverageAuthor => false,
        GenerationMethod::Delta => config.delta_demo,
        _ => true,
    }
}

/// Resolves artifacts for the method, applies ablation, assembles the
/// request, and issues exactly one story call.
pub fn generate_story(
    method: GenerationMethod,
    profile: &AuthorProfile,
    target: &Story,
    config: &GenerationConfig,
    registry: &PromptRegistry,
    store: &ArtifactStore,
    backend: &dyn Backend,
) -> Result<GeneratedStory, GeneratorError> {
    let rules = resolve_rules(method, store)?;
    let persona = resolve_persona(method, store)?;

    // Ablation clones the artifacts so the store stays intact.
    let (ablated_rules, ablated_persona) = match config.excluded_category {
        Some(excluded) if rules.is_some() => {
            let (r, p) = ablate(rules.cloned().unwrap(), persona.cloned(), excluded);
            (Some(r), p)
        }
        _ => (rules.cloned(), persona.cloned()),
    };

    let demos = if wants_demos(method, config) {
        select_demonstrations(profile, &target.prompt, config.k_shots)
    } else {
        Vec::new()
    };

    let length_words = config.story_length_words.unwrap_or_else(|| {
        if target.word_count > 0 {
            target.word_count
        } else {
            mean_profiling_words(profile)
        }
    });

    let artifacts = PromptArtifacts {
        persona: ablated_persona.as_ref(),
        rules: ablated_rules.as_ref(),
        demos,
        metadata: target.metadata.as_ref(),
    };
    let request = assemble_prompt(
        method,
        &target.prompt,
        &artifacts,
        length_words,
        config.sampling,
        registry,
    )?;
    let inputs_digest = request.fingerprint();
    let completion = backend.complete(&request)?;
    if completion.text.trim().is_empty() {
        return Err(GeneratorError::EmptyCompletion);
    }
    let word_count = count_words(&completion.text);
    Ok(GeneratedStory {
        author_id: profile.author_id.clone(),
        source: target.prompt.source,
        wp: target.prompt.clone(),
        method,
        text: completion.text,
        inputs_digest,
        word_count,
    })
}
