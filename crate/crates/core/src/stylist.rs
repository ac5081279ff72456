//! Persona descriptions and story rules derived from writing sheets.
//!
//! Personas condense a sheet into a four-paragraph second-person portrait
//! for the system prompt. Story rules are actionable per-category
//! directives for the user prompt, derived four ways: from the iterative
//! sheet, from the summary sheet, by contrasting an author story with the
//! average story for the same prompt, or transferred to a new prompt from
//! few-shot (prompt, rules) demonstrations. Ablation empties one category
//! across both artifacts for the category-importance experiment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Story, WritingPrompt};
use crate::gateway::{Backend, GatewayError};
use crate::profiler::{render_sheet, AverageStory};
use crate::prompts::{self, TAG_PERSONA, TAG_STORY_RULES};
use crate::tagparse::{extract_block, strip_emphasis, NarrativeCategory, WritingSheet};

// ===== Errors =====

#[derive(Error, Debug, Clone, PartialEq)]
pub enum StylistError {
    #[error("writing sheet has no entries")]
    EmptySheet,
    #[error("{what} must be non-empty")]
    EmptyInput { what: &'static str },
    #[error("persona parse failed after retry: {detail}")]
    PersonaParseFailed { detail: String },
    #[error("story rules parse failed: {detail}")]
    RulesParseFailed { detail: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

// ===== Domain types =====

/// Second-person author portrait: one paragraph per narrative category,
/// plus the concatenated text that goes into the system prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaDescription {
    pub paragraphs: BTreeMap<NarrativeCategory, String>,
    pub full_text: String,
}

impl PersonaDescription {
    fn from_paragraphs(paragraphs: BTreeMap<NarrativeCategory, String>) -> Self {
        let full_text = join_paragraphs(&paragraphs);
        PersonaDescription {
            paragraphs,
            full_text,
        }
    }
}

fn join_paragraphs(paragraphs: &BTreeMap<NarrativeCategory, String>) -> String {
    // BTreeMap iteration follows the canonical category order.
    paragraphs
        .values()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// How a set of story rules was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleProvenance {
    FromSheet,
    FromSummary,
    Contrast,
    FewShotTransfer,
}

/// Actionable second-person directives per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryRules {
    pub directives: BTreeMap<NarrativeCategory, Vec<String>>,
    pub provenance: RuleProvenance,
}

impl StoryRules {
    pub fn new(provenance: RuleProvenance) -> Self {
        let mut directives = BTreeMap::new();
        for category in NarrativeCategory::ALL {
            directives.insert(category, Vec::new());
        }
        StoryRules {
            directives,
            provenance,
        }
    }

    pub fn total_directives(&self) -> usize {
        self.directives.values().map(Vec::len).sum()
    }

    /// Categories that still carry at least one directive.
    pub fn populated_categories(&self) -> Vec<NarrativeCategory> {
        NarrativeCategory::ALL
            .into_iter()
            .filter(|c| !self.directives[c].is_empty())
            .collect()
    }
}

// ===== Persona =====

/// Splits the persona block into paragraphs separated by blank lines.
fn split_paragraphs(text: &str) -> Vec<String> {
    text.split("\n\n")
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

fn persona_from_completion(text: &str) -> Result<PersonaDescription, StylistError> {
    let block = extract_block(text, TAG_PERSONA)
        .map_err(|e| StylistError::PersonaParseFailed { detail: e.to_string() })?;
    let paragraphs = split_paragraphs(&block);
    if paragraphs.len() != NarrativeCategory::ALL.len() {
        return Err(StylistError::PersonaParseFailed {
            detail: format!("expected 4 paragraphs, found {}", paragraphs.len()),
        });
    }
    // Positional mapping: the prompt requests one paragraph per category
    // in canonical order.
    let map = NarrativeCategory::ALL
        .into_iter()
        .zip(paragraphs)
        .collect::<BTreeMap<_, _>>();
    Ok(PersonaDescription::from_paragraphs(map))
}

/// Turns a sheet into a persona description with one Persona-role request.
/// A malformed response (wrong paragraph count or missing tags) is retried
/// once with the identical request.
pub fn generate_persona(
    sheet: &WritingSheet,
    backend: &dyn Backend,
) -> Result<PersonaDescription, StylistError> {
    if sheet.is_empty() {
        return Err(StylistError::EmptySheet);
    }
    let request = prompts::persona_request(&render_sheet(sheet))?;
    let first = backend.complete(&request)?;
    match persona_from_completion(&first.text) {
        Ok(persona) => Ok(persona),
        Err(StylistError::PersonaParseFailed { .. }) => {
            let second = backend.complete(&request)?;
            persona_from_completion(&second.text)
        }
        Err(other) => Err(other),
    }
}

// ===== Rules parsing / rendering =====

/// Parses a story_rules block: four bold category headings, each followed
/// by bullet directives. All four categories must appear.
pub fn parse_rules_block(
    block: &str,
    provenance: RuleProvenance,
) -> Result<StoryRules, StylistError> {
    let mut rules = StoryRules::new(provenance);
    let mut seen: Vec<NarrativeCategory> = Vec::new();
    let mut current: Option<NarrativeCategory> = None;
    for raw_line in block.lines() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let unbulleted = line.trim_start_matches(['-', '*']).trim_start();
        // Heading candidate: the text before the first colon (if any), so
        // "- **Plot**: Do X." is a heading with an inline first directive.
        let (head_part, inline_rest) = match unbulleted.find(':') {
            Some(idx) => (&unbulleted[..idx], Some(&unbulleted[idx + 1..])),
            None => (unbulleted, None),
        };
        if let Some(category) = NarrativeCategory::parse_heading(&strip_emphasis(head_part)) {
            if !seen.contains(&category) {
                seen.push(category);
            }
            current = Some(category);
            if let Some(rest) = inline_rest {
                let inline = rest.trim();
                if !inline.is_empty() {
                    rules
                        .directives
                        .get_mut(&category)
                        .unwrap()
                        .push(inline.to_string());
                }
            }
            continue;
        }
        let Some(category) = current else {
            continue; // preamble before the first heading
        };
        let directives = rules.directives.get_mut(&category).unwrap();
        if line.starts_with('-') || line.starts_with('*') {
            if !unbulleted.is_empty() {
                directives.push(unbulleted.to_string());
            }
        } else if let Some(last) = directives.last_mut() {
            // Continuation of a wrapped directive.
            last.push(' ');
            last.push_str(line);
        }
    }
    for category in NarrativeCategory::ALL {
        if !seen.contains(&category) {
            return Err(StylistError::RulesParseFailed {
                detail: format!("missing category heading: {}", category.name()),
            });
        }
    }
    if rules.total_directives() == 0 {
        return Err(StylistError::RulesParseFailed {
            detail: "no directives found under any category".to_string(),
        });
    }
    Ok(rules)
}

/// Canonical rules text: bold category headings with nested bullets, in
/// canonical category order. Empty categories render as a bare heading.
pub fn render_rules(rules: &StoryRules) -> String {
    let mut out = String::new();
    for category in NarrativeCategory::ALL {
        out.push_str(&format!("- **{}**:\n", category.prompt_label()));
        for directive in &rules.directives[&category] {
            out.push_str(&format!("  - {directive}\n"));
        }
    }
    out.trim_end().to_string()
}

fn rules_from_completion(
    text: &str,
    provenance: RuleProvenance,
) -> Result<StoryRules, StylistError> {
    let block = extract_block(text, TAG_STORY_RULES)
        .map_err(|e| StylistError::RulesParseFailed { detail: e.to_string() })?;
    parse_rules_block(&block, provenance)
}

// ===== Rule derivation =====

/// Rules tailored to one prompt from a writing sheet. Provenance follows
/// the sheet kind: iterative sheets yield FromSheet, summaries FromSummary.
pub fn rules_from_sheet(
    sheet: &WritingSheet,
    wp: &WritingPrompt,
    backend: &dyn Backend,
) -> Result<StoryRules, StylistError> {
    if sheet.is_empty() {
        return Err(StylistError::EmptySheet);
    }
    let provenance = match sheet.kind {
        crate::tagparse::SheetKind::Iterative => RuleProvenance::FromSheet,
        crate::tagparse::SheetKind::Summary => RuleProvenance::FromSummary,
    };
    let request = prompts::rules_from_sheet_request(&render_sheet(sheet), wp)?;
    let completion = backend.complete(&request)?;
    rules_from_completion(&completion.text, provenance)
}

/// Rules distilled by contrasting an author-written story with the average
/// story for the same prompt. Used per profiling story for the few-shot
/// transfer method, and on the ground-truth story for the oracle method.
pub fn rules_by_contrast(
    wp: &WritingPrompt,
    author_story: &Story,
    avg: &AverageStory,
    backend: &dyn Backend,
) -> Result<StoryRules, StylistError> {
    if author_story.text.trim().is_empty() {
        return Err(StylistError::EmptyInput {
            what: "author story",
        });
    }
    if avg.text.trim().is_empty() {
        return Err(StylistError::EmptyInput {
            what: "average story",
        });
    }
    let request = prompts::contrast_rules_request(wp, &author_story.text, &avg.text)?;
    let completion = backend.complete(&request)?;
    rules_from_completion(&completion.text, RuleProvenance::Contrast)
}

/// Rules for a new prompt transferred from per-story (prompt, rules)
/// demonstrations. When `max_demos` is smaller than the list, the oldest
/// demonstrations are dropped first; callers should log that truncation.
pub fn rules_fewshot_transfer(
    profiling_rules: &[(WritingPrompt, StoryRules)],
    new_wp: &WritingPrompt,
    max_demos: Option<usize>,
    backend: &dyn Backend,
) -> Result<StoryRules, StylistError> {
    if profiling_rules.is_empty() {
        return Err(StylistError::EmptyInput {
            what: "profiling rules",
        });
    }
    let keep = max_demos.unwrap_or(profiling_rules.len()).max(1);
    let start = profiling_rules.len().saturating_sub(keep);
    let demos: Vec<(String, String)> = profiling_rules[start..]
        .iter()
        .map(|(wp, rules)| (format!("Writing Prompt: {}", wp.text), render_rules(rules)))
        .collect();
    let request = prompts::fewshot_rules_request(&demos, new_wp)?;
    let completion = backend.complete(&request)?;
    rules_from_completion(&completion.text, RuleProvenance::FewShotTransfer)
}

// ===== Ablation =====

/// Empties one category's directives and removes its persona paragraph.
/// Other categories are untouched; applying the same exclusion twice is a
/// no-op the second time.
pub fn ablate(
    mut rules: StoryRules,
    persona: Option<PersonaDescription>,
    excluded: NarrativeCategory,
) -> (StoryRules, Option<PersonaDescription>) {
    rules.directives.insert(excluded, Vec::new());
    let persona = persona.map(|mut p| {
        p.paragraphs.remove(&excluded);
        p.full_text = join_paragraphs(&p.paragraphs);
        p
    });
    (rules, persona)
}

// ===== Persistence =====

/// A derived-artifact bundle persisted per (author, prompt).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleArtifacts {
    pub author_id: String,
    pub persona: Option<PersonaDescription>,
    pub rules: StoryRules,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceKind;
    use crate::gateway::MockBackend;
    use crate::tagparse::{ClaimEvidence, SheetKind};

    fn wp(text: &str) -> WritingPrompt {
        WritingPrompt {
            text: text.to_string(),
            source: SourceKind::Reddit,
        }
    }

    fn sample_sheet(kind: SheetKind) -> WritingSheet {
        let mut sheet = WritingSheet::new(kind);
        sheet.push(
            NarrativeCategory::Plot,
            ClaimEvidence::new("Resolves conflict with humor.", "an excerpt")
                .with_framing("a rescue mission")
                .with_ref(1),
        );
        sheet
    }

    const PERSONA_FOUR: &str = "<thinking>analysis</thinking>\n<persona_prompt>\nYou favor light-hearted approaches to conflict resolution, structuring stories around escalating comedic stakes.\n\nYou blend everyday settings with absurd premises, reinterpreting prompts from unexpected angles.\n\nYou build characters through small gestures and give settings a lived-in warmth.\n\nYou write in brisk, dialogue-forward prose with playful diction.\n</persona_prompt>";

    const RULES_BLOCK: &str = "<thinking>planning</thinking>\n<story_rules>\n- **Plot**:\n  - Structure the story around comedic mishaps, such as accidentally creating a tornado of cereal.\n  - Resolve the central conflict through an act of kindness.\n- **Creativity**:\n  - Blend mundane settings with one absurd fantastical element.\n- **Development (Character and Setting)**:\n  - Reveal character through small domestic gestures.\n- **Language Use**:\n  - Favor brisk dialogue over long description.\n</story_rules>";

    #[test]
    fn persona_splits_into_four_category_paragraphs() {
        let backend = MockBackend::script(vec![PERSONA_FOUR.to_string()]);
        let persona = generate_persona(&sample_sheet(SheetKind::Iterative), &backend).unwrap();
        assert_eq!(persona.paragraphs.len(), 4);
        assert!(persona.paragraphs[&NarrativeCategory::Plot].contains("conflict resolution"));
        assert!(persona.paragraphs[&NarrativeCategory::LanguageUse].contains("playful diction"));
        let expected_full = persona
            .paragraphs
            .values()
            .cloned()
            .collect::<Vec<_>>()
            .join("\n\n");
        assert_eq!(persona.full_text, expected_full);
        assert!(persona.full_text.starts_with("You favor light-hearted"));
        assert_eq!(backend.served(), 1);
    }

    #[test]
    fn persona_with_wrong_paragraph_count_retries_then_fails() {
        let three = "<persona_prompt>\none\n\ntwo\n\nthree\n</persona_prompt>";
        let backend = MockBackend::script(vec![three.to_string(), three.to_string()]);
        let err = generate_persona(&sample_sheet(SheetKind::Iterative), &backend).unwrap_err();
        assert!(matches!(err, StylistError::PersonaParseFailed { .. }));
        assert_eq!(backend.served(), 2, "exactly one retry");
    }

    #[test]
    fn persona_retry_can_recover() {
        let backend = MockBackend::script(vec![
            "no tags here".to_string(),
            PERSONA_FOUR.to_string(),
        ]);
        let persona = generate_persona(&sample_sheet(SheetKind::Iterative), &backend).unwrap();
        assert_eq!(persona.paragraphs.len(), 4);
        assert_eq!(backend.served(), 2);
    }

    #[test]
    fn persona_rejects_empty_sheet_without_calling() {
        let backend = MockBackend::script(vec![]);
        let err = generate_persona(&WritingSheet::new(SheetKind::Iterative), &backend).unwrap_err();
        assert_eq!(err, StylistError::EmptySheet);
        assert_eq!(backend.served(), 0);
    }

    #[test]
    fn rules_from_sheet_parses_categories_and_provenance() {
        let backend = MockBackend::script(vec![RULES_BLOCK.to_string()]);
        let rules =
            rules_from_sheet(&sample_sheet(SheetKind::Iterative), &wp("a prompt"), &backend)
                .unwrap();
        assert_eq!(rules.provenance, RuleProvenance::FromSheet);
        let plot = &rules.directives[&NarrativeCategory::Plot];
        assert_eq!(plot.len(), 2);
        assert!(plot[0].contains("comedic mishaps"));
        assert!(plot[0].contains("tornado of cereal"));
        assert_eq!(rules.directives[&NarrativeCategory::Creativity].len(), 1);
    }

    #[test]
    fn summary_sheet_rules_carry_summary_provenance() {
        let backend = MockBackend::script(vec![RULES_BLOCK.to_string()]);
        let rules =
            rules_from_sheet(&sample_sheet(SheetKind::Summary), &wp("a prompt"), &backend)
                .unwrap();
        assert_eq!(rules.provenance, RuleProvenance::FromSummary);
    }

    #[test]
    fn rules_missing_a_category_heading_fail_without_retry() {
        let block = "<story_rules>\n- **Plot**:\n  - One rule.\n- **Creativity**:\n  - Two.\n- **Development**:\n  - Three.\n</story_rules>";
        let backend = MockBackend::script(vec![block.to_string(), "spare".to_string()]);
        let err = rules_from_sheet(&sample_sheet(SheetKind::Iterative), &wp("p"), &backend)
            .unwrap_err();
        match err {
            StylistError::RulesParseFailed { detail } => {
                assert!(detail.contains("Language Use"), "{detail}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(backend.served(), 1, "rule parsing does not retry");
    }

    #[test]
    fn inline_directives_after_heading_colon_are_kept() {
        let block = "- **Plot**: Open with the inciting accident. - Then escalate.\n- **Creativity**:\n  - Mix genres.\n- **Development**:\n  - Ground the cast.\n- **Language Use**:\n  - Keep sentences short.";
        let rules = parse_rules_block(block, RuleProvenance::Contrast).unwrap();
        assert_eq!(
            rules.directives[&NarrativeCategory::Plot],
            vec!["Open with the inciting accident. - Then escalate."]
        );
    }

    #[test]
    fn wrapped_directive_lines_join() {
        let block = "- **Plot**:\n  - Build toward a quiet ending\n    that lingers on one image.\n- **Creativity**:\n  - X.\n- **Development**:\n  - Y.\n- **Language Use**:\n  - Z.";
        let rules = parse_rules_block(block, RuleProvenance::FromSheet).unwrap();
        assert_eq!(
            rules.directives[&NarrativeCategory::Plot][0],
            "Build toward a quiet ending that lingers on one image."
        );
    }

    #[test]
    fn contrast_rules_have_contrast_provenance() {
        let backend = MockBackend::script(vec![RULES_BLOCK.to_string()]);
        let author_story = Story {
            author_id: "a".into(),
            prompt: wp("p"),
            text: "author text".into(),
            timestamp: 1,
            word_count: 2,
            metadata: None,
            recorded_at: None,
        };
        let avg = AverageStory {
            prompt: wp("p"),
            text: "avg text".into(),
            source: SourceKind::Reddit,
        };
        let rules = rules_by_contrast(&wp("p"), &author_story, &avg, &backend).unwrap();
        assert_eq!(rules.provenance, RuleProvenance::Contrast);
    }

    #[test]
    fn contrast_rejects_blank_inputs() {
        let backend = MockBackend::script(vec![]);
        let author_story = Story {
            author_id: "a".into(),
            prompt: wp("p"),
            text: "text".into(),
            timestamp: 1,
            word_count: 1,
            metadata: None,
            recorded_at: None,
        };
        let blank_avg = AverageStory {
            prompt: wp("p"),
            text: "   ".into(),
            source: SourceKind::Reddit,
        };
        let err = rules_by_contrast(&wp("p"), &author_story, &blank_avg, &backend).unwrap_err();
        assert_eq!(
            err,
            StylistError::EmptyInput {
                what: "average story"
            }
        );
        assert_eq!(backend.served(), 0);
    }

    #[test]
    fn fewshot_transfer_sends_each_demonstration() {
        let backend = MockBackend::script(vec![RULES_BLOCK.to_string()]);
        let demo_rules = parse_rules_block(
            "- **Plot**:\n  - A.\n- **Creativity**:\n  - B.\n- **Development**:\n  - C.\n- **Language Use**:\n  - D.",
            RuleProvenance::Contrast,
        )
        .unwrap();
        let profiling: Vec<(WritingPrompt, StoryRules)> = (1..=3)
            .map(|i| (wp(&format!("old prompt {i}")), demo_rules.clone()))
            .collect();
        let rules =
            rules_fewshot_transfer(&profiling, &wp("new prompt"), None, &backend).unwrap();
        assert_eq!(rules.provenance, RuleProvenance::FewShotTransfer);

        let sent = backend.requests();
        assert_eq!(sent.len(), 1);
        assert_eq!(sent[0].few_shot.len(), 3);
        assert_eq!(sent[0].few_shot[0].0, "Writing Prompt: old prompt 1");
        assert!(sent[0].few_shot[0].1.contains("- **Plot**:"));
        assert!(sent[0].user.contains("New Writing Prompt: new prompt"));
    }

    #[test]
    fn fewshot_transfer_truncates_oldest_first() {
        let backend = MockBackend::script(vec![RULES_BLOCK.to_string()]);
        let demo_rules = StoryRules::new(RuleProvenance::Contrast);
        let profiling: Vec<(WritingPrompt, StoryRules)> = (1..=4)
            .map(|i| (wp(&format!("old prompt {i}")), demo_rules.clone()))
            .collect();
        rules_fewshot_transfer(&profiling, &wp("new"), Some(2), &backend).unwrap();
        let sent = backend.requests();
        assert_eq!(sent[0].few_shot.len(), 2);
        assert_eq!(sent[0].few_shot[0].0, "Writing Prompt: old prompt 3");
        assert_eq!(sent[0].few_shot[1].0, "Writing Prompt: old prompt 4");
    }

    #[test]
    fn fewshot_transfer_requires_demonstrations() {
        let backend = MockBackend::script(vec![]);
        let err = rules_fewshot_transfer(&[], &wp("new"), None, &backend).unwrap_err();
        assert_eq!(
            err,
            StylistError::EmptyInput {
                what: "profiling rules"
            }
        );
    }

    #[test]
    fn ablation_empties_one_category_in_both_artifacts() {
        let rules = parse_rules_block(
            "- **Plot**:\n  - A.\n- **Creativity**:\n  - B.\n- **Development**:\n  - C.\n- **Language Use**:\n  - D.",
            RuleProvenance::FromSheet,
        )
        .unwrap();
        let mut paragraphs = BTreeMap::new();
        for category in NarrativeCategory::ALL {
            paragraphs.insert(category, format!("{} paragraph", category.name()));
        }
        let persona = PersonaDescription::from_paragraphs(paragraphs);
        assert_eq!(persona.full_text.matches("paragraph").count(), 4);

        let (rules, persona) =
            ablate(rules, Some(persona), NarrativeCategory::Development);
        let persona = persona.unwrap();
        assert!(rules.directives[&NarrativeCategory::Development].is_empty());
        assert_eq!(rules.directives[&NarrativeCategory::Plot], vec!["A."]);
        assert_eq!(persona.paragraphs.len(), 3);
        assert!(!persona.full_text.contains("Development paragraph"));
        assert!(persona.full_text.contains("Plot paragraph"));
        assert_eq!(
            rules.populated_categories(),
            vec![
                NarrativeCategory::Plot,
                NarrativeCategory::Creativity,
                NarrativeCategory::LanguageUse
            ]
        );

        // Idempotent on repeat.
        let (rules2, persona2) =
            ablate(rules.clone(), Some(persona.clone()), NarrativeCategory::Development);
        assert_eq!(rules2, rules);
        assert_eq!(persona2.unwrap(), persona);
    }

    #[test]
    fn ablation_without_persona_touches_rules_only() {
        let rules = parse_rules_block(
            "- **Plot**:\n  - A.\n- **Creativity**:\n  - B.\n- **Development**:\n  - C.\n- **Language Use**:\n  - D.",
            RuleProvenance::FromSummary,
        )
        .unwrap();
        let (rules, persona) = ablate(rules, None, NarrativeCategory::Plot);
        assert!(persona.is_none());
        assert!(rules.directives[&NarrativeCategory::Plot].is_empty());
        assert_eq!(rules.total_directives(), 3);
    }

    #[test]
    fn rendered_rules_round_trip_through_the_parser() {
        let mut rules = StoryRules::new(RuleProvenance::FromSheet);
        rules
            .directives
            .get_mut(&NarrativeCategory::Plot)
            .unwrap()
            .extend(["Open in medias res.".to_string(), "End on an echo.".to_string()]);
        rules
            .directives
            .get_mut(&NarrativeCategory::Creativity)
            .unwrap()
            .push("Subvert the premise once.".to_string());
        rules
            .directives
            .get_mut(&NarrativeCategory::Development)
            .unwrap()
            .push("Give the setting a memory.".to_string());
        rules
            .directives
            .get_mut(&NarrativeCategory::LanguageUse)
            .unwrap()
            .push("Prefer concrete nouns.".to_string());
        let rendered = render_rules(&rules);
        let reparsed = parse_rules_block(&rendered, RuleProvenance::FromSheet).unwrap();
        assert_eq!(reparsed, rules);
    }

    #[test]
    fn persona_full_text_order_is_canonical() {
        let mut paragraphs = BTreeMap::new();
        // Insert out of order; the map keeps canonical order.
        paragraphs.insert(NarrativeCategory::LanguageUse, "D".to_string());
        paragraphs.insert(NarrativeCategory::Plot, "A".to_string());
        paragraphs.insert(NarrativeCategory::Development, "C".to_string());
        paragraphs.insert(NarrativeCategory::Creativity, "B".to_string());
        let persona = PersonaDescription::from_paragraphs(paragraphs);
        assert_eq!(persona.full_text, "A\n\nB\n\nC\n\nD");
    }
}
