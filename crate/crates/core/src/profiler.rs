//! Iterative Author Writing Sheet construction and the one-shot summary.
//!
//! The sheet build folds over an author's profiling stories in timestamp
//! order. Each step elicits an average story for the prompt, contrasts it
//! with the author's story to get an intermediate sheet, then merges that
//! into the running combined sheet. Merging trusts the model for grouping
//! but never for bookkeeping: reference stamping, degenerate-evidence
//! removal, and the 10-per-category cap are enforced mechanically after
//! parsing. The summary variant packs the whole history into one request.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AuthorProfile, SourceKind, Story, WritingPrompt};
use crate::gateway::{Backend, ChatRequest, GatewayError};
use crate::prompts::{self, PromptRegistry, TAG_COMBINED_SHEET, TAG_WRITING_STYLE};
use crate::tagparse::{
    detect_degenerate_evidence, extract_block, normalize_text, parse_sheet, ClaimEvidence,
    NarrativeCategory, ParsedSheet, SheetKind, WritingSheet,
};

// ===== Limits =====

/// Maximum Claim-Evidence pairs kept per category after each merge.
pub const CATEGORY_CAP: usize = 10;
/// Maximum total pairs per iterative sheet (four categories at the cap).
pub const SHEET_CAP: usize = CATEGORY_CAP * 4;

// ===== Errors =====

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ProfilerError {
    #[error("no average-author template registered for source {kind:?}")]
    UnknownSourceTemplate { kind: SourceKind },
    #[error("profile has no profiling stories")]
    EmptyProfile,
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("sheet parse failed after retry: {detail}")]
    SheetParseFailed { detail: String },
    #[error("story reference {found} exceeds current step {step}")]
    RefOutOfRange { found: u32, step: u32 },
    #[error("sheet build step {step} failed: {source}")]
    StepFailed {
        step: u32,
        #[source]
        source: Box<ProfilerError>,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

// ===== Domain types =====

/// An average (non-personalized) story for one prompt, used as the
/// contrast baseline when profiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageStory {
    pub prompt: WritingPrompt,
    pub text: String,
    pub source: SourceKind,
}

/// Audit state of one author's sheet build: the running combined sheet and
/// every intermediate sheet that fed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetBuildState {
    pub author_id: String,
    pub step: u32,
    pub current: WritingSheet,
    pub transcript: Vec<(u32, WritingSheet)>,
}

impl SheetBuildState {
    fn new(author_id: &str) -> Self {
        SheetBuildState {
            author_id: author_id.to_string(),
            step: 0,
            current: WritingSheet::new(SheetKind::Iterative),
            transcript: Vec::new(),
        }
    }
}

/// Everything a finished sheet build produces. The average stories are kept
/// because downstream rule generation contrasts against the same baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetBuildOutcome {
    pub state: SheetBuildState,
    pub averages: Vec<AverageStory>,
    pub warnings: Vec<String>,
}

impl SheetBuildOutcome {
    pub fn sheet(&self) -> &WritingSheet {
        &self.state.current
    }
}

// ===== Single-step operations =====

/// Elicits the source's typical response to a prompt with one Avg-role
/// request. The completion text is kept verbatim.
pub fn generate_average_story(
    wp: &WritingPrompt,
    registry: &PromptRegistry,
    backend: &dyn Backend,
) -> Result<AverageStory, ProfilerError> {
    let request = prompts::average_author_request(wp, registry)
        .ok_or(ProfilerError::UnknownSourceTemplate { kind: wp.source })??;
    let completion = backend.complete(&request)?;
    if completion.text.trim().is_empty() {
        return Err(ProfilerError::EmptyCompletion);
    }
    Ok(AverageStory {
        prompt: wp.clone(),
        text: completion.text,
        source: wp.source,
    })
}

fn complete_and_parse(
    request: &ChatRequest,
    tag: &str,
    kind: SheetKind,
    backend: &dyn Backend,
) -> Result<ParsedSheet, ProfilerError> {
    let completion = backend.complete(request)?;
    let block = extract_block(&completion.text, tag)
        .map_err(|e| ProfilerError::SheetParseFailed { detail: e.to_string() })?;
    parse_sheet(&block, kind).map_err(|e| ProfilerError::SheetParseFailed {
        detail: e.to_string(),
    })
}

/// One retry with the identical request on structural parse failure;
/// gateway errors are not retried here (the live backend has its own
/// retry policy).
fn complete_sheet_with_retry(
    request: &ChatRequest,
    tag: &str,
    kind: SheetKind,
    backend: &dyn Backend,
) -> Result<ParsedSheet, ProfilerError> {
    match complete_and_parse(request, tag, kind, backend) {
        Err(ProfilerError::SheetParseFailed { .. }) => {
            complete_and_parse(request, tag, kind, backend)
        }
        other => other,
    }
}

/// Contrasts the author's story with the average story for the same prompt,
/// producing the step's intermediate sheet. Story refs are typically absent
/// here; they are assigned at combine time.
pub fn intermediate_sheet(
    wp: &WritingPrompt,
    author_story: &Story,
    avg: &AverageStory,
    backend: &dyn Backend,
) -> Result<ParsedSheet, ProfilerError> {
    let request = prompts::intermediate_sheet_request(wp, &author_story.text, &avg.text)?;
    complete_sheet_with_retry(&request, TAG_WRITING_STYLE, SheetKind::Iterative, backend)
}

fn collect_claim_keys(sheet: &WritingSheet, keys: &mut std::collections::BTreeSet<String>) {
    for (_, entries) in sheet.iter() {
        for entry in entries {
            keys.insert(normalize_text(&entry.claim));
        }
    }
}

fn check_refs(sheet: &WritingSheet, step: u32) -> Result<(), ProfilerError> {
    if let Some(found) = sheet.max_story_ref() {
        if found > step {
            return Err(ProfilerError::RefOutOfRange { found, step });
        }
    }
    Ok(())
}

/// Merges the intermediate sheet into the running combined sheet via one
/// Combine-role request, then applies the deterministic cleanup pass:
/// refless entries are stamped with the current step, degenerate evidence
/// is dropped, and each category is truncated to the cap with grouped
/// (model-rewritten) claims kept first in stable order.
pub fn combine(
    prev: &WritingSheet,
    intermediate: &WritingSheet,
    step: u32,
    backend: &dyn Backend,
) -> Result<ParsedSheet, ProfilerError> {
    assert!(step >= 1, "combine steps are 1-based");
    check_refs(prev, step.saturating_sub(1))?;

    let request = prompts::combine_request(&render_sheet(prev), &render_sheet(intermediate))?;
    let parsed =
        complete_sheet_with_retry(&request, TAG_COMBINED_SHEET, SheetKind::Iterative, backend)?;

    let mut input_claims = std::collections::BTreeSet::new();
    collect_claim_keys(prev, &mut input_claims);
    collect_claim_keys(intermediate, &mut input_claims);

    let mut merged = WritingSheet::new(SheetKind::Iterative);
    for category in NarrativeCategory::ALL {
        let mut entries: Vec<ClaimEvidence> = parsed.sheet.entries(category).to_vec();
        for entry in &mut entries {
            if entry.story_ref.is_none() {
                entry.story_ref = Some(step);
            }
            // A claim absent from both inputs was rewritten while merging,
            // which is what grouping looks like from the outside.
            entry.grouped = !input_claims.contains(&normalize_text(&entry.claim));
        }
        entries.retain(|entry| !detect_degenerate_evidence(entry));
        let (grouped, ungrouped): (Vec<_>, Vec<_>) =
            entries.into_iter().partition(|entry| entry.grouped);
        let kept: Vec<ClaimEvidence> = grouped
            .into_iter()
            .chain(ungrouped)
            .take(CATEGORY_CAP)
            .collect();
        *merged.entries_mut(category) = kept;
    }
    check_refs(&merged, step)?;

    Ok(ParsedSheet {
        sheet: merged,
        warnings: parsed.warnings,
    })
}

// ===== Whole-profile builds =====

/// Builds the Author Writing Sheet by folding over the profiling stories in
/// timestamp order: one average story, one intermediate sheet, and one
/// combine per story (three requests per step).
pub fn build_sheet(
    profile: &AuthorProfile,
    registry: &PromptRegistry,
    backend: &dyn Backend,
) -> Result<SheetBuildOutcome, ProfilerError> {
    if profile.profiling.is_empty() {
        return Err(ProfilerError::EmptyProfile);
    }
    let mut state = SheetBuildState::new(&profile.author_id);
    let mut averages = Vec::with_capacity(profile.profiling.len());
    let mut warnings = Vec::new();
    for story in &profile.profiling {
        let step = story.timestamp;
        let fail = |e: ProfilerError| ProfilerError::StepFailed {
            step,
            source: Box::new(e),
        };

        let avg = generate_average_story(&story.prompt, registry, backend).map_err(fail)?;
        let parsed = intermediate_sheet(&story.prompt, story, &avg, backend).map_err(fail)?;
        let combined = combine(&state.current, &parsed.sheet, step, backend).map_err(fail)?;

        warnings.extend(
            parsed
                .warnings
                .iter()
                .chain(combined.warnings.iter())
                .map(|w| format!("step {step}: {w}")),
        );
        state.transcript.push((step, parsed.sheet));
        state.current = combined.sheet;
        state.step = step;
        averages.push(avg);
    }
    debug_assert!(state.current.total_entries() <= SHEET_CAP);
    Ok(SheetBuildOutcome {
        state,
        averages,
        warnings,
    })
}

/// Builds the Author Writing Summary with a single request packing every
/// profiling (prompt, story) pair. No cap is applied to summary sheets.
pub fn build_summary(
    profile: &AuthorProfile,
    backend: &dyn Backend,
) -> Result<ParsedSheet, ProfilerError> {
    if profile.profiling.is_empty() {
        return Err(ProfilerError::EmptyProfile);
    }
    let history = prompts::summary_history(&profile.profiling);
    let request = prompts::summary_request(&history)?;
    complete_sheet_with_retry(&request, TAG_WRITING_STYLE, SheetKind::Summary, backend)
}

// ===== Rendering =====

/// Canonical sheet text: the exact layout the prompts demonstrate, suitable
/// for embedding in downstream requests and for parse round-trips. Category
/// headings always appear, even when empty.
pub fn render_sheet(sheet: &WritingSheet) -> String {
    let mut out = String::new();
    for category in NarrativeCategory::ALL {
        out.push_str("### ");
        out.push_str(category.prompt_label());
        out.push('\n');
        for (i, entry) in sheet.entries(category).iter().enumerate() {
            out.push_str(&format!("{}. **{}**\n", i + 1, entry.claim));
            out.push_str("   - Evidence: ");
            match &entry.framing {
                Some(framing) => {
                    out.push_str(&format!("In the story regarding \"{framing},\" {}", entry.evidence))
                }
                None => out.push_str(&entry.evidence),
            }
            if let Some(story_ref) = entry.story_ref {
                out.push_str(&format!(" [{story_ref}]"));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}

/// Renders only one category's claims as a numbered list (the faithfulness
/// judge receives a single category at a time).
pub fn render_category_claims(sheet: &WritingSheet, category: NarrativeCategory) -> String {
    let entries = sheet.entries(category);
    if entries.is_empty() {
        return "(no documented preferences)".to_string();
    }
    let mut out = String::new();
    for (i, entry) in entries.iter().enumerate() {
        out.push_str(&format!("{}. **{}**\n", i + 1, entry.claim));
        out.push_str("   - Evidence: ");
        match &entry.framing {
            Some(framing) => {
                out.push_str(&format!("In the story regarding \"{framing},\" {}", entry.evidence))
            }
            None => out.push_str(&entry.evidence),
        }
        if let Some(story_ref) = entry.story_ref {
            out.push_str(&format!(" [{story_ref}]"));
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;

    fn reddit_wp(text: &str) -> WritingPrompt {
        WritingPrompt {
            text: text.to_string(),
            source: SourceKind::Reddit,
        }
    }

    fn story(ts: u32, prompt: &str, text: &str) -> Story {
        Story {
            author_id: "author-1".to_string(),
            prompt: reddit_wp(prompt),
            text: text.to_string(),
            timestamp: ts,
            word_count: crate::corpus::count_words(text),
            metadata: None,
            recorded_at: None,
        }
    }

    fn profile(n: u32) -> AuthorProfile {
        AuthorProfile {
            author_id: "author-1".to_string(),
            source: SourceKind::Reddit,
            profiling: (1..=n)
                .map(|t| story(t, &format!("prompt {t}"), &format!("story text {t}")))
                .collect(),
            generation: vec![story(n + 1, "held-out prompt", "held-out story")],
        }
    }

    /// A minimal valid sheet block with `per_category` claims per category,
    /// optionally carrying refs.
    fn sheet_block(per_category: usize, refs: Option<&[u32]>, salt: &str) -> String {
        let mut block = String::new();
        for category in NarrativeCategory::ALL {
            block.push_str(&format!("### {}\n", category.name()));
            for i in 0..per_category {
                block.push_str(&format!(
                    "{}. **The author {salt} {category:?} pattern {i}.**\n",
                    i + 1
                ));
                let suffix = match refs {
                    Some(list) => format!(" [{}]", list[i % list.len()]),
                    None => String::new(),
                };
                block.push_str(&format!(
                    "   - Evidence: In the story regarding \"{salt} prompt {i},\" excerpt {i}.{suffix}\n"
                ));
            }
        }
        block
    }

    fn style_response(per_category: usize, salt: &str) -> String {
        format!(
            "<thinking>contrast</thinking>\n<writing_style>\n{}</writing_style>",
            sheet_block(per_category, None, salt)
        )
    }

    fn combine_response(per_category: usize, refs: &[u32], salt: &str) -> String {
        format!(
            "<thinking>merge</thinking>\n<combined_author_sheet>\n{}</combined_author_sheet>",
            sheet_block(per_category, Some(refs), salt)
        )
    }

    #[test]
    fn average_story_is_mock_passthrough() {
        let backend = MockBackend::script(vec!["Once upon a midnight dreary...".to_string()]);
        let registry = PromptRegistry::default();
        let avg =
            generate_average_story(&reddit_wp("a prompt"), &registry, &backend).unwrap();
        assert_eq!(avg.text, "Once upon a midnight dreary...");
        assert_eq!(avg.source, SourceKind::Reddit);
        assert_eq!(backend.served(), 1);
    }

    #[test]
    fn unregistered_source_is_an_error() {
        let backend = MockBackend::script(vec!["unused".to_string()]);
        let mut registry = PromptRegistry::default();
        registry.remove_avg_template(SourceKind::Reddit);
        let err = generate_average_story(&reddit_wp("a prompt"), &registry, &backend).unwrap_err();
        assert_eq!(
            err,
            ProfilerError::UnknownSourceTemplate {
                kind: SourceKind::Reddit
            }
        );
        assert_eq!(backend.served(), 0);
    }

    #[test]
    fn blank_average_story_is_rejected() {
        let backend = MockBackend::script(vec!["   \n".to_string()]);
        let registry = PromptRegistry::default();
        let err = generate_average_story(&reddit_wp("a prompt"), &registry, &backend).unwrap_err();
        assert_eq!(err, ProfilerError::EmptyCompletion);
    }

    #[test]
    fn intermediate_sheet_parses_all_categories() {
        let backend = MockBackend::script(vec![style_response(2, "contrasting")]);
        let avg = AverageStory {
            prompt: reddit_wp("p"),
            text: "avg text".to_string(),
            source: SourceKind::Reddit,
        };
        let parsed =
            intermediate_sheet(&reddit_wp("p"), &story(1, "p", "author text"), &avg, &backend)
                .unwrap();
        for category in NarrativeCategory::ALL {
            assert_eq!(parsed.sheet.entries(category).len(), 2, "{category:?}");
        }
        // Refs are assigned at combine time, not here.
        assert_eq!(parsed.sheet.max_story_ref(), None);
        assert_eq!(backend.served(), 1);
    }

    #[test]
    fn intermediate_sheet_retries_once_then_fails() {
        let backend = MockBackend::script(vec![
            "<writing_style></writing_style>".to_string(),
            "no tags at all".to_string(),
        ]);
        let avg = AverageStory {
            prompt: reddit_wp("p"),
            text: "avg".to_string(),
            source: SourceKind::Reddit,
        };
        let err = intermediate_sheet(&reddit_wp("p"), &story(1, "p", "t"), &avg, &backend)
            .unwrap_err();
        assert!(matches!(err, ProfilerError::SheetParseFailed { .. }));
        assert_eq!(backend.served(), 2, "exactly one retry");
    }

    #[test]
    fn intermediate_sheet_retry_can_recover() {
        let backend = MockBackend::script(vec![
            "<writing_style></writing_style>".to_string(),
            style_response(1, "recovered"),
        ]);
        let avg = AverageStory {
            prompt: reddit_wp("p"),
            text: "avg".to_string(),
            source: SourceKind::Reddit,
        };
        let parsed = intermediate_sheet(&reddit_wp("p"), &story(1, "p", "t"), &avg, &backend)
            .unwrap();
        assert_eq!(parsed.sheet.total_entries(), 4);
        assert_eq!(backend.served(), 2);
    }

    #[test]
    fn combine_stamps_missing_refs_with_step() {
        // The response carries no refs; at t = 1 everything becomes [1].
        let response = format!(
            "<combined_author_sheet>\n{}</combined_author_sheet>",
            sheet_block(2, None, "fresh")
        );
        let backend = MockBackend::script(vec![response]);
        let prev = WritingSheet::new(SheetKind::Iterative);
        let mut intermediate = WritingSheet::new(SheetKind::Iterative);
        intermediate.push(
            NarrativeCategory::Plot,
            ClaimEvidence::new("Input claim.", "excerpt").with_framing("input prompt"),
        );
        let merged = combine(&prev, &intermediate, 1, &backend).unwrap().sheet;
        for (_, entries) in merged.iter() {
            for entry in entries {
                assert_eq!(entry.story_ref, Some(1));
            }
        }
    }

    #[test]
    fn combine_rejects_refs_beyond_step() {
        let backend = MockBackend::script(vec![combine_response(1, &[7], "wild")]);
        let prev = WritingSheet::new(SheetKind::Iterative);
        let intermediate = WritingSheet::new(SheetKind::Iterative);
        let err = combine(&prev, &intermediate, 5, &backend).unwrap_err();
        assert_eq!(err, ProfilerError::RefOutOfRange { found: 7, step: 5 });
    }

    #[test]
    fn combine_caps_categories_grouped_first() {
        // Previous sheet holds 10 Plot claims; the intermediate adds 3.
        // The model replies with 12 Plot entries: 4 rewritten (grouped) and
        // 8 carried over verbatim (ungrouped). Expect the 4 grouped entries
        // first, then the first 6 ungrouped, in stable order.
        let mut prev = WritingSheet::new(SheetKind::Iterative);
        for i in 0..10 {
            prev.push(
                NarrativeCategory::Plot,
                ClaimEvidence::new(format!("Carried claim {i}."), format!("old excerpt {i}"))
                    .with_framing("an earlier prompt")
                    .with_ref(1),
            );
        }
        let mut intermediate = WritingSheet::new(SheetKind::Iterative);
        for i in 0..3 {
            intermediate.push(
                NarrativeCategory::Plot,
                ClaimEvidence::new(format!("New claim {i}."), format!("new excerpt {i}"))
                    .with_framing("the new prompt"),
            );
        }

        let mut block = String::from("### Plot\n");
        let mut n = 0;
        for i in 0..4 {
            n += 1;
            block.push_str(&format!("{n}. **Merged insight {i}.**\n"));
            block.push_str(&format!(
                "   - Evidence: In the story regarding \"the new prompt,\" merged excerpt {i}. [2]\n"
            ));
        }
        for i in 0..8 {
            n += 1;
            block.push_str(&format!("{n}. **Carried claim {i}.**\n"));
            block.push_str(&format!(
                "   - Evidence: In the story regarding \"an earlier prompt,\" old excerpt {i}. [1]\n"
            ));
        }
        for category in [
            NarrativeCategory::Creativity,
            NarrativeCategory::Development,
            NarrativeCategory::LanguageUse,
        ] {
            block.push_str(&format!("### {}\n", category.name()));
        }
        let backend = MockBackend::script(vec![format!(
            "<combined_author_sheet>\n{block}</combined_author_sheet>"
        )]);

        let merged = combine(&prev, &intermediate, 2, &backend).unwrap().sheet;
        let plot = merged.entries(NarrativeCategory::Plot);
        assert_eq!(plot.len(), CATEGORY_CAP);
        let claims: Vec<&str> = plot.iter().map(|e| e.claim.as_str()).collect();
        assert_eq!(
            claims,
            vec![
                "Merged insight 0.",
                "Merged insight 1.",
                "Merged insight 2.",
                "Merged insight 3.",
                "Carried claim 0.",
                "Carried claim 1.",
                "Carried claim 2.",
                "Carried claim 3.",
                "Carried claim 4.",
                "Carried claim 5.",
            ]
        );
        assert!(plot[..4].iter().all(|e| e.grouped));
        assert!(plot[4..].iter().all(|e| !e.grouped));
        assert_eq!(merged.total_entries(), CATEGORY_CAP);
    }

    #[test]
    fn combine_drops_degenerate_evidence_before_capping() {
        let block = "### Plot\n\
1. **A solid claim.**\n\
   - Evidence: In the story regarding \"a prompt,\" a real excerpt. [1]\n\
2. **An unframed claim.**\n\
   - Evidence: bare excerpt with no framing phrase. [1]\n\
3. **A circular claim.**\n\
   - Evidence: In the story regarding \"a prompt,\" A circular claim. [1]\n\
### Creativity\n### Development\n### Language Use\n";
        let backend = MockBackend::script(vec![format!(
            "<combined_author_sheet>\n{block}</combined_author_sheet>"
        )]);
        let prev = WritingSheet::new(SheetKind::Iterative);
        let intermediate = WritingSheet::new(SheetKind::Iterative);
        let merged = combine(&prev, &intermediate, 1, &backend).unwrap().sheet;
        let plot = merged.entries(NarrativeCategory::Plot);
        assert_eq!(plot.len(), 1);
        assert_eq!(plot[0].claim, "A solid claim.");
    }

    #[test]
    fn build_sheet_folds_three_requests_per_story() {
        let mut script = Vec::new();
        for t in 1..=3u32 {
            script.push(format!("average story {t}"));
            script.push(style_response(2, &format!("step{t}")));
            script.push(combine_response(2 * t as usize, &[t], &format!("merged{t}")));
        }
        let backend = MockBackend::script(script);
        let outcome = build_sheet(&profile(3), &PromptRegistry::default(), &backend).unwrap();

        assert_eq!(backend.served(), 9, "three requests per story");
        assert_eq!(outcome.state.transcript.len(), 3);
        assert_eq!(outcome.averages.len(), 3);
        assert_eq!(outcome.state.step, 3);
        let max_ref = outcome.sheet().max_story_ref().unwrap();
        assert!(max_ref <= 3);
        for (_, entries) in outcome.sheet().iter() {
            assert!(entries.len() <= CATEGORY_CAP);
        }
    }

    #[test]
    fn build_sheet_is_reproducible_under_identical_scripts() {
        let make_backend = || {
            let mut script = Vec::new();
            for t in 1..=2u32 {
                script.push(format!("average story {t}"));
                script.push(style_response(3, &format!("step{t}")));
                script.push(combine_response(3, &[t], &format!("merged{t}")));
            }
            MockBackend::script(script)
        };
        let first = build_sheet(&profile(2), &PromptRegistry::default(), &make_backend()).unwrap();
        let second = build_sheet(&profile(2), &PromptRegistry::default(), &make_backend()).unwrap();
        assert_eq!(first, second);
        assert_eq!(render_sheet(first.sheet()), render_sheet(second.sheet()));
    }

    #[test]
    fn build_sheet_caps_growth_like_a_counting_oracle() {
        // Each step's merge response carries 4·t fresh claims per category.
        // An independent counting oracle says the kept count per category
        // after step t is min(10, 4·t).
        let mut script = Vec::new();
        for t in 1..=5u32 {
            script.push(format!("average story {t}"));
            script.push(style_response(4, &format!("step{t}")));
            script.push(combine_response(4 * t as usize, &[t], &format!("merged{t}")));
        }
        let backend = MockBackend::script(script);
        let outcome = build_sheet(&profile(5), &PromptRegistry::default(), &backend).unwrap();
        for (category, entries) in outcome.sheet().iter() {
            assert_eq!(
                entries.len(),
                CATEGORY_CAP.min(4 * 5),
                "{category:?} should be capped"
            );
        }
        assert_eq!(outcome.sheet().total_entries(), SHEET_CAP);
    }

    #[test]
    fn build_sheet_annotates_failing_step() {
        let script = vec![
            "average story 1".to_string(),
            style_response(1, "step1"),
            combine_response(1, &[1], "merged1"),
            "average story 2".to_string(),
            "garbage without tags".to_string(),
            "still garbage".to_string(),
        ];
        let backend = MockBackend::script(script);
        let err = build_sheet(&profile(2), &PromptRegistry::default(), &backend).unwrap_err();
        match err {
            ProfilerError::StepFailed { step, source } => {
                assert_eq!(step, 2);
                assert!(matches!(*source, ProfilerError::SheetParseFailed { .. }));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn build_summary_issues_exactly_one_request() {
        let backend = MockBackend::script(vec![style_response(3, "summary")]);
        let parsed = build_summary(&profile(3), &backend).unwrap();
        assert_eq!(backend.served(), 1);
        assert_eq!(parsed.sheet.kind, SheetKind::Summary);
        assert_eq!(parsed.sheet.total_entries(), 12);
    }

    #[test]
    fn build_summary_requires_profiling_stories() {
        let backend = MockBackend::script(vec![]);
        let mut empty = profile(1);
        empty.profiling.clear();
        assert_eq!(
            build_summary(&empty, &backend).unwrap_err(),
            ProfilerError::EmptyProfile
        );
        assert_eq!(
            build_sheet(&empty, &PromptRegistry::default(), &backend).unwrap_err(),
            ProfilerError::EmptyProfile
        );
    }

    #[test]
    fn render_empty_sheet_keeps_all_headings() {
        let rendered = render_sheet(&WritingSheet::new(SheetKind::Iterative));
        assert_eq!(
            rendered,
            "### Plot\n\n### Creativity\n\n### Development (Character and Setting)\n\n### Language Use\n"
        );
    }

    #[test]
    fn render_includes_trailing_ref_marker() {
        let mut sheet = WritingSheet::new(SheetKind::Iterative);
        sheet.push(
            NarrativeCategory::Plot,
            ClaimEvidence::new("Uses humor.", "a funny excerpt")
                .with_framing("a rescue mission")
                .with_ref(8),
        );
        let rendered = render_sheet(&sheet);
        assert!(rendered.contains("1. **Uses humor.**"));
        let evidence_line = rendered
            .lines()
            .find(|l| l.trim_start().starts_with("- Evidence:"))
            .unwrap();
        assert_eq!(
            evidence_line,
            "   - Evidence: In the story regarding \"a rescue mission,\" a funny excerpt [8]"
        );
    }

    #[test]
    fn rendered_sheets_round_trip_through_the_parser() {
        let mut sheet = WritingSheet::new(SheetKind::Iterative);
        sheet.push(
            NarrativeCategory::Plot,
            ClaimEvidence::new("Opens in medias res.", "the door was already burning")
                .with_framing("a dragon heist")
                .with_ref(2),
        );
        sheet.push(
            NarrativeCategory::Creativity,
            ClaimEvidence::new("Blends genres.", "a noir detective in a fairy tale")
                .with_framing("a cursed bakery")
                .with_ref(1),
        );
        sheet.push(
            NarrativeCategory::LanguageUse,
            ClaimEvidence::new("Prefers short sentences.", "He ran. He fell. He laughed.")
                .with_framing("a marathon gone wrong")
                .with_ref(2),
        );
        let reparsed = parse_sheet(&render_sheet(&sheet), SheetKind::Iterative)
            .unwrap()
            .sheet;
        for category in NarrativeCategory::ALL {
            let original = sheet.entries(category);
            let round = reparsed.entries(category);
            assert_eq!(original.len(), round.len(), "{category:?}");
            for (a, b) in original.iter().zip(round) {
                assert_eq!(a.claim, b.claim);
                assert_eq!(a.evidence, b.evidence);
                assert_eq!(a.framing, b.framing);
                assert_eq!(a.story_ref, b.story_ref);
            }
        }
    }

    #[test]
    fn category_claims_render_numbered_or_placeholder() {
        let mut sheet = WritingSheet::new(SheetKind::Iterative);
        sheet.push(
            NarrativeCategory::Plot,
            ClaimEvidence::new("Claim one.", "excerpt one").with_framing("a prompt"),
        );
        let text = render_category_claims(&sheet, NarrativeCategory::Plot);
        assert!(text.starts_with("1. **Claim one.**"));
        assert_eq!(
            render_category_claims(&sheet, NarrativeCategory::Creativity),
            "(no documented preferences)"
        );
    }
}
