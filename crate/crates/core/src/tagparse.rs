//! Parsing of tagged LLM output into typed sheet/score structures.
//!
//! Model responses wrap their payload in XML-ish tags (`<writing_style>`,
//! `<combined_author_sheet>`, `<score>`, ...). Inside a sheet block the
//! expected layout is markdown-ish:
//!
//! ```text
//! ### Plot
//! 1. **The author leans on escalating misunderstandings.**
//!    - Evidence: In the story regarding "a borrowed umbrella," the narrator... [3]
//! ```
//!
//! Parsing is deliberately tolerant of the noise models add (bold headings,
//! category parentheticals, stray bullets); anything unrecognized becomes a
//! warning rather than a dropped entry or a hard failure. Hard failures are
//! reserved for structural breakage: no categories at all, a claim with no
//! evidence line, missing/unclosed tags, or scores outside 1..=5.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four narrative categories every sheet, rule set, persona, and judge
/// verdict is organized around. Declaration order is the canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NarrativeCategory {
    Plot,
    Creativity,
    Development,
    LanguageUse,
}

impl NarrativeCategory {
    pub const ALL: [NarrativeCategory; 4] = [
        NarrativeCategory::Plot,
        NarrativeCategory::Creativity,
        NarrativeCategory::Development,
        NarrativeCategory::LanguageUse,
    ];

    /// Canonical heading text used when rendering sheets and rules.
    pub fn name(self) -> &'static str {
        match self {
            NarrativeCategory::Plot => "Plot",
            NarrativeCategory::Creativity => "Creativity",
            NarrativeCategory::Development => "Development",
            NarrativeCategory::LanguageUse => "Language Use",
        }
    }

    /// Longer label used inside prompt category lists.
    pub fn prompt_label(self) -> &'static str {
        match self {
            NarrativeCategory::Development => "Development (Character and Setting)",
            other => other.name(),
        }
    }

    fn index(self) -> usize {
        match self {
            NarrativeCategory::Plot => 0,
            NarrativeCategory::Creativity => 1,
            NarrativeCategory::Development => 2,
            NarrativeCategory::LanguageUse => 3,
        }
    }

    /// Matches a heading against the category names, ignoring case, bold
    /// markers, and a trailing parenthetical like "(Character and Setting)".
    pub fn parse_heading(text: &str) -> Option<NarrativeCategory> {
        let cleaned = text.replace("**", "");
        let cleaned = match cleaned.find('(') {
            Some(i) => &cleaned[..i],
            None => &cleaned[..],
        };
        let normalized = cleaned.trim().trim_end_matches(':').trim().to_lowercase();
        match normalized.as_str() {
            "plot" => Some(NarrativeCategory::Plot),
            "creativity" => Some(NarrativeCategory::Creativity),
            "development" => Some(NarrativeCategory::Development),
            "language use" | "languageuse" => Some(NarrativeCategory::LanguageUse),
            _ => None,
        }
    }
}

/// A claim about the author's style plus the story evidence backing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimEvidence {
    pub claim: String,
    /// Evidence text with the framing prefix and story ref stripped off.
    pub evidence: String,
    /// The descriptor inside `In the story regarding "..."`, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framing: Option<String>,
    /// 1-based profiling-story timestamp the evidence cites.
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub story_ref: Option<u32>,
    /// Whether this entry was produced by merging equivalent claims.
    #[serde(default)]
    pub grouped: bool,
}

impl ClaimEvidence {
    pub fn new(claim: impl Into<String>, evidence: impl Into<String>) -> Self {
        ClaimEvidence {
            claim: claim.into(),
            evidence: evidence.into(),
            framing: None,
            story_ref: None,
            grouped: false,
        }
    }

    pub fn with_framing(mut self, framing: impl Into<String>) -> Self {
        self.framing = Some(framing.into());
        self
    }

    pub fn with_ref(mut self, story_ref: u32) -> Self {
        self.story_ref = Some(story_ref);
        self
    }
}

/// How a sheet was produced: step-by-step merging or a single summary pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SheetKind {
    Iterative,
    Summary,
}

/// Per-category claim-evidence entries. Every sheet always carries all four
/// categories (possibly empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SheetRepr", from = "SheetRepr")]
pub struct WritingSheet {
    pub kind: SheetKind,
    entries: [Vec<ClaimEvidence>; 4],
}

#[derive(Serialize, Deserialize, Clone)]
struct SheetRepr {
    kind: SheetKind,
    categories: BTreeMap<NarrativeCategory, Vec<ClaimEvidence>>,
}

impl From<WritingSheet> for SheetRepr {
    fn from(sheet: WritingSheet) -> Self {
        let mut categories = BTreeMap::new();
        for category in NarrativeCategory::ALL {
            categories.insert(category, sheet.entries(category).to_vec());
        }
        SheetRepr {
            kind: sheet.kind,
            categories,
        }
    }
}

impl From<SheetRepr> for WritingSheet {
    fn from(repr: SheetRepr) -> Self {
        let mut sheet = WritingSheet::new(repr.kind);
        for (category, entries) in repr.categories {
            sheet.entries[category.index()] = entries;
        }
        sheet
    }
}

impl WritingSheet {
    pub fn new(kind: SheetKind) -> Self {
        WritingSheet {
            kind,
            entries: Default::default(),
        }
    }

    pub fn entries(&self, category: NarrativeCategory) -> &[ClaimEvidence] {
        &self.entries[category.index()]
    }

    pub fn entries_mut(&mut self, category: NarrativeCategory) -> &mut Vec<ClaimEvidence> {
        &mut self.entries[category.index()]
    }

    pub fn push(&mut self, category: NarrativeCategory, entry: ClaimEvidence) {
        self.entries[category.index()].push(entry);
    }

    pub fn total_entries(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_entries() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (NarrativeCategory, &[ClaimEvidence])> {
        NarrativeCategory::ALL
            .into_iter()
            .map(move |c| (c, self.entries(c)))
    }

    /// Largest story ref cited anywhere in the sheet.
    pub fn max_story_ref(&self) -> Option<u32> {
        self.entries
            .iter()
            .flatten()
            .filter_map(|e| e.story_ref)
            .max()
    }

    /// All claims of one category, used as the faithfulness judge reference.
    pub fn claims(&self, category: NarrativeCategory) -> Vec<&str> {
        self.entries(category)
            .iter()
            .map(|e| e.claim.as_str())
            .collect()
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TagParseError {
    #[error("missing <{tag}> block in response")]
    MissingTag { tag: String },
    #[error("<{tag}> block is never closed")]
    UnclosedTag { tag: String },
    #[error("no category headings found in sheet block")]
    NoCategoriesFound,
    #[error("claim {ordinal} under {category} has no evidence line")]
    ClaimWithoutEvidence { category: String, ordinal: u32 },
    #[error("score label {label:?} not found in block")]
    LabelMissing { label: String },
    #[error("score for {label:?} outside 1..=5: {value}")]
    ScoreOutOfRange { label: String, value: i64 },
}

/// A parsed sheet plus anything the parser tolerated but found odd.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSheet {
    pub sheet: WritingSheet,
    pub warnings: Vec<String>,
}

// ===== Tag extraction =====

/// Returns the trimmed content of the last complete `<tag>...</tag>` block.
///
/// Models sometimes emit a draft block before the final one; taking the last
/// complete block keeps the final answer. An opening tag without a closing
/// tag is an error (usually a truncated response).
pub fn extract_block(text: &str, tag: &str) -> Result<String, TagParseError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut cursor = 0;
    let mut last: Option<&str> = None;
    while let Some(start) = text[cursor..].find(&open) {
        let content_start = cursor + start + open.len();
        match text[content_start..].find(&close) {
            Some(end) => {
                last = Some(&text[content_start..content_start + end]);
                cursor = content_start + end + close.len();
            }
            None => {
                return Err(TagParseError::UnclosedTag { tag: tag.into() });
            }
        }
    }
    match last {
        Some(content) => Ok(content.trim().to_string()),
        None => Err(TagParseError::MissingTag { tag: tag.into() }),
    }
}

// ===== Sheet parsing =====

struct PendingClaim {
    ordinal: u32,
    claim: String,
    evidence: Option<String>,
}

/// Parses a sheet block (the inside of `<writing_style>` or
/// `<combined_author_sheet>`) into a [`WritingSheet`].
pub fn parse_sheet(block: &str, kind: SheetKind) -> Result<ParsedSheet, TagParseError> {
    // Compiled once: parsing runs inside tight per-story loops.
    static CLAIM_RE: OnceLock<Regex> = OnceLock::new();
    static EVIDENCE_RE: OnceLock<Regex> = OnceLock::new();
    static BULLET_RE: OnceLock<Regex> = OnceLock::new();
    let claim_re = CLAIM_RE.get_or_init(|| Regex::new(r"^\s*(\d+)[.)]\s+(.*\S)\s*$").unwrap());
    let evidence_re = EVIDENCE_RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*[-*]\s*\*{0,2}evidence\*{0,2}\s*:\s*(.*\S)?\s*$").unwrap()
    });
    let bullet_re = BULLET_RE.get_or_init(|| Regex::new(r"^\s*[-*]\s+").unwrap());

    let mut sheet = WritingSheet::new(kind);
    let mut warnings = Vec::new();
    let mut category: Option<NarrativeCategory> = None;
    let mut skipping_unknown_heading = false;
    let mut pending: Option<PendingClaim> = None;
    let mut saw_any_heading = false;

    fn finalize(
        pending: &mut Option<PendingClaim>,
        category: Option<NarrativeCategory>,
        sheet: &mut WritingSheet,
        warnings: &mut Vec<String>,
    ) -> Result<(), TagParseError> {
        if let Some(p) = pending.take() {
            let category = category.expect("pending claim always has a category");
            match p.evidence {
                Some(evidence) => {
                    let entry = build_entry(p.claim, evidence, warnings);
                    sheet.push(category, entry);
                }
                None => {
                    return Err(TagParseError::ClaimWithoutEvidence {
                        category: category.name().into(),
                        ordinal: p.ordinal,
                    })
                }
            }
        }
        Ok(())
    }

    for raw_line in block.lines() {
        let line = raw_line.trim_end();
        let trimmed = line.trim_start();

        if let Some(heading) = trimmed.strip_prefix("###") {
            finalize(&mut pending, category, &mut sheet, &mut warnings)?;
            saw_any_heading = true;
            match NarrativeCategory::parse_heading(heading) {
                Some(c) => {
                    category = Some(c);
                    skipping_unknown_heading = false;
                }
                None => {
                    warnings.push(format!(
                        "unrecognized category heading {:?}; entries dropped",
                        heading.trim()
                    ));
                    category = None;
                    skipping_unknown_heading = true;
                }
            }
            continue;
        }

        if trimmed.is_empty() {
            continue;
        }
        if skipping_unknown_heading {
            continue;
        }

        if let Some(captures) = evidence_re.captures(trimmed) {
            match pending.as_mut() {
                Some(p) => {
                    let text = captures.get(1).map(|m| m.as_str()).unwrap_or("");
                    match &mut p.evidence {
                        Some(existing) => {
                            warnings.push(format!(
                                "claim {} has multiple evidence lines; keeping all",
                                p.ordinal
                            ));
                            existing.push(' ');
                            existing.push_str(text);
                        }
                        None => p.evidence = Some(text.to_string()),
                    }
                }
                None => warnings.push("evidence line without a claim; dropped".into()),
            }
            continue;
        }

        if let Some(captures) = claim_re.captures(trimmed) {
            // A bare number list inside evidence continuation is unlikely;
            // treat every numbered line as the next claim.
            finalize(&mut pending, category, &mut sheet, &mut warnings)?;
            if category.is_none() {
                warnings.push(format!(
                    "claim before any category heading; dropped: {:?}",
                    captures.get(2).unwrap().as_str()
                ));
                continue;
            }
            let ordinal: u32 = captures[1].parse().unwrap_or(0);
            let claim = strip_emphasis(captures.get(2).unwrap().as_str());
            if claim.is_empty() {
                warnings.push(format!("claim {ordinal} is empty; dropped"));
                continue;
            }
            pending = Some(PendingClaim {
                ordinal,
                claim,
                evidence: None,
            });
            continue;
        }

        if bullet_re.is_match(trimmed) {
            warnings.push(format!("unrecognized bullet skipped: {trimmed:?}"));
            continue;
        }

        // Plain continuation text extends the evidence being built.
        match pending.as_mut().and_then(|p| p.evidence.as_mut()) {
            Some(evidence) => {
                evidence.push(' ');
                evidence.push_str(trimmed);
            }
            None => warnings.push(format!("unrecognized line skipped: {trimmed:?}")),
        }
    }
    finalize(&mut pending, category, &mut sheet, &mut warnings)?;

    if !saw_any_heading {
        return Err(TagParseError::NoCategoriesFound);
    }
    Ok(ParsedSheet { sheet, warnings })
}

/// Splits a raw evidence string into (framing, core evidence, story ref).
fn build_entry(claim: String, raw_evidence: String, warnings: &mut Vec<String>) -> ClaimEvidence {
    let mut evidence = raw_evidence.trim().to_string();

    // Trailing story ref: "... [8]".
    static REF_RE: OnceLock<Regex> = OnceLock::new();
    let ref_re = REF_RE.get_or_init(|| Regex::new(r"\s*\[(\d+)\]\s*\.?\s*$").unwrap());
    let mut story_ref = None;
    if let Some(captures) = ref_re.captures(&evidence) {
        let value: u64 = captures[1].parse().unwrap_or(0);
        if value >= 1 && value <= u32::MAX as u64 {
            story_ref = Some(value as u32);
            let start = captures.get(0).unwrap().start();
            evidence.truncate(start);
        } else {
            warnings.push(format!("story ref [{value}] out of range; ignored"));
            let start = captures.get(0).unwrap().start();
            evidence.truncate(start);
        }
    }

    let (framing, core) = split_framing(&evidence);
    ClaimEvidence {
        claim,
        evidence: core,
        framing,
        story_ref,
        grouped: false,
    }
}

const FRAMING_PREFIX: &str = "in the story regarding";

/// Recognizes the `In the story regarding "<descriptor>," <evidence>`
/// framing. Falls back to (None, full text) when the shape doesn't hold, so
/// malformed framing degrades to unframed evidence instead of data loss.
fn split_framing(evidence: &str) -> (Option<String>, String) {
    let lower = evidence.to_lowercase();
    if !lower.starts_with(FRAMING_PREFIX) {
        return (None, evidence.to_string());
    }
    let rest = evidence[FRAMING_PREFIX.len()..].trim_start();
    let mut chars = rest.char_indices();
    let closing: &[char] = match chars.next() {
        Some((_, '"')) => &['"'],
        Some((_, '\u{201c}')) | Some((_, '\u{201d}')) => &['\u{201d}', '\u{201c}'],
        Some((_, '\'')) => &['\''],
        Some((_, '\u{2018}')) | Some((_, '\u{2019}')) => &['\u{2019}'],
        _ => {
            // Unquoted descriptor: up to the first comma.
            if let Some(comma) = rest.find(',') {
                let descriptor = rest[..comma].trim();
                let core = rest[comma + 1..].trim();
                if !descriptor.is_empty() && !core.is_empty() {
                    return (Some(descriptor.to_string()), core.to_string());
                }
            }
            return (None, evidence.to_string());
        }
    };
    let open_len = rest.chars().next().unwrap().len_utf8();
    let body = &rest[open_len..];
    if let Some(close) = body.find(closing) {
        let descriptor = body[..close].trim().trim_end_matches(',').trim();
        let close_len = body[close..].chars().next().unwrap().len_utf8();
        let mut core = body[close + close_len..].trim_start();
        core = core.strip_prefix(',').unwrap_or(core).trim_start();
        if !descriptor.is_empty() && !core.is_empty() {
            return (Some(descriptor.to_string()), core.to_string());
        }
    }
    (None, evidence.to_string())
}

/// Strips surrounding bold/emphasis markers from a fragment.
pub fn strip_emphasis(text: &str) -> String {
    let trimmed = text.trim();
    let trimmed = trimmed
        .strip_prefix("**")
        .and_then(|t| t.strip_suffix("**"))
        .unwrap_or(trimmed);
    trimmed.trim().trim_matches('*').trim().to_string()
}

// ===== Scores =====

/// Finds `<label>: <integer>` for every label, enforcing the 1..=5 range.
pub fn parse_scores(block: &str, labels: &[&str]) -> Result<BTreeMap<String, u8>, TagParseError> {
    let mut scores = BTreeMap::new();
    for &label in labels {
        let pattern = format!(
            r"(?mi)^\s*\*{{0,2}}{}\*{{0,2}}\s*:\s*\*{{0,2}}\s*(-?\d+)",
            regex::escape(label)
        );
        let re = Regex::new(&pattern).unwrap();
        let captures = re
            .captures(block)
            .ok_or_else(|| TagParseError::LabelMissing {
                label: label.into(),
            })?;
        let value: i64 = captures[1].parse().map_err(|_| TagParseError::ScoreOutOfRange {
            label: label.into(),
            value: i64::MAX,
        })?;
        if !(1..=5).contains(&value) {
            return Err(TagParseError::ScoreOutOfRange {
                label: label.into(),
                value,
            });
        }
        scores.insert(label.to_string(), value as u8);
    }
    Ok(scores)
}

/// Renders labeled scores one per line; the inverse of [`parse_scores`].
pub fn render_scores(scores: &[(&str, u8)]) -> String {
    scores
        .iter()
        .map(|(label, value)| format!("{label}: {value}"))
        .collect::<Vec<_>>()
        .join("\n")
}

// ===== Degenerate evidence =====

/// Case-folds, strips punctuation, and collapses whitespace so near-equal
/// strings compare equal.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    out.trim_end().to_string()
}

/// True when evidence fails to ground the claim in a story: either the
/// framing prefix is missing or the evidence merely restates the claim.
pub fn detect_degenerate_evidence(entry: &ClaimEvidence) -> bool {
    entry.framing.is_none() || normalize_text(&entry.evidence) == normalize_text(&entry.claim)
}

#[cfg(test)]
mod tests {
    use super::*;

    // A sheet block shaped like the published sample sheet: two pairs per
    // category, framed evidence, trailing story refs.
    const SAMPLE_PLOT_EXCERPT: &str = r#"### Plot
1. **The author structures the story around a humorous and light-hearted approach to conflict resolution.**
   - Evidence: In the story regarding "an adventure to rescue a missing friend by facing fears," the protagonist Pip's journey is filled with comedic elements, such as the realization that the cage door was already unlatched and the exaggerated fear of the vacuum cleaner, humorously referred to as the "Roaring Demon." [8]

2. **The author structures the narrative around personal transformation and empowerment.**
   - Evidence: In the story regarding "a king's deal with the fae for his firstborn," the narrative follows Margaret Rose as she receives an extraordinary education in the Seelie Court, culminating in her return to challenge her father with a corporate takeover bid for the kingdom. [7]
"#;

    #[test]
    fn extract_block_takes_last_complete_block() {
        let text = "pre <t>draft</t> mid <t> final answer </t> post";
        assert_eq!(extract_block(text, "t").unwrap(), "final answer");
    }

    #[test]
    fn extract_block_errors() {
        assert_eq!(
            extract_block("no tags here", "t").unwrap_err(),
            TagParseError::MissingTag { tag: "t".into() }
        );
        assert_eq!(
            extract_block("<t>never closed", "t").unwrap_err(),
            TagParseError::UnclosedTag { tag: "t".into() }
        );
        // A complete block followed by a dangling open is truncation.
        assert_eq!(
            extract_block("<t>ok</t><t>cut off", "t").unwrap_err(),
            TagParseError::UnclosedTag { tag: "t".into() }
        );
    }

    #[test]
    fn parses_sample_shaped_plot_excerpt() {
        let parsed = parse_sheet(SAMPLE_PLOT_EXCERPT, SheetKind::Iterative).unwrap();
        assert!(parsed.warnings.is_empty(), "{:?}", parsed.warnings);
        let entries = parsed.sheet.entries(NarrativeCategory::Plot);
        assert_eq!(entries.len(), 2);
        assert!(entries[0]
            .claim
            .starts_with("The author structures the story around a humorous"));
        assert_eq!(entries[0].story_ref, Some(8));
        assert_eq!(
            entries[0].framing.as_deref(),
            Some("an adventure to rescue a missing friend by facing fears")
        );
        assert!(entries[0].evidence.starts_with("the protagonist Pip's journey"));
        // Inner quotes after the descriptor stay in the evidence body.
        assert!(entries[0].evidence.contains("Roaring Demon"));
        assert_eq!(entries[1].story_ref, Some(7));
        assert!(entries[1].evidence.ends_with("kingdom."));
        // Other categories exist but are empty.
        assert!(parsed.sheet.entries(NarrativeCategory::Creativity).is_empty());
        assert_eq!(parsed.sheet.total_entries(), 2);
    }

    #[test]
    fn tolerates_bold_headings_and_parentheticals() {
        let block = "\
### **Plot**
1. **Claim one.**
   - Evidence: In the story regarding \"a test,\" something happened. [1]
### Development (Character and Setting)
1. **Claim two.**
   - Evidence: In the story regarding \"a test,\" a character grew. [2]
### language use
1. Claim three without bold.
   - Evidence: plain evidence with no framing
";
        let parsed = parse_sheet(block, SheetKind::Iterative).unwrap();
        assert_eq!(parsed.sheet.entries(NarrativeCategory::Plot).len(), 1);
        assert_eq!(parsed.sheet.entries(NarrativeCategory::Development).len(), 1);
        let lang = parsed.sheet.entries(NarrativeCategory::LanguageUse);
        assert_eq!(lang.len(), 1);
        assert_eq!(lang[0].claim, "Claim three without bold.");
        assert_eq!(lang[0].framing, None);
        assert_eq!(lang[0].story_ref, None);
        assert_eq!(lang[0].evidence, "plain evidence with no framing");
    }

    #[test]
    fn unknown_heading_warns_and_drops_its_entries() {
        let block = "\
### Plot
1. **Kept.**
   - Evidence: In the story regarding \"x,\" kept evidence. [1]
### Pacing
1. **Dropped.**
   - Evidence: dropped evidence.
";
        let parsed = parse_sheet(block, SheetKind::Iterative).unwrap();
        assert_eq!(parsed.sheet.total_entries(), 1);
        assert!(parsed.warnings.iter().any(|w| w.contains("Pacing")));
    }

    #[test]
    fn claim_without_evidence_is_an_error() {
        let block = "\
### Plot
1. **First claim.**
2. **Second claim.**
   - Evidence: only the second has evidence.
";
        let err = parse_sheet(block, SheetKind::Iterative).unwrap_err();
        assert_eq!(
            err,
            TagParseError::ClaimWithoutEvidence {
                category: "Plot".into(),
                ordinal: 1
            }
        );
    }

    #[test]
    fn no_categories_is_an_error() {
        let err = parse_sheet("just some prose\nwith lines", SheetKind::Iterative).unwrap_err();
        assert_eq!(err, TagParseError::NoCategoriesFound);
    }

    #[test]
    fn evidence_continuation_lines_are_joined() {
        let block = "\
### Creativity
1. **Wraps across lines.**
   - Evidence: In the story regarding \"a test,\" the first part
     continues on the next line. [4]
";
        let parsed = parse_sheet(block, SheetKind::Iterative).unwrap();
        let entry = &parsed.sheet.entries(NarrativeCategory::Creativity)[0];
        assert_eq!(entry.story_ref, Some(4));
        assert_eq!(
            entry.evidence,
            "the first part continues on the next line."
        );
    }

    #[test]
    fn multiple_evidence_lines_warn_but_keep_text() {
        let block = "\
### Plot
1. **Claim.**
   - Evidence: In the story regarding \"a,\" first bit. [2]
   - Evidence: second bit.
";
        let parsed = parse_sheet(block, SheetKind::Iterative).unwrap();
        let entry = &parsed.sheet.entries(NarrativeCategory::Plot)[0];
        assert!(entry.evidence.contains("first bit"));
        assert!(entry.evidence.contains("second bit"));
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn missing_refs_parse_as_none() {
        let block = "\
### Plot
1. **No ref here.**
   - Evidence: In the story regarding \"something,\" it happened.
";
        let parsed = parse_sheet(block, SheetKind::Iterative).unwrap();
        assert_eq!(parsed.sheet.entries(NarrativeCategory::Plot)[0].story_ref, None);
    }

    #[test]
    fn summary_kind_is_preserved() {
        let parsed = parse_sheet(SAMPLE_PLOT_EXCERPT, SheetKind::Summary).unwrap();
        assert_eq!(parsed.sheet.kind, SheetKind::Summary);
    }

    #[test]
    fn parse_scores_happy_and_sad_paths() {
        let block = "Story A: 4\nStory B: 2\n";
        let scores = parse_scores(block, &["Story A", "Story B"]).unwrap();
        assert_eq!(scores["Story A"], 4);
        assert_eq!(scores["Story B"], 2);

        let err = parse_scores("Story A: 4\n", &["Story A", "Story B"]).unwrap_err();
        assert_eq!(
            err,
            TagParseError::LabelMissing {
                label: "Story B".into()
            }
        );

        let err = parse_scores("Story A: 9\nStory B: 1", &["Story A", "Story B"]).unwrap_err();
        assert_eq!(
            err,
            TagParseError::ScoreOutOfRange {
                label: "Story A".into(),
                value: 9
            }
        );
        let err = parse_scores("Story A: 0\nStory B: 1", &["Story A", "Story B"]).unwrap_err();
        assert_eq!(
            err,
            TagParseError::ScoreOutOfRange {
                label: "Story A".into(),
                value: 0
            }
        );
    }

    #[test]
    fn parse_scores_tolerates_bold_labels() {
        let block = "**Assistant A**: 5\n**Assistant B**: 5";
        let scores = parse_scores(block, &["Assistant A", "Assistant B"]).unwrap();
        assert_eq!(scores["Assistant A"], 5);
        assert_eq!(scores["Assistant B"], 5);
    }

    #[test]
    fn render_scores_round_trips() {
        let rendered = render_scores(&[("Story A", 3), ("Story B", 5)]);
        assert_eq!(rendered, "Story A: 3\nStory B: 5");
        let parsed = parse_scores(&rendered, &["Story A", "Story B"]).unwrap();
        assert_eq!(parsed["Story A"], 3);
        assert_eq!(parsed["Story B"], 5);
    }

    #[test]
    fn degenerate_detection() {
        let framed = ClaimEvidence::new("The author uses humor.", "the scene is a farce")
            .with_framing("a test");
        assert!(!detect_degenerate_evidence(&framed));

        // Missing framing prefix.
        let unframed = ClaimEvidence::new("The author uses humor.", "the scene is a farce");
        assert!(detect_degenerate_evidence(&unframed));

        // Evidence restates the claim modulo case and punctuation.
        let echo = ClaimEvidence::new("The author uses humor.", "the author uses humor")
            .with_framing("a test");
        assert!(detect_degenerate_evidence(&echo));
    }

    #[test]
    fn sample_excerpt_has_no_degenerate_pairs() {
        let parsed = parse_sheet(SAMPLE_PLOT_EXCERPT, SheetKind::Iterative).unwrap();
        let degenerate = parsed
            .sheet
            .iter()
            .flat_map(|(_, entries)| entries)
            .filter(|e| detect_degenerate_evidence(e))
            .count();
        assert_eq!(degenerate, 0);
    }

    #[test]
    fn sheet_serde_uses_category_keyed_map() {
        let mut sheet = WritingSheet::new(SheetKind::Iterative);
        sheet.push(
            NarrativeCategory::Plot,
            ClaimEvidence::new("c", "e").with_framing("f").with_ref(3),
        );
        let json = serde_json::to_value(&sheet).unwrap();
        assert_eq!(json["kind"], "Iterative");
        assert_eq!(json["categories"]["Plot"][0]["claim"], "c");
        assert_eq!(json["categories"]["Plot"][0]["ref"], 3);
        assert_eq!(json["categories"]["Plot"][0]["grouped"], false);
        assert!(json["categories"]["LanguageUse"].as_array().unwrap().is_empty());
        let back: WritingSheet = serde_json::from_value(json).unwrap();
        assert_eq!(back, sheet);
    }

    #[test]
    fn normalize_text_folds_case_and_punctuation() {
        assert_eq!(normalize_text("The Author, uses Humor!"), "the author uses humor");
        assert_eq!(normalize_text("  a   b  "), "a b");
        assert_eq!(normalize_text(""), "");
    }
}
