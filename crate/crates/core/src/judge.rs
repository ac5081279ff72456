//! Pairwise story evaluation with an LLM judge.
//!
//! Each generated story is compared against the non-personalized baseline
//! in two modes: faithfulness to the author's writing history (reference:
//! the claims of the author writing summary) and similarity to the held-out
//! ground-truth story. A pair is judged once per narrative category with a
//! 1–5 score for each side; presentation order is shuffled once per pair
//! and scores are re-attributed afterwards. Totals decide the overall
//! winner, and verdicts aggregate into integer win-rate tables.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SourceKind, WritingPrompt};
use crate::gateway::{Backend, GatewayError};
use crate::generator::GenerationMethod;
use crate::profiler::render_category_claims;
use crate::prompts::{self, TAG_SCORE};
use crate::tagparse::{extract_block, NarrativeCategory, WritingSheet};

// ===== Domain types =====

/// What the judge compares the two stories against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JudgeMode {
    /// Reference: per-category claims of the author writing summary.
    Faithfulness,
    /// Reference: the ground-truth story for the evaluated prompt.
    Similarity,
}

impl JudgeMode {
    pub const ALL: [JudgeMode; 2] = [JudgeMode::Faithfulness, JudgeMode::Similarity];

    pub fn label(self) -> &'static str {
        match self {
            JudgeMode::Faithfulness => "faithfulness",
            JudgeMode::Similarity => "similarity",
        }
    }

    pub fn parse_label(label: &str) -> Option<JudgeMode> {
        JudgeMode::ALL.into_iter().find(|m| m.label() == label)
    }

    /// The labels the judge template uses for the two presented stories.
    fn story_labels(self) -> (&'static str, &'static str) {
        match self {
            JudgeMode::Faithfulness => ("Story A", "Story B"),
            JudgeMode::Similarity => ("Assistant A", "Assistant B"),
        }
    }
}

/// Which story was shown to the judge as "A".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PresentedOrder {
    CandidateFirst,
    BaselineFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoryWinner {
    Candidate,
    Baseline,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairOutcome {
    Win,
    Loss,
    Tie,
}

/// One category's re-attributed scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVerdict {
    pub category: NarrativeCategory,
    pub score_candidate: u8,
    pub score_baseline: u8,
    pub winner: CategoryWinner,
}

impl CategoryVerdict {
    fn new(category: NarrativeCategory, score_candidate: u8, score_baseline: u8) -> Self {
        let winner = match score_candidate.cmp(&score_baseline) {
            std::cmp::Ordering::Greater => CategoryWinner::Candidate,
            std::cmp::Ordering::Less => CategoryWinner::Baseline,
            std::cmp::Ordering::Equal => CategoryWinner::Tie,
        };
        CategoryVerdict {
            category,
            score_candidate,
            score_baseline,
            winner,
        }
    }
}

/// The full judgment of one candidate/baseline pair in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub author_id: String,
    pub wp: WritingPrompt,
    pub method: GenerationMethod,
    pub mode: JudgeMode,
    pub categories: Vec<CategoryVerdict>,
    pub total_candidate: u32,
    pub total_baseline: u32,
    pub overall: PairOutcome,
    pub shuffle_seed: u64,
    pub presented_order: PresentedOrder,
}

/// A table row: one narrative category, or the total-score Overall line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReportRow {
    Category(NarrativeCategory),
    Overall,
}

impl ReportRow {
    pub fn label(self) -> &'static str {
        match self {
            ReportRow::Category(category) => category.prompt_label(),
            ReportRow::Overall => "Overall",
        }
    }
}

/// Win/tie/loss counts with the integer win-rate percentage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinRateCell {
    pub wins: u32,
    pub ties: u32,
    pub losses: u32,
    pub n: u32,
    pub win_rate: u32,
}

impl WinRateCell {
    fn add(&mut self, wins: u32, ties: u32, losses: u32) {
        self.wins += wins;
        self.ties += ties;
        self.losses += losses;
        self.n += wins + ties + losses;
    }

    fn finish(&mut self) {
        self.win_rate = percent_half_up(self.wins, self.n);
    }
}

/// 100·part/whole rounded half-up to an integer percent (0 when whole = 0).
pub fn percent_half_up(part: u32, whole: u32) -> u32 {
    if whole == 0 {
        return 0;
    }
    let part = part as u64;
    let whole = whole as u64;
    ((200 * part + whole) / (2 * whole)) as u32
}

/// Win-rate table keyed by (source, method, mode, row).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WinRateReport {
    pub cells: BTreeMap<(SourceKind, GenerationMethod, JudgeMode, ReportRow), WinRateCell>,
}

// ===== Errors =====

#[derive(Error, Debug, Clone, PartialEq)]
pub enum JudgeError {
    #[error("{mode:?} judging requires the matching reference kind")]
    ReferenceMismatch { mode: JudgeMode },
    #[error("the {which} story is empty")]
    EmptyStory { which: &'static str },
    #[error("empty reference for category {category:?}")]
    EmptyReference { category: NarrativeCategory },
    #[error("could not parse judge scores for {category:?}: {detail}")]
    JudgeParseFailed {
        category: NarrativeCategory,
        detail: String,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

// ===== Shuffling and re-attribution =====

/// Seeded coin flip deciding which story the judge sees as "A". The same
/// order is reused for all four category calls of the pair.
pub fn shuffle_pair<'a>(
    candidate: &'a str,
    baseline: &'a str,
    seed: u64,
) -> (&'a str, &'a str, PresentedOrder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.gen_bool(0.5) {
        (candidate, baseline, PresentedOrder::CandidateFirst)
    } else {
        (baseline, candidate, PresentedOrder::BaselineFirst)
    }
}

/// Maps parsed (A, B) scores back onto (candidate, baseline).
pub fn re_attribute(score_a: u8, score_b: u8, order: PresentedOrder) -> (u8, u8) {
    match order {
        PresentedOrder::CandidateFirst => (score_a, score_b),
        PresentedOrder::BaselineFirst => (score_b, score_a),
    }
}

// ===== Score parsing =====

fn labeled_score(block: &str, label: &str) -> Result<u8, String> {
    let pos = block
        .find(label)
        .ok_or_else(|| format!("missing {label:?} in score block"))?;
    let rest = &block[pos + label.len()..];
    let line = rest.lines().next().unwrap_or("");
    let digits: String = line
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    if digits.is_empty() {
        return Err(format!("no score after {label:?}"));
    }
    let value: u32 = digits
        .parse()
        .map_err(|_| format!("unreadable score after {label:?}"))?;
    if !(1..=5).contains(&value) {
        return Err(format!("score {value} for {label:?} outside 1..=5"));
    }
    Ok(value as u8)
}

/// Extracts the `<score>` block and reads both labeled 1–5 scores.
pub fn parse_scores(mode: JudgeMode, text: &str) -> Result<(u8, u8), String> {
    let block = extract_block(text, TAG_SCORE).map_err(|e| e.to_string())?;
    let (label_a, label_b) = mode.story_labels();
    let a = labeled_score(&block, label_a)?;
    let b = labeled_score(&block, label_b)?;
    Ok((a, b))
}

// ===== Judging =====

/// What the stories are compared against; must match the judge mode.
#[derive(Debug, Clone, Copy)]
pub enum JudgeReference<'a> {
    /// Author writing summary whose per-category claims anchor faithfulness.
    Claims(&'a WritingSheet),
    /// Ground-truth story text anchoring similarity.
    GroundTruth(&'a str),
}

fn category_reference(
    mode: JudgeMode,
    reference: &JudgeReference<'_>,
    category: NarrativeCategory,
) -> Result<String, JudgeError> {
    match (mode, reference) {
        (JudgeMode::Faithfulness, JudgeReference::Claims(sheet)) => {
            if sheet.entries(category).is_empty() {
                return Err(JudgeError::EmptyReference { category });
            }
            Ok(render_category_claims(sheet, category))
        }
        (JudgeMode::Similarity, JudgeReference::GroundTruth(text)) => {
            if text.trim().is_empty() {
                return Err(JudgeError::EmptyReference { category });
            }
            Ok((*text).to_string())
        }
        _ => Err(JudgeError::ReferenceMismatch { mode }),
    }
}

/// Scores the two presented stories for one category. Retries a malformed
/// response once, then fails.
pub fn judge_category(
    mode: JudgeMode,
    wp: &WritingPrompt,
    reference: &str,
    story_a: &str,
    story_b: &str,
    category: NarrativeCategory,
    backend: &dyn Backend,
) -> Result<(u8, u8), JudgeError> {
    if reference.trim().is_empty() {
        return Err(JudgeError::EmptyReference { category });
    }
    let request = match mode {
        JudgeMode::Faithfulness => {
            prompts::judge_faithfulness_request(wp, category, reference, story_a, story_b)?
        }
        JudgeMode::Similarity => {
            prompts::judge_similarity_request(wp, category, reference, story_a, story_b)?
        }
    };
    let mut detail = String::new();
    for _ in 0..2 {
        let completion = backend.complete(&request)?;
        match parse_scores(mode, &completion.text) {
            Ok(scores) => return Ok(scores),
            Err(e) => detail = e,
        }
    }
    Err(JudgeError::JudgeParseFailed { category, detail })
}

/// Judges one candidate/baseline pair: one seeded shuffle, four category
/// calls sharing that presentation, re-attribution, and totals.
#[allow(clippy::too_many_arguments)]
pub fn judge_pair(
    mode: JudgeMode,
    author_id: &str,
    wp: &WritingPrompt,
    method: GenerationMethod,
    candidate: &str,
    baseline: &str,
    reference: &JudgeReference<'_>,
    seed: u64,
    backend: &dyn Backend,
) -> Result<PairVerdict, JudgeError> {
    if candidate.trim().is_empty() {
        return Err(JudgeError::EmptyStory { which: "candidate" });
    }
    if baseline.trim().is_empty() {
        return Err(JudgeError::EmptyStory { which: "baseline" });
    }

    let (first, second, presented_order) = shuffle_pair(candidate, baseline, seed);
    let mut categories = Vec::with_capacity(NarrativeCategory::ALL.len());
    for category in NarrativeCategory::ALL {
        let reference_text = category_reference(mode, reference, category)?;
        let (score_a, score_b) =
            judge_category(mode, wp, &reference_text, first, second, category, backend)?;
        let (score_candidate, score_baseline) = re_attribute(score_a, score_b, presented_order);
        categories.push(CategoryVerdict::new(category, score_candidate, score_baseline));
    }

    let total_candidate: u32 = categories.iter().map(|c| c.score_candidate as u32).sum();
    let total_baseline: u32 = categories.iter().map(|c| c.score_baseline as u32).sum();
    let overall = match total_candidate.cmp(&total_baseline) {
        std::cmp::Ordering::Greater => PairOutcome::Win,
        std::cmp::Ordering::Less => PairOutcome::Loss,
        std::cmp::Ordering::Equal => PairOutcome::Tie,
    };
    Ok(PairVerdict {
        author_id: author_id.to_string(),
        wp: wp.clone(),
        method,
        mode,
        categories,
        total_candidate,
        total_baseline,
        overall,
        shuffle_seed: seed,
        presented_order,
    })
}

// ===== Aggregation =====

/// Folds verdicts into win-rate cells grouped by (source, method, mode),
/// one row per category plus an Overall row.
pub fn aggregate(verdicts: &[PairVerdict]) -> WinRateReport {
    let mut report = WinRateReport::default();
    for verdict in verdicts {
        let base = (verdict.wp.source, verdict.method, verdict.mode);
        for cv in &verdict.categories {
            let cell = report
                .cells
                .entry((base.0, base.1, base.2, ReportRow::Category(cv.category)))
                .or_default();
            match cv.winner {
                CategoryWinner::Candidate => cell.add(1, 0, 0),
                CategoryWinner::Tie => cell.add(0, 1, 0),
                CategoryWinner::Baseline => cell.add(0, 0, 1),
            }
        }
        let overall = report
            .cells
            .entry((base.0, base.1, base.2, ReportRow::Overall))
            .or_default();
        match verdict.overall {
            PairOutcome::Win => overall.add(1, 0, 0),
            PairOutcome::Tie => overall.add(0, 1, 0),
            PairOutcome::Loss => overall.add(0, 0, 1),
        }
    }
    for cell in report.cells.values_mut() {
        cell.finish();
    }
    report
}

impl WinRateReport {
    /// CSV with one row per cell, Overall rows after the categories.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,method,mode,category,wins,ties,losses,n,win_rate\n");
        for ((source, method, mode, row), cell) in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                source.tag(),
                method.label(),
                mode.label(),
                row.label(),
                cell.wins,
                cell.ties,
                cell.losses,
                cell.n,
                cell.win_rate
            ));
        }
        out
    }

    /// Nested JSON: source → method → mode → row → cell.
    pub fn to_json_tree(&self) -> serde_json::Value {
        let mut tree = serde_json::Map::new();
        for ((source, method, mode, row), cell) in &self.cells {
            let cell_json = serde_json::to_value(cell).expect("cell serializes");
            tree.entry(source.tag())
                .or_insert_with(|| serde_json::Value::Object(Default::default()))
                .as_object_mut()
                .unwrap()
                .entry(method.label())
                .or_insert_with(|| serde_json::Value::Object(Default::default()))
                .as_object_mut()
                .unwrap()
                .entry(mode.label())
                .or_insert_with(|| serde_json::Value::Object(Default::default()))
                .as_object_mut()
                .unwrap()
                .insert(row.label().to_string(), cell_json);
        }
        serde_json::Value::Object(tree)
    }
}
