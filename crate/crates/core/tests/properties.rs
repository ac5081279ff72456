//! Property-based tests for the invariants the rest of the system leans
//! on: sheet rendering/parsing must be lossless, the split must never
//! drop a story, win rates must behave like rounded percentages, and
//! text metrics must stay inside their documented ranges.

use proptest::prelude::*;

use fabula::corpus::{chronological_split, SourceKind, Story, WritingPrompt};
use fabula::gateway::{ChatRequest, RoleTag};
use fabula::judge::percent_half_up;
use fabula::metrics::{bleu, rouge_l};
use fabula::profiler::render_sheet;
use fabula::tagparse::{
    extract_block, normalize_text, parse_sheet, ClaimEvidence, NarrativeCategory, SheetKind,
    WritingSheet,
};

// ===== Strategies =====

fn word() -> impl Strategy<Value = String> {
    "[a-z]{2,10}"
}

fn phrase(max_words: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..=max_words).prop_map(|words| words.join(" "))
}

/// A claim as a model would write it: capitalized sentence, no markdown
/// of its own.
fn claim() -> impl Strategy<Value = String> {
    phrase(6).prop_map(|p| {
        let mut chars = p.chars();
        let head = chars.next().unwrap().to_uppercase().to_string();
        format!("{head}{}.", chars.as_str())
    })
}

/// Evidence text that cannot be mistaken for a framing clause or a
/// trailing story ref.
fn evidence() -> impl Strategy<Value = String> {
    phrase(8).prop_map(|p| format!("the {p}"))
}

fn entry() -> impl Strategy<Value = ClaimEvidence> {
    (
        claim(),
        evidence(),
        prop::option::of(phrase(4)),
        prop::option::of(1u32..=50),
    )
        .prop_map(|(claim, evidence, framing, story_ref)| {
            let mut entry = ClaimEvidence::new(claim, evidence);
            if let Some(framing) = framing {
                entry = entry.with_framing(framing);
            }
            if let Some(story_ref) = story_ref {
                entry = entry.with_ref(story_ref);
            }
            entry
        })
}

fn sheet() -> impl Strategy<Value = WritingSheet> {
    prop::collection::vec(prop::collection::vec(entry(), 0..=4), 4).prop_map(|buckets| {
        let mut sheet = WritingSheet::new(SheetKind::Iterative);
        for (category, entries) in NarrativeCategory::ALL.into_iter().zip(buckets) {
            for entry in entries {
                sheet.push(category, entry);
            }
        }
        sheet
    })
}

fn stories(n: usize) -> Vec<Story> {
    (1..=n)
        .map(|i| Story {
            author_id: "author-1".into(),
            prompt: WritingPrompt {
                text: format!("prompt {i}"),
                source: SourceKind::Reddit,
            },
            text: format!("story {i}"),
            timestamp: i as u32,
            word_count: 2,
            metadata: None,
            recorded_at: None,
        })
        .collect()
}

// ===== Properties =====

proptest! {
    /// Rendering a sheet and parsing it back loses no claim, evidence,
    /// framing, or story ref, in any category, for any sheet shape.
    #[test]
    fn sheet_render_parse_round_trip(sheet in sheet()) {
        let rendered = render_sheet(&sheet);
        let parsed = parse_sheet(&rendered, SheetKind::Iterative).unwrap();
        prop_assert_eq!(parsed.sheet, sheet);
        prop_assert!(parsed.warnings.is_empty(), "warnings: {:?}", parsed.warnings);
    }

    /// The chronological split never invents, drops, or reorders stories,
    /// always leaves both sides non-empty, and puts the cut exactly at
    /// `max(1, floor(ratio * n))` clamped to keep a held-out story.
    #[test]
    fn split_is_lossless_and_clamped(n in 2usize..=120, ratio in 0.01f64..0.99) {
        let input = stories(n);
        let (profiling, generation) = chronological_split(input.clone(), ratio).unwrap();
        prop_assert!(!profiling.is_empty());
        prop_assert!(!generation.is_empty());

        let mut rejoined = profiling.clone();
        rejoined.extend(generation);
        prop_assert_eq!(rejoined, input);

        let expected_cut = ((ratio * n as f64).floor() as usize).max(1).min(n - 1);
        prop_assert_eq!(profiling.len(), expected_cut);
    }

    /// Win-rate percentages behave like round-half-up integer percentages:
    /// bounded, monotone in wins, within one of the exact ratio, and
    /// complementary rates sum to 100 (101 when both sides round up a
    /// half).
    #[test]
    fn win_rate_percentage_laws(wins in 0u32..=10_000, extra in 0u32..=10_000) {
        let n = wins + extra;
        prop_assume!(n > 0);
        let rate = percent_half_up(wins, n);
        prop_assert!(rate <= 100);

        let exact = 100.0 * wins as f64 / n as f64;
        prop_assert!((rate as f64 - exact).abs() <= 0.5 + 1e-9);

        if wins < n {
            prop_assert!(percent_half_up(wins + 1, n) >= rate);
        }

        let complement = percent_half_up(n - wins, n);
        prop_assert!((100..=101).contains(&(rate + complement)));

        prop_assert_eq!(percent_half_up(0, n), 0);
        prop_assert_eq!(percent_half_up(n, n), 100);
    }

    /// BLEU and ROUGE-L stay inside [0, 1]; identity scores 1; ROUGE-L F1
    /// is symmetric and sits between precision and recall.
    #[test]
    fn text_metrics_stay_bounded(a in phrase(12), b in phrase(12)) {
        let score = bleu(&a, &b);
        prop_assert!((0.0..=1.0).contains(&score));
        prop_assert!((bleu(&a, &a) - 1.0).abs() < 1e-12);

        let forward = rouge_l(&a, &b);
        for value in [forward.precision, forward.recall, forward.f1] {
            prop_assert!((0.0..=1.0).contains(&value));
        }
        let backward = rouge_l(&b, &a);
        prop_assert!((forward.f1 - backward.f1).abs() < 1e-12);
        if forward.precision > 0.0 && forward.recall > 0.0 {
            let lo = forward.precision.min(forward.recall);
            let hi = forward.precision.max(forward.recall);
            prop_assert!(forward.f1 >= lo - 1e-12);
            prop_assert!(forward.f1 <= hi + 1e-12);
        }
    }

    /// Tag extraction returns the last complete block, so a draft block
    /// before the final answer never leaks through.
    #[test]
    fn extract_block_takes_last(draft in phrase(8), answer in phrase(8), noise in phrase(4)) {
        let text = format!("<score>\n{draft}\n</score>\n{noise}\n<score>\n{answer}\n</score>");
        prop_assert_eq!(extract_block(&text, "score").unwrap(), answer);
    }

    /// Normalization is idempotent and ignores surrounding whitespace, so
    /// claim deduplication cannot depend on how a claim was typed.
    #[test]
    fn normalize_text_is_idempotent(text in "\\PC{0,60}") {
        let once = normalize_text(&text);
        prop_assert_eq!(normalize_text(&once), once.clone());
        prop_assert_eq!(normalize_text(&format!("  {text} \t ")), once);
    }

    /// Request fingerprints are stable for identical requests and change
    /// whenever the user prompt, the system prompt, or a few-shot turn
    /// boundary changes.
    #[test]
    fn fingerprints_track_request_content(
        system in phrase(6),
        user in phrase(6),
        left in word(),
        right in word(),
    ) {
        let base = ChatRequest::new(RoleTag::Avg, &system, &user).unwrap();
        let same = ChatRequest::new(RoleTag::Avg, &system, &user).unwrap();
        prop_assert_eq!(base.fingerprint(), same.fingerprint());

        let other_user = ChatRequest::new(RoleTag::Avg, &system, format!("{user} x")).unwrap();
        prop_assert_ne!(base.fingerprint(), other_user.fingerprint());

        // Moving a character across a few-shot turn boundary must change
        // the fingerprint even though the concatenated bytes are equal.
        let shifted_a = ChatRequest::new(RoleTag::Avg, &system, &user)
            .unwrap()
            .with_few_shot(vec![(format!("{left}x"), right.clone())]);
        let shifted_b = ChatRequest::new(RoleTag::Avg, &system, &user)
            .unwrap()
            .with_few_shot(vec![(left.clone(), format!("x{right}"))]);
        prop_assert_ne!(shifted_a.fingerprint(), shifted_b.fingerprint());
    }
}
