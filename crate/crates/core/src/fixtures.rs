//! Deterministic fixtures: a bundled two-author demo corpus, a synthetic
//! backend that answers every pipeline request with well-formed output,
//! and a recorder that turns one full pipeline run into replayable mock
//! fixtures (script and map mode).
//!
//! The synthetic backend is a pure function of the request: identical
//! requests always get identical responses, so the recorded fingerprint
//! map is consistent and a re-run replays byte-for-byte. Responses carry
//! no meaning beyond their structure — they exist to exercise every
//! parser, cap, and aggregation path offline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gateway::{
    whitespace_tokens, Backend, ChatRequest, Completion, GatewayError, MockFixture, Usage,
};
use crate::pipeline::{run_all, BackendConfig, PipelineError, RunConfig};
use crate::profiler::render_sheet;
use crate::tagparse::{normalize_text, parse_sheet, NarrativeCategory, SheetKind, WritingSheet};

// ===== Golden sheet block =====

/// A sheet block shaped like a real combined sheet: two Claim-Evidence
/// pairs per category, framed evidence, and trailing story references
/// drawn from {7, 8, 10}. Used as the parser golden and emitted alongside
/// the fixtures for manual inspection.
pub const SAMPLE_SHEET_BLOCK: &str = r#"### Plot
1. **The author structures the story around a humorous and light-hearted approach to conflict resolution.**
   - Evidence: In the story regarding "an adventure to rescue a missing friend by facing fears," the protagonist Pip's journey is filled with comedic elements, such as the realization that the cage door was already unlatched and the exaggerated fear of the vacuum cleaner, humorously referred to as the "Roaring Demon." [8]
2. **The author structures the narrative around personal transformation and empowerment.**
   - Evidence: In the story regarding "a king's deal with the fae for his firstborn," the narrative follows Margaret Rose as she receives an extraordinary education in the Seelie Court, culminating in her return to challenge her father with a corporate takeover bid for the kingdom. [7]

### Creativity
1. **The author blends fantastical premises with mundane, bureaucratic institutions.**
   - Evidence: In the story regarding "a dragon auditing a village's tax records," the dragon files quarterly reports and complains about parchment shortages while hoarding receipts instead of gold. [10]
2. **The author reinterprets prompts by inverting the expected roles of their characters.**
   - Evidence: In the story regarding "a king's deal with the fae for his firstborn," the bargained-away child returns not as a victim but as the court's most feared negotiator. [7]

### Development (Character and Setting)
1. **The author grounds characters through small recurring domestic rituals.**
   - Evidence: In the story regarding "an adventure to rescue a missing friend by facing fears," Pip rehearses the same three-step breathing exercise before each threshold he crosses. [8]
2. **The author builds settings that mirror the protagonist's internal state.**
   - Evidence: In the story regarding "a dragon auditing a village's tax records," the ledger hall grows dimmer and more cluttered as the dragon's patience frays. [10]

### Language Use
1. **The author favors short declarative sentences punctuated by a single sprawling period.**
   - Evidence: In the story regarding "a king's deal with the fae for his firstborn," staccato exchanges in the throne room give way to one long unbroken sentence as the bargain is sealed. [7]
2. **The author threads dry parenthetical asides into otherwise earnest narration.**
   - Evidence: In the story regarding "an adventure to rescue a missing friend by facing fears," the narrator notes that the Roaring Demon "had never actually roared at anyone (it was, after all, unplugged)." [8]"#;

// ===== Demo corpus =====

struct DemoStory {
    timestamp: i64,
    prompt: &'static str,
    text: &'static str,
}

const QUILL_STORIES: [DemoStory; 5] = [
    DemoStory {
        timestamp: 201,
        prompt: "The lighthouse keeper receives a letter addressed to the light itself.",
        text: "The letter arrived salt-stained and certain. Marta read it twice on the gallery, wind snapping the page. Dear Light, it began, thank you for the night you blinked twice. She had no memory of blinking twice. The lamp turned above her, patient as arithmetic, and she decided the light could keep its own correspondence. She left the letter on the lens and climbed down to put the kettle on.",
    },
    DemoStory {
        timestamp: 202,
        prompt: "Every midnight, a tram crosses the city that no map has ever shown.",
        text: "The tram took exact change and inexact passengers. Oskar boarded with a transfer slip from a line that did not exist and nobody minded. The city outside the windows rearranged itself politely, cathedrals trading corners with laundromats. At the third stop the conductor announced nothing at all, twice. Oskar rode to the end, which was the beginning, and stepped off lighter by one regret. The fare had been fair.",
    },
    DemoStory {
        timestamp: 203,
        prompt: "A cartographer is hired to map a house that is bigger on the inside.",
        text: "Ines charged by the room and regretted it immediately. The parlor held a second parlor, folded like a letter. Her pencil wore down to a civility. On the fourth day she mapped the staircase that only went sideways and billed it as a corridor, for morale. The owners wanted the house smaller on paper. Ines drew the truth in the margins, small declarative rooms, and mailed them the margins.",
    },
    DemoStory {
        timestamp: 204,
        prompt: "The town beekeeper swears her bees have started spelling words in the air.",
        text: "The first word was PATIENCE, which everyone agreed was rich, coming from bees. Tilda logged each spelling in the hive journal with the date and the weather. The council wanted honey quotas. The bees wanted, apparently, TUESDAY. When the swarm finally spelled her father's name over the clover field she closed the journal, sat down in the grass, and let the hum say the rest of it for her.",
    },
    DemoStory {
        timestamp: 205,
        prompt: "A clockmaker discovers one customer's clocks always run backwards.",
        text: "Mr. Abey brought in his third backwards clock on a Monday. Ruth opened the case and found the gears immaculate and unrepentant. Time ran toward Mr. Abey like a tide going home. She asked what he kept losing and he said, kindly, nothing anymore. Ruth oiled the escapement, set the hands to yesterday, and charged him for the silence. He paid in coins that looked freshly minted and very old.",
    },
];

const LUMEN_STORIES: [DemoStory; 5] = [
    DemoStory {
        timestamp: 301,
        prompt: "Write the reunion scene where the navigator finally returns the captain's compass.",
        text: "The compass had stopped pointing north the day Juniper left the ship, which the crew called an omen and Juniper called guilt. On the dock she pressed it into Captain Wren's palm without a speech. It spun once, considered her, and settled on the captain's heartbeat. Somewhere a gull filed a formal complaint. Neither of them let go of the compass, or the moment, longer than strictly necessary.",
    },
    DemoStory {
        timestamp: 302,
        prompt: "The archive under the opera house keeps every song that was never performed.",
        text: "Beneath the stage, the unsung archive hummed to itself in locked drawers. Mireille catalogued silences for a living and was good at it, which worried her. Tonight drawer ninety-nine stood open, a duet missing. Upstairs, two retired rivals shared a dressing room mirror and, without meaning to, the first bar. The archive exhaled. Mireille wrote performed at last in the ledger and underlined nothing, out of respect.",
    },
    DemoStory {
        timestamp: 303,
        prompt: "A healer and a knight argue over who saved whom at the battle of the glass bridge.",
        text: "The bridge had shattered politely, one pane at a time, and they still disagreed about the order of the falling. You caught my sword arm, said Sir Odile, so I caught the ledge. You caught the ledge, said Bren, because I dropped the poultice and you are dramatic. In the infirmary they split the last clean bandage and the argument evenly. The moral, they agreed, was better bridges.",
    },
    DemoStory {
        timestamp: 304,
        prompt: "The ship's cook can season any dish with a memory, for a price.",
        text: "Cook Salli kept the spice rack alphabetized by ache. Homesickness went in the stew on Thursdays, first frost into the tea. The price was always the same, you had to tell her the memory out loud while she stirred. The bosun paid with his sister's laugh and ate two helpings. Salli never seasoned her own plate. Hers was the kitchen itself, warm, loud, and impossible to leave.",
    },
    DemoStory {
        timestamp: 305,
        prompt: "Two rival familiars are forced to share a windowsill during the wizards' truce.",
        text: "The truce specified the windowsill but not the sunbeam, which was the first dispute. Asha, raven, claimed the warm half by treaty precedent. Minou, cat, cited possession and sat on the treaty. By the third bell they had pooled their grievances into one joint complaint against pigeons generally. The wizards below argued on. Above them the familiars divided the sunbeam into equal, overlapping halves and slept.",
    },
];

/// The bundled demo dataset: two authors, five stories each (three
/// profiling and two generation targets at the default split ratio), one
/// Reddit-style author and one AO3-style author with story metadata.
pub fn demo_dataset_jsonl() -> String {
    let mut out = String::new();
    for story in &QUILL_STORIES {
        let record = serde_json::json!({
            "author_id": "quill-marsh",
            "source": "reddit",
            "timestamp": story.timestamp,
            "prompt": story.prompt,
            "text": story.text,
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    for story in &LUMEN_STORIES {
        let record = serde_json::json!({
            "author_id": "lumen-hale",
            "source": "ao3",
            "timestamp": story.timestamp,
            "prompt": story.prompt,
            "text": story.text,
            "metadata": {
                "fandom": "original work",
                "rating": "general",
                "warnings": "none",
                "relationships": "crew & crew",
            },
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

// ===== Seeded text =====

const WORD_BANK: [&str; 40] = [
    "amber", "anchor", "ash", "bell", "breath", "candle", "cedar", "chalk", "cinder", "cloud",
    "copper", "dusk", "ember", "fern", "flint", "frost", "garnet", "gull", "harbor", "hollow",
    "iron", "ivy", "keel", "lantern", "larch", "meadow", "moth", "north", "oak", "opal",
    "quiet", "reed", "river", "salt", "slate", "sparrow", "thistle", "tide", "wick", "winter",
];

fn seed_of(request: &ChatRequest) -> u64 {
    let fingerprint = request.fingerprint();
    u64::from_str_radix(&fingerprint[..16], 16).unwrap_or(0)
}

fn seeded_words(seed: u64, salt: u64, count: usize) -> Vec<&'static str> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..count)
        .map(|_| WORD_BANK[rng.gen_range(0..WORD_BANK.len())])
        .collect()
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn seeded_phrase(seed: u64, salt: u64, words: usize) -> String {
    seeded_words(seed, salt, words).join(" ")
}

/// A passage of exactly `target_words` whitespace words, assembled from
/// seeded sentences of 9-13 words.
fn passage(seed: u64, target_words: usize) -> String {
    if target_words == 0 {
        return "Silence.".to_string();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<String> = Vec::with_capacity(target_words);
    let mut sentence_position = 0usize;
    let mut sentence_length = rng.gen_range(9..=13);
    while words.len() < target_words {
        let word = WORD_BANK[rng.gen_range(0..WORD_BANK.len())];
        let is_last = words.len() + 1 == target_words;
        let mut token = if sentence_position == 0 {
            capitalize(word)
        } else {
            word.to_string()
        };
        sentence_position += 1;
        if sentence_position == sentence_length || is_last {
            token.push('.');
            sentence_position = 0;
            sentence_length = rng.gen_range(9..=13);
        }
        words.push(token);
    }
    words.join(" ")
}

// ===== Request text helpers =====

fn slice_between<'t>(text: &'t str, start: &str, end: Option<&str>) -> Option<&'t str> {
    let begin = text.rfind(start)? + start.len();
    let rest = &text[begin..];
    match end {
        Some(end) => rest.find(end).map(|idx| &rest[..idx]),
        None => Some(rest),
    }
}

/// First few words of a writing prompt, lowercased and stripped to
/// alphanumerics, for use inside evidence framing quotes.
fn descriptor_of(wp: &str) -> String {
    let words: Vec<String> = wp
        .split_whitespace()
        .take(4)
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        "the writing prompt".to_string()
    } else {
        words.join(" ")
    }
}

fn requested_length(user: &str) -> Option<usize> {
    let tail = slice_between(user, "The story should be ", Some(" words long"))?;
    tail.trim().parse().ok()
}

// ===== Structured response builders =====

fn constant_claim(category: NarrativeCategory) -> &'static str {
    match category {
        NarrativeCategory::Plot => {
            "The author resolves conflict through quiet bargains rather than confrontation."
        }
        NarrativeCategory::Creativity => {
            "The author reframes each premise through an unexpected mundane institution."
        }
        NarrativeCategory::Development => {
            "The author grounds characters in small recurring domestic rituals."
        }
        NarrativeCategory::LanguageUse => {
            "The author favors short declarative sentences with one dry aside."
        }
    }
}

fn sheet_category(
    out: &mut String,
    category: NarrativeCategory,
    descriptor: &str,
    seed: u64,
    salt: u64,
) {
    out.push_str(&format!("### {}\n", category.prompt_label()));
    out.push_str(&format!("1. **{}**\n", constant_claim(category)));
    out.push_str(&format!(
        "   - Evidence: In the story regarding \"{descriptor},\" the narration lingers on {}.\n",
        seeded_phrase(seed, salt, 5)
    ));
    out.push_str(&format!(
        "2. **The author turns {} into a recurring motif here.**\n",
        seeded_phrase(seed, salt.wrapping_add(1), 2)
    ));
    out.push_str(&format!(
        "   - Evidence: In the story regarding \"{descriptor},\" the scene returns to {}.\n",
        seeded_phrase(seed, salt.wrapping_add(2), 5)
    ));
    out.push('\n');
}

fn intermediate_sheet_response(request: &ChatRequest) -> String {
    let wp = slice_between(&request.user, "Writing Prompt: ", Some("\n\nAuthor-Written Story:"))
        .unwrap_or("a story");
    let descriptor = descriptor_of(wp);
    let seed = seed_of(request);
    let mut block = String::new();
    for (index, category) in NarrativeCategory::ALL.into_iter().enumerate() {
        sheet_category(&mut block, category, &descriptor, seed, index as u64 * 10);
    }
    format!(
        "<thinking>\nContrasting the author's telling with the base telling of \"{descriptor}.\"\n</thinking>\n\n<writing_style>\n{}</writing_style>",
        block
    )
}

/// Merges the previous and current sheets the way the prompt asks: claims
/// deduplicated by normalized text, previous entries (and their story
/// references) first, at most ten claims per category.
fn combine_response(request: &ChatRequest) -> String {
    let previous = slice_between(
        &request.user,
        "Previous Combined Author Writing Sheet:\n",
        Some("\n\nCurrent Author Writing Sheet:\n"),
    )
    .unwrap_or("");
    let current = slice_between(&request.user, "\n\nCurrent Author Writing Sheet:\n", None)
        .unwrap_or("");
    let previous = parse_sheet(previous, SheetKind::Iterative)
        .map(|p| p.sheet)
        .unwrap_or_else(|_| WritingSheet::new(SheetKind::Iterative));
    let current = parse_sheet(current, SheetKind::Iterative)
        .map(|p| p.sheet)
        .unwrap_or_else(|_| WritingSheet::new(SheetKind::Iterative));

    let mut merged = WritingSheet::new(SheetKind::Iterative);
    for category in NarrativeCategory::ALL {
        let mut seen = std::collections::BTreeSet::new();
        let mut kept = Vec::new();
        for entry in previous.entries(category).iter().chain(current.entries(category)) {
            if seen.insert(normalize_text(&entry.claim)) {
                kept.push(entry.clone());
            }
        }
        kept.truncate(10);
        *merged.entries_mut(category) = kept;
    }
    format!(
        "<thinking>\nGrouped equivalent claims and kept the distinct ones.\n</thinking>\n<combined_author_sheet>\n{}\n</combined_author_sheet>",
        render_sheet(&merged)
    )
}

fn summary_response(request: &ChatRequest) -> String {
    let descriptors: Vec<String> = request
        .user
        .lines()
        .filter_map(|line| line.strip_prefix("Writing Prompt: "))
        .map(descriptor_of)
        .collect();
    let fallback = "the author history".to_string();
    let seed = seed_of(request);
    let mut block = String::new();
    for (index, category) in NarrativeCategory::ALL.into_iter().enumerate() {
        let salt = 100 + index as u64 * 10;
        block.push_str(&format!("### {}\n", category.prompt_label()));
        for claim_index in 0..2 {
            let descriptor = descriptors
                .get((index + claim_index) % descriptors.len().max(1))
                .unwrap_or(&fallback);
            block.push_str(&format!(
                "{}. **Across prompts the author leans on {} in {}.**\n",
                claim_index + 1,
                seeded_phrase(seed, salt + claim_index as u64, 2),
                category.prompt_label().to_lowercase(),
            ));
            block.push_str(&format!(
                "   - Evidence: In the story regarding \"{descriptor},\" the telling favors {}.\n",
                seeded_phrase(seed, salt + 5 + claim_index as u64, 4)
            ));
        }
        block.push('\n');
    }
    format!(
        "<thinking>\nLooking across the whole history for repeated tendencies.\n</thinking>\n\n<writing_style>\n{}</writing_style>",
        block.trim_end()
    )
}

fn persona_lead(category: NarrativeCategory) -> &'static str {
    match category {
        NarrativeCategory::Plot => "You build plots as a chain of quiet bargains, letting",
        NarrativeCategory::Creativity => "You reimagine every premise sideways, folding",
        NarrativeCategory::Development => "You develop characters through small rituals, keeping",
        NarrativeCategory::LanguageUse => "You write in short declarative beats, saving",
    }
}

fn persona_response(request: &ChatRequest) -> String {
    let seed = seed_of(request);
    let paragraphs: Vec<String> = NarrativeCategory::ALL
        .into_iter()
        .enumerate()
        .map(|(index, category)| {
            format!(
                "{} {} close at hand.",
                persona_lead(category),
                seeded_phrase(seed, 200 + index as u64, 4)
            )
        })
        .collect();
    format!(
        "<thinking>\nFolding the sheet's tendencies into a second-person persona.\n</thinking>\n\n<persona_prompt>\n{}\n</persona_prompt>",
        paragraphs.join("\n\n")
    )
}

fn rules_response(request: &ChatRequest) -> String {
    let seed = seed_of(request);
    let mut block = String::new();
    for (index, category) in NarrativeCategory::ALL.into_iter().enumerate() {
        let salt = 300 + index as u64 * 10;
        block.push_str(&format!("- **{}**:\n", category.prompt_label()));
        block.push_str(&format!(
            "  - Open with {} and return to it at the close.\n",
            seeded_phrase(seed, salt, 2)
        ));
        block.push_str(&format!(
            "  - Keep {} in view whenever the scene slows.\n",
            seeded_phrase(seed, salt + 1, 3)
        ));
    }
    format!(
        "<thinking>\nTurning the style signals into direct instructions.\n</thinking>\n\n<story_rules>\n{}</story_rules>",
        block
    )
}

fn judge_response(request: &ChatRequest, label_a: &str, label_b: &str) -> String {
    let seed = seed_of(request);
    let score_a = 1 + (seed % 5) as u8;
    let score_b = 1 + ((seed >> 8) % 5) as u8;
    format!(
        "<thinking>\nWeighing both tellings against the reference material.\n</thinking>\n<score>\n{label_a}: {score_a}\n{label_b}: {score_b}\n</score>"
    )
}

fn story_response(request: &ChatRequest) -> String {
    let length = requested_length(&request.user).unwrap_or(60);
    passage(seed_of(request), length)
}

// ===== Synthetic backend =====

/// Pure, stateless backend that classifies each request by its system
/// prompt and answers with structurally valid output. Used to record the
/// bundled mock fixtures and available to tests that need plausible
/// end-to-end traffic without canned files.
pub struct SynthesizingBackend;

impl SynthesizingBackend {
    fn synthesize(&self, request: &ChatRequest) -> String {
        let system = request.system.as_str();
        if system.contains("by contrasting an author-written story with a base story") {
            intermediate_sheet_response(request)
        } else if system.contains("synthesizing **Author Writing Sheets**") {
            combine_response(request)
        } else if system.contains("examining multiple stories written in response") {
            summary_response(request)
        } else if system.contains("persona creator") {
            persona_response(request)
        } else if system.contains("tailored to a specific Writing Prompt")
            || system.contains("skilled rule generator specializing in storytelling")
            || system.contains("few-shot demonstrations in the chat history")
        {
            rules_response(request)
        } else if system.contains("narrative storytelling analysis") {
            judge_response(request, "Story A", "Story B")
        } else if system.contains("creative writing analysis") {
            judge_response(request, "Assistant A", "Assistant B")
        } else if system.contains("crafting engaging and imaginative writing prompts") {
            format!("A stranger arrives carrying {}.", seeded_phrase(seed_of(request), 400, 3))
        } else {
            // Role-play and average-author story requests both want prose.
            story_response(request)
        }
    }
}

impl Backend for SynthesizingBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let text = self.synthesize(request);
        let prompt_tokens = whitespace_tokens(&request.system)
            + request
                .few_shot
                .iter()
                .map(|(u, a)| whitespace_tokens(u) + whitespace_tokens(a))
                .sum::<u64>()
            + whitespace_tokens(&request.user);
        Ok(Completion {
            usage: Usage {
                prompt_tokens,
                completion_tokens: whitespace_tokens(&text),
            },
            text,
            backend_id: self.id().to_string(),
        })
    }

    fn id(&self) -> &str {
        "synthetic"
    }
}

/// Wraps a backend and logs every (fingerprint, response) pair served.
struct RecordingBackend<B: Backend> {
    inner: B,
    log: Mutex<Vec<(String, String)>>,
}

impl<B: Backend> RecordingBackend<B> {
    fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    fn into_log(self) -> Vec<(String, String)> {
        self.log.into_inner().unwrap()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let completion = self.inner.complete(request)?;
        self.log
            .lock()
            .unwrap()
            .push((request.fingerprint(), completion.text.clone()));
        Ok(completion)
    }

    fn id(&self) -> &str {
        self.inner.id()
    }
}

// ===== Fixture emission =====

/// Paths and counts produced by [`emit_fixture`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureBundle {
    pub dataset_path: PathBuf,
    pub script_path: PathBuf,
    pub map_path: PathBuf,
    pub config_path: PathBuf,
    pub golden_path: PathBuf,
    pub run_dir: PathBuf,
    /// Requests served while recording (the script fixture's length).
    pub calls: usize,
    /// Distinct request fingerprints (the map fixture's size).
    pub distinct_fingerprints: usize,
}

/// Emits the demo dataset, records one full pipeline run against the
/// synthetic backend, and writes both mock fixtures plus a ready-to-run
/// config. Emission is deterministic: running it twice (anywhere) yields
/// byte-identical dataset, fixture, and golden files.
pub fn emit_fixture(dir: &Path) -> Result<FixtureBundle, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
        path: dir.display().to_string(),
        detail: e.to_string(),
    })?;
    let write = |path: &Path, body: &str| -> Result<(), PipelineError> {
        fs::write(path, body).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    };

    let dataset_path = dir.join("dataset.jsonl");
    write(&dataset_path, &demo_dataset_jsonl())?;

    // Record against a fresh run directory; stale manifests would skip
    // stages and leave holes in the recording.
    let run_dir = dir.join("run");
    if run_dir.exists() {
        fs::remove_dir_all(&run_dir).map_err(|e| PipelineError::Io {
            path: run_dir.display().to_string(),
            detail: e.to_string(),
        })?;
    }
    let record_config = RunConfig {
        dataset_path: dataset_path.clone(),
        output_dir: run_dir.clone(),
        backend: BackendConfig::Mock {
            fixture: dir.join("script.json"),
        },
        ..RunConfig::default()
    };
    let recorder = RecordingBackend::new(SynthesizingBackend);
    run_all(&record_config, &recorder)?;
    let log = recorder.into_log();

    let script_path = dir.join("script.json");
    let map_path = dir.join("map.json");
    let script = MockFixture::Script(log.iter().map(|(_, text)| text.clone()).collect());
    let mut responses = BTreeMap::new();
    for (fingerprint, text) in &log {
        let previous = responses.insert(fingerprint.clone(), text.clone());
        debug_assert!(
            previous.is_none_or(|p| p == *text),
            "one fingerprint recorded two different responses"
        );
    }
    let distinct_fingerprints = responses.len();
    let map = MockFixture::Map(responses);
    script.save(&script_path).map_err(|e| PipelineError::Io {
        path: script_path.display().to_string(),
        detail: e.to_string(),
    })?;
    map.save(&map_path).map_err(|e| PipelineError::Io {
        path: map_path.display().to_string(),
        detail: e.to_string(),
    })?;

    // Relative paths so the config works from the fixture directory.
    let config_path = dir.join("config.json");
    let portable = RunConfig {
        dataset_path: PathBuf::from("dataset.jsonl"),
        output_dir: PathBuf::from("out"),
        backend: BackendConfig::Mock {
            fixture: PathBuf::from("script.json"),
        },
        ..RunConfig::default()
    };
    let mut config_body =
        serde_json::to_string_pretty(&portable).map_err(|e| PipelineError::Io {
            path: config_path.display().to_string(),
            detail: e.to_string(),
        })?;
    config_body.push('\n');
    write(&config_path, &config_body)?;

    let goldens = dir.join("goldens");
    fs::create_dir_all(&goldens).map_err(|e| PipelineError::Io {
        path: goldens.display().to_string(),
        detail: e.to_string(),
    })?;
    let golden_path = goldens.join("sheet_block.txt");
    write(&golden_path, &format!("{SAMPLE_SHEET_BLOCK}\n"))?;

    Ok(FixtureBundle {
        dataset_path,
        script_path,
        map_path,
        config_path,
        golden_path,
        run_dir,
        calls: log.len(),
        distinct_fingerprints,
    })
}
