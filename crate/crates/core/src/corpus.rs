//! Dataset model: stories grouped per author and split chronologically.
//!
//! A dataset is a JSONL file with one story per line:
//!
//! ```json
//! {"author_id": "a1", "source": "reddit", "timestamp": 3,
//!  "prompt": "...", "text": "...", "metadata": {"fandom": "..."}}
//! ```
//!
//! Loading groups records by author, orders them by the raw timestamp,
//! renumbers them 1..n, and splits each author's history into an earlier
//! *profiling* segment and a later held-out *generation* segment.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Backend, GatewayError};

/// Default fraction of an author's history used for profiling.
pub const DEFAULT_SPLIT_RATIO: f64 = 0.7;

/// Story length band (whitespace words) outside which validation warns.
pub const MIN_STORY_WORDS: usize = 500;
pub const MAX_STORY_WORDS: usize = 1500;

/// Where a story corpus came from. The source selects the prompt templates
/// used for average-author generation and role-play instructions, and
/// decides whether stories must carry metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Reddit,
    Ao3,
    Storium,
    NMag,
    NYork,
}

impl SourceKind {
    pub const ALL: [SourceKind; 5] = [
        SourceKind::Reddit,
        SourceKind::Ao3,
        SourceKind::Storium,
        SourceKind::NMag,
        SourceKind::NYork,
    ];

    /// Tag used in dataset files and report columns.
    pub fn tag(self) -> &'static str {
        match self {
            SourceKind::Reddit => "reddit",
            SourceKind::Ao3 => "ao3",
            SourceKind::Storium => "storium",
            SourceKind::NMag => "nmag",
            SourceKind::NYork => "nyork",
        }
    }

    pub fn parse_tag(tag: &str) -> Option<SourceKind> {
        SourceKind::ALL.into_iter().find(|s| s.tag() == tag)
    }

    /// Key of this source's average-author prompt template.
    pub fn avg_prompt_key(self) -> &'static str {
        match self {
            SourceKind::Reddit => "avg:reddit",
            SourceKind::Ao3 => "avg:ao3",
            SourceKind::Storium => "avg:storium",
            SourceKind::NMag => "avg:nmag",
            SourceKind::NYork => "avg:nyork",
        }
    }

    /// Key of this source's role-play system instruction for story
    /// generation.
    pub fn system_instruction_key(self) -> &'static str {
        match self {
            SourceKind::Reddit => "roleplay:reddit",
            SourceKind::Ao3 => "roleplay:ao3",
            SourceKind::Storium => "roleplay:storium",
            SourceKind::NMag => "roleplay:nmag",
            SourceKind::NYork => "roleplay:nyork",
        }
    }

    /// Whether stories from this source must carry a metadata map
    /// (fandom, rating, warnings, relationships).
    pub fn requires_metadata(self) -> bool {
        matches!(self, SourceKind::Ao3)
    }
}

/// A writing prompt, tied to the source whose templates interpret it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WritingPrompt {
    pub text: String,
    pub source: SourceKind,
}

/// One author-written story. `timestamp` is the 1-based position within the
/// author's chronologically ordered history; the raw value from the dataset
/// is kept only as an opaque string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Story {
    pub author_id: String,
    pub prompt: WritingPrompt,
    pub text: String,
    pub timestamp: u32,
    pub word_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_at: Option<String>,
}

/// An author's split history: earlier stories profile the author, later
/// stories are held out as generation targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorProfile {
    pub author_id: String,
    pub source: SourceKind,
    pub profiling: Vec<Story>,
    pub generation: Vec<Story>,
}

impl AuthorProfile {
    pub fn story_count(&self) -> usize {
        self.profiling.len() + self.generation.len()
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: unknown source tag {tag:?}")]
    UnknownSource { line: usize, tag: String },
    #[error("author {author_id}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { author_id: String, timestamp: i64 },
    #[error("author {author_id}: records mix source tags {first} and {second}")]
    MixedSources {
        author_id: String,
        first: String,
        second: String,
    },
    #[error("author {author_id}: needs at least 2 stories to split, found {count}")]
    InsufficientStories { author_id: String, count: usize },
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("story text is empty")]
    EmptyInput,
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Deserialize)]
struct RawRecord {
    author_id: String,
    source: String,
    timestamp: i64,
    prompt: String,
    text: String,
    #[serde(default)]
    metadata: Option<BTreeMap<String, String>>,
}

/// Whitespace word count; the convention every length in the pipeline uses.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Loads a JSONL dataset and splits every author 70/30 (by time).
pub fn load_dataset(path: &Path) -> Result<Vec<AuthorProfile>, CorpusError> {
    load_dataset_with_ratio(path, DEFAULT_SPLIT_RATIO)
}

/// Loads a JSONL dataset, splitting each author at the given profiling
/// fraction. Authors are returned in ascending id order.
pub fn load_dataset_with_ratio(
    path: &Path,
    ratio: f64,
) -> Result<Vec<AuthorProfile>, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;

    // author -> (source, [(raw timestamp, story)])
    let mut by_author: BTreeMap<String, (SourceKind, Vec<(i64, Story)>)> = BTreeMap::new();

    for (index, line) in raw.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let source =
            SourceKind::parse_tag(&record.source).ok_or_else(|| CorpusError::UnknownSource {
                line: line_no,
                tag: record.source.clone(),
            })?;

        let story = Story {
            author_id: record.author_id.clone(),
            prompt: WritingPrompt {
                text: record.prompt,
                source,
            },
            word_count: count_words(&record.text),
            text: record.text,
            timestamp: 0, // assigned after sorting
            metadata: record.metadata,
            recorded_at: Some(record.timestamp.to_string()),
        };

        let entry = by_author
            .entry(record.author_id.clone())
            .or_insert_with(|| (source, Vec::new()));
        if entry.0 != source {
            return Err(CorpusError::MixedSources {
                author_id: record.author_id,
                first: entry.0.tag().into(),
                second: source.tag().into(),
            });
        }
        if entry.1.iter().any(|(ts, _)| *ts == record.timestamp) {
            return Err(CorpusError::DuplicateTimestamp {
                author_id: record.author_id,
                timestamp: record.timestamp,
            });
        }
        entry.1.push((record.timestamp, story));
    }

    let mut profiles = Vec::with_capacity(by_author.len());
    for (author_id, (source, mut stories)) in by_author {
        stories.sort_by_key(|(ts, _)| *ts);
        let ordered: Vec<Story> = stories
            .into_iter()
            .enumerate()
            .map(|(i, (_, mut story))| {
                story.timestamp = (i + 1) as u32;
                story
            })
            .collect();
        let (profiling, generation) = chronological_split(ordered, ratio)?;
        profiles.push(AuthorProfile {
            author_id,
            source,
            profiling,
            generation,
        });
    }
    Ok(profiles)
}

/// Splits a timestamp-ordered story list into (profiling, generation).
///
/// The profiling segment takes `max(1, floor(ratio * n))` stories, adjusted
/// down if needed so at least one generation story remains. Fails for
/// fewer than two stories — there would be nothing to hold out.
pub fn chronological_split(
    stories: Vec<Story>,
    ratio: f64,
) -> Result<(Vec<Story>, Vec<Story>), CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    let n = stories.len();
    if n < 2 {
        return Err(CorpusError::InsufficientStories {
            author_id: stories
                .first()
                .map(|s| s.author_id.clone())
                .unwrap_or_default(),
            count: n,
        });
    }
    debug_assert!(
        stories.windows(2).all(|w| w[0].timestamp < w[1].timestamp),
        "stories must be ordered by timestamp before splitting"
    );
    let mut cut = ((ratio * n as f64).floor() as usize).max(1);
    if cut >= n {
        cut = n - 1;
    }
    let mut profiling = stories;
    let generation = profiling.split_off(cut);
    Ok((profiling, generation))
}

/// Advisory findings from [`validate_story`]. Violations never block the
/// pipeline; they feed the ingest report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum Violation {
    /// Below the expected length band.
    TooShort { words: usize },
    /// Above the expected length band.
    TooLong { words: usize },
    /// Source requires a metadata map but the story has none.
    MissingMetadata,
}

/// Checks a story against the corpus conventions (length band 500..=1500
/// words; metadata present where the source requires it).
pub fn validate_story(story: &Story) -> Vec<Violation> {
    let mut violations = Vec::new();
    if story.word_count < MIN_STORY_WORDS {
        violations.push(Violation::TooShort {
            words: story.word_count,
        });
    } else if story.word_count > MAX_STORY_WORDS {
        violations.push(Violation::TooLong {
            words: story.word_count,
        });
    }
    if story.prompt.source.requires_metadata()
        && story.metadata.as_ref().is_none_or(|m| m.is_empty())
    {
        violations.push(Violation::MissingMetadata);
    }
    violations
}

/// Generates a 1-2 sentence writing prompt for a story that lacks one.
/// `few_shot` pairs are (story text, prompt) exemplars.
pub fn enrich_prompt(
    story_text: &str,
    few_shot: &[(String, String)],
    source: SourceKind,
    backend: &dyn Backend,
) -> Result<WritingPrompt, CorpusError> {
    if story_text.trim().is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let request = crate::prompts::enrichment_request(story_text, few_shot)?;
    let completion = backend.complete(&request)?;
    Ok(WritingPrompt {
        text: completion.text.trim().to_string(),
        source,
    })
}

/// Number of sentences, counting terminator runs (., !, ?) as single
/// boundaries. Used to check enrichment outputs against the 1-2 sentence
/// contract. Trailing text without a terminator counts as a sentence.
pub fn sentence_count(text: &str) -> usize {
    let mut count = 0;
    let mut in_terminator = false;
    let mut pending_content = false;
    for ch in text.chars() {
        if matches!(ch, '.' | '!' | '?') {
            if pending_content && !in_terminator {
                count += 1;
                pending_content = false;
            }
            in_terminator = true;
        } else {
            if !ch.is_whitespace() {
                pending_content = true;
            }
            in_terminator = false;
        }
    }
    if pending_content {
        count += 1;
    }
    count
}

/// Serializes profiles to pretty JSON (sorted by author id on load).
pub fn save_profiles(path: &Path, profiles: &[AuthorProfile]) -> Result<(), CorpusError> {
    let mut body = serde_json::to_string_pretty(profiles).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    body.push('\n');
    std::fs::write(path, body).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_profiles(path: &Path) -> Result<Vec<AuthorProfile>, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&raw).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
