//! Chat-completion gateway: typed requests, pricing, and backends.
//!
//! Every LLM call in the pipeline goes through the [`Backend`] trait so the
//! orchestration code never knows whether it is talking to a live
//! OpenAI-compatible endpoint ([`LiveBackend`]) or a deterministic mock
//! ([`MockBackend`]). Requests are tagged with the pipeline role that issued
//! them, carry an explicit sampling configuration, and hash to a stable
//! [`fingerprint`] used for mock lookup and content-addressed artifacts.

mod live;
mod mock;

pub use live::{LiveBackend, RetryPolicy, RoleModels, ENV_KEY, ENV_URL};
pub use mock::{MockBackend, MockFixture};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Pipeline role that issued a request. Used for model routing, sampling
/// defaults, and fingerprint domain separation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoleTag {
    /// Average-author story generation during profiling.
    Avg,
    /// Per-story intermediate writing-sheet extraction.
    Sheet,
    /// Merge of an intermediate sheet into the running combined sheet.
    Combine,
    /// Single-pass writing summary over the whole profiling set.
    Summary,
    /// Persona description rendering from a sheet.
    Persona,
    /// Story-rule derivation (from sheets, by contrast, or by transfer).
    Rule,
    /// Final story generation.
    StoryGen,
    /// Pairwise story judging.
    Judge,
    /// Writing-prompt enrichment for stories that lack one.
    Enrich,
}

impl RoleTag {
    pub const ALL: [RoleTag; 9] = [
        RoleTag::Avg,
        RoleTag::Sheet,
        RoleTag::Combine,
        RoleTag::Summary,
        RoleTag::Persona,
        RoleTag::Rule,
        RoleTag::StoryGen,
        RoleTag::Judge,
        RoleTag::Enrich,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Avg => "avg",
            RoleTag::Sheet => "sheet",
            RoleTag::Combine => "combine",
            RoleTag::Summary => "summary",
            RoleTag::Persona => "persona",
            RoleTag::Rule => "rule",
            RoleTag::StoryGen => "story_gen",
            RoleTag::Judge => "judge",
            RoleTag::Enrich => "enrich",
        }
    }
}

/// Decoding parameters attached to a request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl SamplingConfig {
    /// Deterministic decoding used by every analysis role.
    pub fn non_story() -> Self {
        SamplingConfig {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 4096,
        }
    }

    /// Creative decoding used only for story generation.
    pub fn story() -> Self {
        SamplingConfig {
            temperature: 0.7,
            top_p: 0.95,
            max_tokens: 4096,
        }
    }

    pub fn for_role(role: RoleTag) -> Self {
        match role {
            RoleTag::StoryGen => SamplingConfig::story(),
            _ => SamplingConfig::non_story(),
        }
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig::non_story()
    }
}

/// A single chat-completion request: system prompt, optional few-shot
/// (user, assistant) turns, and the final user prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role_tag: RoleTag,
    pub system: String,
    pub few_shot: Vec<(String, String)>,
    pub user: String,
    pub sampling: SamplingConfig,
}

impl ChatRequest {
    /// Builds a request with the role's default sampling. The system and
    /// user prompts must be non-empty.
    pub fn new(
        role_tag: RoleTag,
        system: impl Into<String>,
        user: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        let system = system.into();
        let user = user.into();
        if system.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "system prompt must be non-empty".into(),
            ));
        }
        if user.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "user prompt must be non-empty".into(),
            ));
        }
        Ok(ChatRequest {
            role_tag,
            system,
            few_shot: Vec::new(),
            user,
            sampling: SamplingConfig::for_role(role_tag),
        })
    }

    pub fn with_few_shot(mut self, few_shot: Vec<(String, String)>) -> Self {
        self.few_shot = few_shot;
        self
    }

    pub fn with_sampling(mut self, sampling: SamplingConfig) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

/// Token accounting for one completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A backend's answer to a [`ChatRequest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    /// Identifies which backend (and, for live runs, which model) produced
    /// the text, e.g. `"mock:script"` or `"live:gpt-4o"`.
    pub backend_id: String,
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("network error: {0}")]
    NetworkError(String),
    #[error("provider error (status {status}): {message}")]
    ProviderError { status: u16, message: String },
    #[error("mock backend has no response for fingerprint {fingerprint}")]
    MockMiss { fingerprint: String },
    #[error("failed to load mock fixture: {0}")]
    FixtureError(String),
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
}

/// Anything that can answer chat requests. Implementations must be safe to
/// call from several worker threads at once.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;

    /// Stable identifier copied into [`Completion::backend_id`].
    fn id(&self) -> &str;
}

// ===== Fingerprinting =====

/// Stable content hash of a request: role tag, prompts, few-shot turns, and
/// sampling parameters, each length-prefixed so field boundaries cannot
/// collide. Equal requests always hash equal; any field change (including
/// sampling) changes the digest.
pub fn fingerprint(request: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    let mut put = |bytes: &[u8]| {
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    put(request.role_tag.as_str().as_bytes());
    put(request.system.as_bytes());
    put(&(request.few_shot.len() as u64).to_le_bytes());
    for (user, assistant) in &request.few_shot {
        put(user.as_bytes());
        put(assistant.as_bytes());
    }
    put(request.user.as_bytes());
    put(&request.sampling.temperature.to_bits().to_le_bytes());
    put(&request.sampling.top_p.to_bits().to_le_bytes());
    put(&request.sampling.max_tokens.to_le_bytes());
    hex::encode(hasher.finalize())
}

// ===== Cost model =====

/// Per-token prices and the per-sample profiling cost constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriceTable {
    /// Dollars per million prompt tokens.
    pub input_per_1m: f64,
    /// Dollars per million completion tokens.
    pub output_per_1m: f64,
    /// Dollars per profiling story for the iterative sheet build.
    pub sheet_cost_per_sample: f64,
    /// Dollars per profiling story for a single summary pass.
    pub summary_cost_per_sample: f64,
    /// Quadratic coefficient of the cumulative summary-cost curve.
    pub summary_quadratic_coeff: f64,
    /// Linear coefficient of the cumulative summary-cost curve.
    pub summary_linear_coeff: f64,
}

impl Default for PriceTable {
    fn default() -> Self {
        PriceTable {
            input_per_1m: 2.50,
            output_per_1m: 10.00,
            sheet_cost_per_sample: 0.06,
            summary_cost_per_sample: 0.02,
            summary_quadratic_coeff: 0.0015,
            summary_linear_coeff: 0.019,
        }
    }
}

/// Which profiling strategy a cost projection describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionKind {
    /// Incremental sheet building: each story is processed once, so cost
    /// grows linearly in the profile size.
    IterativeSheet,
    /// Summarizing the whole history in one pass: each new story re-reads
    /// everything before it, so cumulative cost grows quadratically.
    Summary,
}

/// Projected dollars to profile `profile_size` stories.
pub fn cost_projection(kind: ProjectionKind, profile_size: u64, prices: &PriceTable) -> f64 {
    let p = profile_size as f64;
    match kind {
        ProjectionKind::IterativeSheet => prices.sheet_cost_per_sample * p,
        ProjectionKind::Summary => {
            prices.summary_quadratic_coeff * p * p + prices.summary_linear_coeff * p
        }
    }
}

/// Dollars for one completion's measured token usage.
pub fn usage_cost(usage: &Usage, prices: &PriceTable) -> f64 {
    usage.prompt_tokens as f64 / 1_000_000.0 * prices.input_per_1m
        + usage.completion_tokens as f64 / 1_000_000.0 * prices.output_per_1m
}

/// Smallest integer profile size at which the summary projection becomes
/// strictly more expensive than the iterative one, if any exists below the
/// scan bound.
pub fn projection_crossover(prices: &PriceTable) -> Option<u64> {
    (1..=1_000_000).find(|&p| {
        cost_projection(ProjectionKind::Summary, p, prices)
            > cost_projection(ProjectionKind::IterativeSheet, p, prices)
    })
}

/// Whitespace token count used by mock backends to synthesize usage.
pub(crate) fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
