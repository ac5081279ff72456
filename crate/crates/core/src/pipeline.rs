//! End-to-end orchestration: run configuration, stage artifacts, and the
//! content-addressed output layout behind the CLI commands.
//!
//! Stages form a chain — ingest → profile → stylize → generate → judge →
//! (metrics, report) — where each stage writes its outputs plus a manifest
//! recording a digest of everything the stage consumed. Re-running a stage
//! whose digest is unchanged skips the work and leaves the files untouched,
//! so completed runs are idempotent byte-for-byte. Per-author work fans out
//! across a configurable worker count, except under a script-mode mock
//! whose response order requires strictly sequential calls.
//!
//! Per-author call order (pinned by the scripted fixture):
//! profile — for each profiling story: average, intermediate sheet, combine;
//! then one summary call. stylize — sheet persona, summary persona, one
//! contrast-rule call per profiling story, then per generation prompt:
//! sheet rules, summary rules, transfer rules, average story, contrast
//! rules. generate — one story call per method in canonical order. judge —
//! four category calls per (method, mode) pair.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    self, load_profiles, save_profiles, validate_story, AuthorProfile, CorpusError,
};
use crate::gateway::{
    cost_projection, Backend, LiveBackend, MockBackend, PriceTable, ProjectionKind, RoleModels,
};
use crate::generator::{
    generate_story, ArtifactStore, GeneratedStory, GenerationConfig, GenerationMethod,
};
use crate::judge::{aggregate, judge_pair, JudgeMode, JudgeReference, PairVerdict};
use crate::metrics::{
    homogenization, metrics_csv, pairwise_cosine_mean, rouge_f1_similarity, style_similarity,
    token_length, EmbeddingProvider, HashedEmbedding, HttpEmbedding, MetricRow, MetricsError,
};
use crate::profiler::{build_sheet, build_summary, generate_average_story, AverageStory};
use crate::prompts::PromptRegistry;
use crate::stylist::{
    generate_persona, rules_by_contrast, rules_fewshot_transfer, rules_from_sheet,
    PersonaDescription, StoryRules,
};
use crate::tagparse::{NarrativeCategory, WritingSheet};

// ===== Configuration =====

/// How chat requests are served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BackendConfig {
    /// OpenAI-compatible endpoint; URL/credential come from the config or
    /// the `GATEWAY_URL` / `GATEWAY_KEY` environment variables.
    Live {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
    },
    /// Replay from a mock fixture file (script or map mode — the file's
    /// own `mode` tag decides).
    Mock { fixture: PathBuf },
}

/// Full experiment configuration. Serialized as JSON; every field has a
/// default so partial config files stay valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    pub backend: BackendConfig,
    pub models: RoleModels,
    pub split_ratio: f64,
    pub k_shots: usize,
    pub methods: Vec<GenerationMethod>,
    pub judge_modes: Vec<JudgeMode>,
    pub excluded_category: Option<NarrativeCategory>,
    pub seed: u64,
    pub workers: usize,
    pub delta_demo: bool,
    /// Embedding endpoint for style metrics; offline hashed embeddings
    /// when absent.
    pub embedding_url: Option<String>,
    pub embedding_dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_path: PathBuf::from("dataset.jsonl"),
            output_dir: PathBuf::from("out"),
            backend: BackendConfig::Mock {
                fixture: PathBuf::from("fixture.json"),
            },
            models: RoleModels::default(),
            split_ratio: corpus::DEFAULT_SPLIT_RATIO,
            k_shots: 1,
            methods: GenerationMethod::ALL.to_vec(),
            judge_modes: JudgeMode::ALL.to_vec(),
            excluded_category: None,
            seed: 0,
            workers: 1,
            delta_demo: false,
            embedding_url: None,
            embedding_dim: 32,
        }
    }
}

impl RunConfig {
    /// Loads a config file. Relative paths inside it (dataset, output
    /// directory, mock fixture) are resolved against the file's own
    /// directory, so a config travels with its data.
    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let raw = fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let mut config: RunConfig =
            serde_json::from_str(&raw).map_err(|e| PipelineError::Config {
                detail: format!("{}: {e}", path.display()),
            })?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        config.validate()?;
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        fn anchor(base: &Path, path: &mut PathBuf) {
            if path.is_relative() {
                *path = base.join(&path);
            }
        }
        anchor(base, &mut self.dataset_path);
        anchor(base, &mut self.output_dir);
        if let BackendConfig::Mock { fixture } = &mut self.backend {
            anchor(base, fixture);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(PipelineError::Config {
                detail: format!("split_ratio {} outside (0, 1)", self.split_ratio),
            });
        }
        if self.embedding_dim == 0 {
            return Err(PipelineError::Config {
                detail: "embedding_dim must be positive".to_string(),
            });
        }
        Ok(())
    }
}

/// Builds the configured backend. Live credentials are read from the
/// environment so config files never hold secrets.
pub fn build_backend(config: &RunConfig) -> Result<Box<dyn Backend>, PipelineError> {
    match &config.backend {
        BackendConfig::Live { url } => {
            let backend = match url {
                Some(url) => {
                    let key = std::env::var(crate::gateway::ENV_KEY).map_err(|_| {
                        PipelineError::Config {
                            detail: format!(
                                "live backend requires the {} environment variable",
                                crate::gateway::ENV_KEY
                            ),
                        }
                    })?;
                    LiveBackend::new(url.clone(), key, config.models.clone())
                }
                None => LiveBackend::from_env(config.models.clone()).map_err(|e| {
                    PipelineError::Config {
                        detail: e.to_string(),
                    }
                })?,
            };
            Ok(Box::new(backend))
        }
        BackendConfig::Mock { fixture } => {
            let backend = MockBackend::load(fixture).map_err(|e| PipelineError::Io {
                path: fixture.display().to_string(),
                detail: e.to_string(),
            })?;
            Ok(Box::new(backend))
        }
    }
}

/// Script-mode mocks replay responses in order, so author work must stay
/// sequential; everything else honors the configured worker bound.
pub fn effective_workers(workers: usize, backend_id: &str) -> usize {
    if backend_id == "mock:script" {
        1
    } else {
        workers.max(1)
    }
}

// ===== Errors =====

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PipelineError {
    #[error("configuration error: {detail}")]
    Config { detail: String },
    #[error("dataset error: {detail}")]
    Dataset { detail: String },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("missing upstream artifact (run `{stage}` first): {detail}")]
    MissingUpstream { stage: &'static str, detail: String },
    // Boxed: the failure context is large and Results carrying it are
    // returned from every hot stage loop.
    #[error("stage {} failed{}: {}", .0.stage, .0.context, .0.detail)]
    Stage(Box<StageFailure>),
}

/// Where a stage failed: which stage, for which author/prompt/step, and
/// the underlying error text.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFailure {
    pub stage: &'static str,
    pub context: String,
    pub author_id: Option<String>,
    pub wp: Option<String>,
    pub step: Option<String>,
    pub detail: String,
}

impl PipelineError {
    /// 1 = user error (config, data, invocation order); 2 = backend or
    /// pipeline-stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. }
            | PipelineError::Dataset { .. }
            | PipelineError::Io { .. }
            | PipelineError::MissingUpstream { .. } => 1,
            PipelineError::Stage(_) => 2,
        }
    }

    /// One-line JSON record naming the failing (author, wp, step).
    pub fn failure_json(&self) -> serde_json::Value {
        let mut object = serde_json::Map::new();
        object.insert("error".into(), self.to_string().into());
        object.insert("exit_code".into(), self.exit_code().into());
        if let PipelineError::Stage(failure) = self {
            object.insert("stage".into(), failure.stage.into());
            object.insert(
                "author_id".into(),
                failure
                    .author_id
                    .clone()
                    .map(Into::into)
                    .unwrap_or(serde_json::Value::Null),
            );
            object.insert(
                "wp".into(),
                failure
                    .wp
                    .clone()
                    .map(Into::into)
                    .unwrap_or(serde_json::Value::Null),
            );
            object.insert(
                "step".into(),
                failure
                    .step
                    .clone()
                    .map(Into::into)
                    .unwrap_or(serde_json::Value::Null),
            );
            object.insert("detail".into(), failure.detail.clone().into());
        }
        serde_json::Value::Object(object)
    }
}

fn stage_error(
    stage: &'static str,
    author_id: Option<&str>,
    wp: Option<&str>,
    step: Option<String>,
    detail: impl ToString,
) -> PipelineError {
    let mut context = String::new();
    if let Some(author) = author_id {
        let _ = write!(context, " for author {author}");
    }
    if let Some(wp) = wp {
        let _ = write!(context, ", wp {wp:?}");
    }
    if let Some(step) = &step {
        let _ = write!(context, ", step {step}");
    }
    PipelineError::Stage(Box::new(StageFailure {
        stage,
        context,
        author_id: author_id.map(str::to_string),
        wp: wp.map(str::to_string),
        step,
        detail: detail.to_string(),
    }))
}

fn io_error(path: &Path, err: impl ToString) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        detail: err.to_string(),
    }
}

// ===== Digests, manifests, file helpers =====

/// Stable hex digest over length-prefixed parts.
pub fn combined_digest(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Deterministic per-item seed derived from the run seed and identifying
/// strings, so shuffles are stable across runs and independent per pair.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_be_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageManifest {
    stage: String,
    inputs_digest: String,
}

fn stage_dir(config: &RunConfig, stage: &str) -> PathBuf {
    config.output_dir.join(stage)
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn stage_is_fresh(dir: &Path, digest: &str) -> bool {
    let path = manifest_path(dir);
    match fs::read_to_string(&path) {
        Ok(raw) => serde_json::from_str::<StageManifest>(&raw)
            .map(|m| m.inputs_digest == digest)
            .unwrap_or(false),
        Err(_) => false,
    }
}

fn write_manifest(dir: &Path, stage: &str, digest: &str) -> Result<(), PipelineError> {
    write_json(
        &manifest_path(dir),
        &StageManifest {
            stage: stage.to_string(),
            inputs_digest: digest.to_string(),
        },
    )
}

/// Digest recorded by a completed stage; `MissingUpstream` when the stage
/// has not run.
fn read_stage_digest(config: &RunConfig, stage: &'static str) -> Result<String, PipelineError> {
    let path = manifest_path(&stage_dir(config, stage));
    let raw = fs::read_to_string(&path).map_err(|_| PipelineError::MissingUpstream {
        stage,
        detail: format!("{} not found", path.display()),
    })?;
    let manifest: StageManifest =
        serde_json::from_str(&raw).map_err(|e| io_error(&path, e))?;
    Ok(manifest.inputs_digest)
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut body = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| io_error(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let raw = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&raw).map_err(|e| io_error(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut body = String::new();
    for item in items {
        body.push_str(&serde_json::to_string(item).map_err(|e| io_error(path, e))?);
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| io_error(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let raw = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    raw.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(|e| io_error(path, e)))
        .collect()
}

fn author_file(dir: &Path, author_id: &str) -> PathBuf {
    let safe: String = author_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect();
    dir.join(format!("{safe}.json"))
}

// ===== Worker fan-out =====

/// Applies `f` to every author, preserving input order in the results.
/// `workers = 1` runs inline; otherwise authors are striped across scoped
/// threads. The first error (by author order) wins.
fn for_each_author<T, F>(
    authors: &[AuthorProfile],
    workers: usize,
    f: F,
) -> Result<Vec<T>, PipelineError>
where
    T: Send,
    F: Fn(&AuthorProfile) -> Result<T, PipelineError> + Sync,
{
    let workers = workers.max(1).min(authors.len().max(1));
    if workers <= 1 {
        return authors.iter().map(f).collect();
    }
    let mut slots: Vec<Option<Result<T, PipelineError>>> =
        (0..authors.len()).map(|_| None).collect();
    let gathered: Vec<Vec<(usize, Result<T, PipelineError>)>> = std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..workers)
            .map(|offset| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut index = offset;
                    while index < authors.len() {
                        out.push((index, f(&authors[index])));
                        index += workers;
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("author worker panicked"))
            .collect()
    });
    for batch in gathered {
        for (index, result) in batch {
            slots[index] = Some(result);
        }
    }
    slots
        .into_iter()
        .map(|slot| slot.expect("every author slot filled"))
        .collect()
}

// ===== Stage: ingest =====

/// Validation summary written next to the split author profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub authors: usize,
    pub stories: usize,
    pub profiling_stories: usize,
    pub generation_stories: usize,
    pub sources: BTreeMap<String, usize>,
    pub violations: Vec<String>,
    pub split_ratio: f64,
}

pub fn run_ingest(config: &RunConfig) -> Result<IngestReport, PipelineError> {
    config.validate()?;
    let dir = stage_dir(config, "ingest");
    let raw = fs::read_to_string(&config.dataset_path)
        .map_err(|e| io_error(&config.dataset_path, e))?;
    let digest = combined_digest(&[&raw, &format!("{}", config.split_ratio)]);
    if stage_is_fresh(&dir, &digest) {
        return read_json(&dir.join("report.json"));
    }

    let profiles = corpus::load_dataset_with_ratio(&config.dataset_path, config.split_ratio)
        .map_err(|e: CorpusError| PipelineError::Dataset {
            detail: e.to_string(),
        })?;

    let mut report = IngestReport {
        authors: profiles.len(),
        stories: 0,
        profiling_stories: 0,
        generation_stories: 0,
        sources: BTreeMap::new(),
        violations: Vec::new(),
        split_ratio: config.split_ratio,
    };
    for profile in &profiles {
        report.stories += profile.story_count();
        report.profiling_stories += profile.profiling.len();
        report.generation_stories += profile.generation.len();
        *report
            .sources
            .entry(profile.source.tag().to_string())
            .or_insert(0) += 1;
        for story in profile.profiling.iter().chain(&profile.generation) {
            for violation in validate_story(story) {
                report.violations.push(format!(
                    "{} t{}: {violation:?}",
                    profile.author_id, story.timestamp
                ));
            }
        }
    }

    ensure_dir(&dir)?;
    save_profiles(&dir.join("authors.json"), &profiles).map_err(|e| PipelineError::Dataset {
        detail: e.to_string(),
    })?;
    write_json(&dir.join("report.json"), &report)?;
    write_manifest(&dir, "ingest", &digest)?;
    Ok(report)
}

fn load_authors(config: &RunConfig) -> Result<Vec<AuthorProfile>, PipelineError> {
    let path = stage_dir(config, "ingest").join("authors.json");
    if !path.exists() {
        return Err(PipelineError::MissingUpstream {
            stage: "ingest",
            detail: format!("{} not found", path.display()),
        });
    }
    load_profiles(&path).map_err(|e| PipelineError::Dataset {
        detail: e.to_string(),
    })
}

// ===== Stage: profile =====

/// Per-author output of the profiling stage: the final iterative sheet,
/// its per-step transcript, the average stories consumed while building
/// it, and the single-pass summary sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileArtifact {
    pub author_id: String,
    pub inputs_digest: String,
    pub sheet: WritingSheet,
    pub summary: WritingSheet,
    pub averages: Vec<AverageStory>,
    pub transcript: Vec<(u32, WritingSheet)>,
    pub warnings: Vec<String>,
}

fn models_digest(config: &RunConfig) -> String {
    serde_json::to_string(&config.models).expect("models serialize")
}

pub fn run_profile(config: &RunConfig, backend: &dyn Backend) -> Result<(), PipelineError> {
    let ingest_digest = read_stage_digest(config, "ingest")?;
    let dir = stage_dir(config, "profile");
    let digest = combined_digest(&[&ingest_digest, backend.id(), &models_digest(config)]);
    if stage_is_fresh(&dir, &digest) {
        return Ok(());
    }

    let authors = load_authors(config)?;
    let registry = PromptRegistry::default();
    let workers = effective_workers(config.workers, backend.id());
    let artifacts = for_each_author(&authors, workers, |profile| {
        let fail = |e: &crate::profiler::ProfilerError| {
            let step = match e {
                crate::profiler::ProfilerError::StepFailed { step, .. } => Some(step.to_string()),
                _ => None,
            };
            stage_error("profile", Some(&profile.author_id), None, step, e)
        };
        let outcome = build_sheet(profile, &registry, backend).map_err(|e| fail(&e))?;
        let summary = build_summary(profile, backend).map_err(|e| fail(&e))?;
        let mut warnings = outcome.warnings.clone();
        warnings.extend(summary.warnings.iter().map(|w| format!("summary: {w}")));
        Ok(ProfileArtifact {
            author_id: profile.author_id.clone(),
            inputs_digest: combined_digest(&[&digest, &profile.author_id]),
            sheet: outcome.state.current.clone(),
            summary: summary.sheet,
            averages: outcome.averages,
            transcript: outcome.state.transcript,
            warnings,
        })
    })?;

    ensure_dir(&dir)?;
    for artifact in &artifacts {
        write_json(&author_file(&dir, &artifact.author_id), artifact)?;
    }
    write_manifest(&dir, "profile", &digest)?;
    Ok(())
}

fn load_profile_artifact(
    config: &RunConfig,
    author_id: &str,
) -> Result<ProfileArtifact, PipelineError> {
    let path = author_file(&stage_dir(config, "profile"), author_id);
    if !path.exists() {
        return Err(PipelineError::MissingUpstream {
            stage: "profile",
            detail: format!("{} not found", path.display()),
        });
    }
    read_json(&path)
}

// ===== Stage: stylize =====

/// Rules tied to one generation prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRules {
    pub wp: crate::corpus::WritingPrompt,
    pub sheet_rules: StoryRules,
    pub summary_rules: StoryRules,
    pub transfer_rules: StoryRules,
    pub oracle_rules: StoryRules,
}

/// Per-author output of the stylize stage: both personas, the per-story
/// contrast rules feeding the transfer method, and per-generation-prompt
/// rule sets for every rule-consuming method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylizeArtifact {
    pub author_id: String,
    pub inputs_digest: String,
    pub sheet_persona: PersonaDescription,
    pub summary_persona: PersonaDescription,
    pub profiling_contrast: Vec<(crate::corpus::WritingPrompt, StoryRules)>,
    /// Keyed by the generation story's timestamp.
    pub per_prompt: BTreeMap<String, PromptRules>,
}

pub fn run_stylize(config: &RunConfig, backend: &dyn Backend) -> Result<(), PipelineError> {
    let profile_digest = read_stage_digest(config, "profile")?;
    let dir = stage_dir(config, "stylize");
    let digest = combined_digest(&[&profile_digest, backend.id(), &models_digest(config)]);
    if stage_is_fresh(&dir, &digest) {
        return Ok(());
    }

    let authors = load_authors(config)?;
    let registry = PromptRegistry::default();
    let workers = effective_workers(config.workers, backend.id());
    let artifacts = for_each_author(&authors, workers, |profile| {
        let author_id = profile.author_id.as_str();
        let profile_artifact = load_profile_artifact(config, author_id)?;
        let fail = |wp: Option<&str>, e: &dyn std::fmt::Display| {
            stage_error("stylize", Some(author_id), wp, None, e)
        };

        let sheet_persona =
            generate_persona(&profile_artifact.sheet, backend).map_err(|e| fail(None, &e))?;
        let summary_persona =
            generate_persona(&profile_artifact.summary, backend).map_err(|e| fail(None, &e))?;

        if profile_artifact.averages.len() != profile.profiling.len() {
            return Err(fail(
                None,
                &"profile artifact averages do not match the profiling set",
            ));
        }
        let mut profiling_contrast = Vec::with_capacity(profile.profiling.len());
        for (story, avg) in profile.profiling.iter().zip(&profile_artifact.averages) {
            let rules = rules_by_contrast(&story.prompt, story, avg, backend)
                .map_err(|e| fail(Some(&story.prompt.text), &e))?;
            profiling_contrast.push((story.prompt.clone(), rules));
        }

        let mut per_prompt = BTreeMap::new();
        for target in &profile.generation {
            let wp = &target.prompt;
            let fail = |e: &dyn std::fmt::Display| {
                stage_error("stylize", Some(author_id), Some(&wp.text), None, e)
            };
            let sheet_rules =
                rules_from_sheet(&profile_artifact.sheet, wp, backend).map_err(|e| fail(&e))?;
            let summary_rules =
                rules_from_sheet(&profile_artifact.summary, wp, backend).map_err(|e| fail(&e))?;
            let transfer_rules = rules_fewshot_transfer(&profiling_contrast, wp, None, backend)
                .map_err(|e| fail(&e))?;
            let oracle_avg =
                generate_average_story(wp, &registry, backend).map_err(|e| fail(&e))?;
            let oracle_rules =
                rules_by_contrast(wp, target, &oracle_avg, backend).map_err(|e| fail(&e))?;
            per_prompt.insert(
                target.timestamp.to_string(),
                PromptRules {
                    wp: wp.clone(),
                    sheet_rules,
                    summary_rules,
                    transfer_rules,
                    oracle_rules,
                },
            );
        }

        Ok(StylizeArtifact {
            author_id: author_id.to_string(),
            inputs_digest: combined_digest(&[&digest, author_id]),
            sheet_persona,
            summary_persona,
            profiling_contrast,
            per_prompt,
        })
    })?;

    ensure_dir(&dir)?;
    for artifact in &artifacts {
        write_json(&author_file(&dir, &artifact.author_id), artifact)?;
    }
    write_manifest(&dir, "stylize", &digest)?;
    Ok(())
}

fn load_stylize_artifact(
    config: &RunConfig,
    author_id: &str,
) -> Result<StylizeArtifact, PipelineError> {
    let path = author_file(&stage_dir(config, "stylize"), author_id);
    if !path.exists() {
        return Err(PipelineError::MissingUpstream {
            stage: "stylize",
            detail: format!("{} not found", path.display()),
        });
    }
    read_json(&path)
}

// ===== Stage: generate =====

fn methods_digest(methods: &[GenerationMethod]) -> String {
    methods
        .iter()
        .map(|m| m.label())
        .collect::<Vec<_>>()
        .join(",")
}

/// Canonical-order subset of methods selected by the config.
fn selected_methods(config: &RunConfig) -> Vec<GenerationMethod> {
    GenerationMethod::ALL
        .into_iter()
        .filter(|m| config.methods.contains(m))
        .collect()
}

pub fn run_generate(config: &RunConfig, backend: &dyn Backend) -> Result<(), PipelineError> {
    if config.methods.is_empty() {
        return Err(PipelineError::Config {
            detail: "generate requires a non-empty methods list".to_string(),
        });
    }
    let stylize_digest = read_stage_digest(config, "stylize")?;
    let dir = stage_dir(config, "generate");
    let digest = combined_digest(&[
        &stylize_digest,
        backend.id(),
        &models_digest(config),
        &methods_digest(&selected_methods(config)),
        &config.k_shots.to_string(),
        &format!("{:?}", config.excluded_category),
        &config.delta_demo.to_string(),
    ]);
    if stage_is_fresh(&dir, &digest) {
        return Ok(());
    }

    let authors = load_authors(config)?;
    let registry = PromptRegistry::default();
    let methods = selected_methods(config);
    let generation_config = GenerationConfig {
        k_shots: config.k_shots,
        story_length_words: None,
        excluded_category: config.excluded_category,
        delta_demo: config.delta_demo,
        ..GenerationConfig::default()
    };
    let workers = effective_workers(config.workers, backend.id());

    let per_author = for_each_author(&authors, workers, |profile| {
        let author_id = profile.author_id.as_str();
        let style = load_stylize_artifact(config, author_id)?;
        let profile_artifact = load_profile_artifact(config, author_id)?;
        let mut stories = Vec::new();
        for target in &profile.generation {
            let rules = style
                .per_prompt
                .get(&target.timestamp.to_string())
                .ok_or_else(|| PipelineError::MissingUpstream {
                    stage: "stylize",
                    detail: format!(
                        "no rules for author {author_id}, generation story t{}",
                        target.timestamp
                    ),
                })?;
            let store = ArtifactStore {
                sheet: Some(profile_artifact.sheet.clone()),
                summary: Some(profile_artifact.summary.clone()),
                sheet_persona: Some(style.sheet_persona.clone()),
                summary_persona: Some(style.summary_persona.clone()),
                sheet_rules: Some(rules.sheet_rules.clone()),
                summary_rules: Some(rules.summary_rules.clone()),
                transfer_rules: Some(rules.transfer_rules.clone()),
                oracle_rules: Some(rules.oracle_rules.clone()),
            };
            for &method in &methods {
                let story = generate_story(
                    method,
                    profile,
                    target,
                    &generation_config,
                    &registry,
                    &store,
                    backend,
                )
                .map_err(|e| {
                    stage_error(
                        "generate",
                        Some(author_id),
                        Some(&target.prompt.text),
                        Some(method.label().to_string()),
                        e,
                    )
                })?;
                stories.push(story);
            }
        }
        Ok(stories)
    })?;

    let stories: Vec<GeneratedStory> = per_author.into_iter().flatten().collect();
    ensure_dir(&dir)?;
    write_jsonl(&dir.join("stories.jsonl"), &stories)?;
    write_manifest(&dir, "generate", &digest)?;
    Ok(())
}

fn load_stories(config: &RunConfig) -> Result<Vec<GeneratedStory>, PipelineError> {
    let path = stage_dir(config, "generate").join("stories.jsonl");
    if !path.exists() {
        return Err(PipelineError::MissingUpstream {
            stage: "generate",
            detail: format!("{} not found", path.display()),
        });
    }
    read_jsonl(&path)
}

// ===== Stage: judge =====

fn modes_digest(modes: &[JudgeMode]) -> String {
    modes.iter().map(|m| m.label()).collect::<Vec<_>>().join(",")
}

pub fn run_judge(config: &RunConfig, backend: &dyn Backend) -> Result<(), PipelineError> {
    let generate_digest = read_stage_digest(config, "generate")?;
    let profile_digest = read_stage_digest(config, "profile")?;
    let dir = stage_dir(config, "judge");
    let digest = combined_digest(&[
        &generate_digest,
        &profile_digest,
        backend.id(),
        &models_digest(config),
        &modes_digest(&config.judge_modes),
        &config.seed.to_string(),
    ]);
    if stage_is_fresh(&dir, &digest) {
        return Ok(());
    }

    let authors = load_authors(config)?;
    let stories = load_stories(config)?;
    // (author, wp text) -> method -> story
    let mut by_target: BTreeMap<(String, String), BTreeMap<GenerationMethod, &GeneratedStory>> =
        BTreeMap::new();
    for story in &stories {
        by_target
            .entry((story.author_id.clone(), story.wp.text.clone()))
            .or_default()
            .insert(story.method, story);
    }

    let modes: Vec<JudgeMode> = JudgeMode::ALL
        .into_iter()
        .filter(|m| config.judge_modes.contains(m))
        .collect();
    let workers = effective_workers(config.workers, backend.id());

    let per_author = for_each_author(&authors, workers, |profile| {
        let author_id = profile.author_id.as_str();
        let summary = load_profile_artifact(config, author_id)?.summary;
        let mut verdicts = Vec::new();
        for target in &profile.generation {
            let key = (author_id.to_string(), target.prompt.text.clone());
            let Some(methods) = by_target.get(&key) else {
                continue;
            };
            let baseline = methods
                .get(&GenerationMethod::AverageAuthor)
                .ok_or_else(|| PipelineError::MissingUpstream {
                    stage: "generate",
                    detail: format!(
                        "judging needs the {} baseline for author {author_id}, wp {:?}",
                        GenerationMethod::AverageAuthor.label(),
                        target.prompt.text
                    ),
                })?;
            for (&method, story) in methods {
                if method == GenerationMethod::AverageAuthor {
                    continue;
                }
                for &mode in &modes {
                    let reference = match mode {
                        JudgeMode::Faithfulness => JudgeReference::Claims(&summary),
                        JudgeMode::Similarity => JudgeReference::GroundTruth(&target.text),
                    };
                    let seed = derive_seed(
                        config.seed,
                        &[author_id, &target.prompt.text, method.label(), mode.label()],
                    );
                    let verdict = judge_pair(
                        mode,
                        author_id,
                        &target.prompt,
                        method,
                        &story.text,
                        &baseline.text,
                        &reference,
                        seed,
                        backend,
                    )
                    .map_err(|e| {
                        stage_error(
                            "judge",
                            Some(author_id),
                            Some(&target.prompt.text),
                            Some(format!("{}/{}", method.label(), mode.label())),
                            e,
                        )
                    })?;
                    verdicts.push(verdict);
                }
            }
        }
        Ok(verdicts)
    })?;

    let verdicts: Vec<PairVerdict> = per_author.into_iter().flatten().collect();
    ensure_dir(&dir)?;
    write_jsonl(&dir.join("verdicts.jsonl"), &verdicts)?;
    write_manifest(&dir, "judge", &digest)?;
    Ok(())
}

// ===== Stage: metrics =====

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn metrics_provider(config: &RunConfig) -> Box<dyn EmbeddingProvider> {
    match &config.embedding_url {
        Some(url) => Box::new(HttpEmbedding::new(url.clone(), config.embedding_dim)),
        None => Box::new(HashedEmbedding::new(config.embedding_dim)),
    }
}

pub fn run_metrics(config: &RunConfig) -> Result<(), PipelineError> {
    let generate_digest = read_stage_digest(config, "generate")?;
    let ingest_digest = read_stage_digest(config, "ingest")?;
    let dir = stage_dir(config, "metrics");
    let digest = combined_digest(&[
        &generate_digest,
        &ingest_digest,
        &format!("{:?}", config.embedding_url),
        &config.embedding_dim.to_string(),
    ]);
    if stage_is_fresh(&dir, &digest) {
        return Ok(());
    }

    let authors = load_authors(config)?;
    let stories = load_stories(config)?;
    let provider = metrics_provider(config);
    let fail = |detail: &dyn std::fmt::Display| {
        stage_error("metrics", None, None, None, detail)
    };

    let mut by_author: BTreeMap<&str, &AuthorProfile> = BTreeMap::new();
    let mut truths: BTreeMap<(String, String), &str> = BTreeMap::new();
    for profile in &authors {
        by_author.insert(&profile.author_id, profile);
        for story in &profile.generation {
            truths.insert(
                (profile.author_id.clone(), story.prompt.text.clone()),
                &story.text,
            );
        }
    }

    let mut rows = Vec::new();
    for method in GenerationMethod::ALL {
        let method_stories: Vec<&GeneratedStory> =
            stories.iter().filter(|s| s.method == method).collect();
        if method_stories.is_empty() {
            continue;
        }

        let mut bleu_values = Vec::new();
        let mut rouge_values = Vec::new();
        let mut style_history_values = Vec::new();
        let mut style_story_values = Vec::new();
        let mut lengths = Vec::new();
        for story in &method_stories {
            let key = (story.author_id.clone(), story.wp.text.clone());
            let truth = truths.get(&key).copied().ok_or_else(|| {
                PipelineError::MissingUpstream {
                    stage: "ingest",
                    detail: format!(
                        "no ground truth for author {}, wp {:?}",
                        story.author_id, story.wp.text
                    ),
                }
            })?;
            let profile = by_author.get(story.author_id.as_str()).ok_or_else(|| {
                PipelineError::MissingUpstream {
                    stage: "ingest",
                    detail: format!("unknown author {}", story.author_id),
                }
            })?;
            bleu_values.push(crate::metrics::bleu(&story.text, truth));
            rouge_values.push(crate::metrics::rouge_l(&story.text, truth).f1);
            let history: Vec<&str> =
                profile.profiling.iter().map(|s| s.text.as_str()).collect();
            style_history_values.push(
                style_similarity(&story.text, &history, provider.as_ref())
                    .map_err(|e| fail(&e))?,
            );
            style_story_values.push(
                style_similarity(&story.text, &[truth], provider.as_ref())
                    .map_err(|e| fail(&e))?,
            );
            lengths.push(token_length(&story.text) as f64);
        }

        // Homogenization is within-author, averaged over the authors that
        // have at least two generations for this method.
        let mut author_groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for story in &method_stories {
            author_groups
                .entry(story.author_id.as_str())
                .or_default()
                .push(story.text.as_str());
        }
        let mut homog_rouge_values = Vec::new();
        let mut homog_embed_values = Vec::new();
        for texts in author_groups.values() {
            if texts.len() < 2 {
                continue;
            }
            match homogenization(texts, rouge_f1_similarity) {
                Ok(value) => homog_rouge_values.push(value),
                Err(MetricsError::FewerThanTwo { .. }) => {}
                Err(e) => return Err(fail(&e)),
            }
            let refs: Vec<&str> = texts.to_vec();
            let vectors = provider.embed(&refs).map_err(|e| fail(&e))?;
            match pairwise_cosine_mean(&vectors) {
                Ok(value) => homog_embed_values.push(value),
                Err(MetricsError::FewerThanTwo { .. }) => {}
                Err(e) => return Err(fail(&e)),
            }
        }

        rows.push(MetricRow {
            method,
            bleu: mean(&bleu_values),
            rouge_l_f: mean(&rouge_values),
            homog_rouge: mean(&homog_rouge_values),
            homog_embed: if homog_embed_values.is_empty() {
                None
            } else {
                Some(mean(&homog_embed_values))
            },
            style_history: mean(&style_history_values),
            style_story: mean(&style_story_values),
            mean_length: mean(&lengths),
        });
    }

    ensure_dir(&dir)?;
    write_json(&dir.join("rows.json"), &rows)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(&rows))
        .map_err(|e| io_error(&dir.join("metrics.csv"), e))?;
    write_manifest(&dir, "metrics", &digest)?;
    Ok(())
}

// ===== Stage: report =====

pub fn run_report(config: &RunConfig) -> Result<(), PipelineError> {
    let judge_digest = read_stage_digest(config, "judge")?;
    let dir = stage_dir(config, "report");
    let digest = combined_digest(&[&judge_digest]);
    if stage_is_fresh(&dir, &digest) {
        return Ok(());
    }

    let path = stage_dir(config, "judge").join("verdicts.jsonl");
    if !path.exists() {
        return Err(PipelineError::MissingUpstream {
            stage: "judge",
            detail: format!("{} not found", path.display()),
        });
    }
    let verdicts: Vec<PairVerdict> = read_jsonl(&path)?;
    let report = aggregate(&verdicts);

    ensure_dir(&dir)?;
    fs::write(dir.join("win_rates.csv"), report.to_csv())
        .map_err(|e| io_error(&dir.join("win_rates.csv"), e))?;
    let mut tree = serde_json::to_string_pretty(&report.to_json_tree())
        .map_err(|e| io_error(&dir.join("win_rates.json"), e))?;
    tree.push('\n');
    fs::write(dir.join("win_rates.json"), tree)
        .map_err(|e| io_error(&dir.join("win_rates.json"), e))?;
    write_manifest(&dir, "report", &digest)?;
    Ok(())
}

// ===== Stage: cost =====

/// Projection table for both sheet-construction strategies over 0..=max_p
/// profiling stories. Returns the CSV it writes.
pub fn run_cost(config: &RunConfig, max_p: u64) -> Result<String, PipelineError> {
    let prices = PriceTable::default();
    let mut csv = String::from("p,iterative_sheet,summary\n");
    for p in 0..=max_p {
        let sheet = cost_projection(ProjectionKind::IterativeSheet, p, &prices);
        let summary = cost_projection(ProjectionKind::Summary, p, &prices);
        let _ = writeln!(csv, "{p},{sheet:.2},{summary:.2}");
    }
    let dir = stage_dir(config, "cost");
    ensure_dir(&dir)?;
    fs::write(dir.join("projection.csv"), &csv)
        .map_err(|e| io_error(&dir.join("projection.csv"), e))?;
    Ok(csv)
}

// ===== Full pipeline =====

/// Runs every stage in order against one backend instance, which lets a
/// single scripted mock serve the whole run.
pub fn run_all(config: &RunConfig, backend: &dyn Backend) -> Result<IngestReport, PipelineError> {
    let report = run_ingest(config)?;
    run_profile(config, backend)?;
    run_stylize(config, backend)?;
    run_generate(config, backend)?;
    run_judge(config, backend)?;
    run_metrics(config)?;
    run_report(config)?;
    Ok(report)
}
