//! Traditional text metrics: lexical overlap (BLEU, ROUGE-L), diversity via
//! homogenization, embedding-based style similarity, and token length.
//!
//! All token operations use case-folded whitespace tokens. The style model
//! is reached only through [`EmbeddingProvider`]; a deterministic hashed
//! bag-of-words provider keeps the whole suite offline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generator::GenerationMethod;

// ===== Errors =====

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("homogenization needs at least two stories, got {found}")]
    FewerThanTwo { found: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("style similarity needs at least one reference story")]
    EmptyReferences,
    #[error("embedding vectors have mismatched dimensions ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding provider failed: {detail}")]
    Provider { detail: String },
}

// ===== Tokenization =====

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Whitespace token count (the length column of the metric report).
pub fn token_length(text: &str) -> usize {
    text.split_whitespace().count()
}

// ===== BLEU =====

fn clipped_matches(candidate: &[String], reference: &[String], n: usize) -> usize {
    let mut ref_counts: BTreeMap<&[String], usize> = BTreeMap::new();
    if reference.len() >= n {
        for gram in reference.windows(n) {
            *ref_counts.entry(gram).or_insert(0) += 1;
        }
    }
    let mut cand_counts: BTreeMap<&[String], usize> = BTreeMap::new();
    for gram in candidate.windows(n) {
        *cand_counts.entry(gram).or_insert(0) += 1;
    }
    cand_counts
        .iter()
        .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// Corpus-standard BLEU-4 for a single candidate/reference pair: uniform
/// weights over the n-gram orders the candidate actually has, add-one
/// smoothing when a higher-order count is zero, and the exponential brevity
/// penalty for short candidates. Zero unigram overlap (or an empty
/// candidate) scores 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand = tokens(candidate);
    let refr = tokens(reference);
    if cand.is_empty() {
        return 0.0;
    }

    let mut log_sum = 0.0;
    let mut used = 0usize;
    for n in 1..=4 {
        if cand.len() < n {
            break;
        }
        let total = cand.len() - n + 1;
        let matches = clipped_matches(&cand, &refr, n);
        let precision = if matches == 0 {
            if n == 1 {
                return 0.0;
            }
            1.0 / (total as f64 + 1.0)
        } else {
            matches as f64 / total as f64
        };
        log_sum += precision.ln();
        used += 1;
    }
    let geometric_mean = (log_sum / used as f64).exp();
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    brevity * geometric_mean
}

// ===== ROUGE-L =====

/// Precision/recall/F1 of the longest common token subsequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut previous = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for token_a in a {
        for (j, token_b) in b.iter().enumerate() {
            current[j + 1] = if token_a == token_b {
                previous[j] + 1
            } else {
                previous[j + 1].max(current[j])
            };
        }
        std::mem::swap(&mut previous, &mut current);
    }
    previous[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeL {
    let cand = tokens(candidate);
    let refr = tokens(reference);
    let lcs = lcs_length(&cand, &refr) as f64;
    let precision = if cand.is_empty() { 0.0 } else { lcs / cand.len() as f64 };
    let recall = if refr.is_empty() { 0.0 } else { lcs / refr.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeL {
        precision,
        recall,
        f1,
    }
}

/// ROUGE-L F1 as a symmetric pairwise similarity (for homogenization).
pub fn rouge_f1_similarity(a: &str, b: &str) -> f64 {
    rouge_l(a, b).f1
}

// ===== Homogenization =====

/// Mean pairwise similarity over all unordered story pairs — higher means
/// the set is more uniform (less diverse).
pub fn homogenization<S: AsRef<str>>(
    stories: &[S],
    sim: impl Fn(&str, &str) -> f64,
) -> Result<f64, MetricsError> {
    if stories.len() < 2 {
        return Err(MetricsError::FewerThanTwo {
            found: stories.len(),
        });
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..stories.len() {
        for j in i + 1..stories.len() {
            total += sim(stories[i].as_ref(), stories[j].as_ref());
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Mean pairwise cosine over pre-computed embedding vectors.
pub fn pairwise_cosine_mean(vectors: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if vectors.len() < 2 {
        return Err(MetricsError::FewerThanTwo {
            found: vectors.len(),
        });
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            total += cosine(&vectors[i], &vectors[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

// ===== Embeddings =====

/// A text-to-vector model. Implementations must be deterministic per text
/// and return finite vectors of a fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, MetricsError>;
}

/// Deterministic offline provider: each token is hashed into one of `dim`
/// buckets and counted, giving a hashed bag-of-words vector. Identical
/// texts always embed identically; an empty text embeds to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedEmbedding {
    dim: usize,
}

impl HashedEmbedding {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashedEmbedding { dim }
    }
}

impl Default for HashedEmbedding {
    fn default() -> Self {
        HashedEmbedding::new(32)
    }
}

fn token_bucket(token: &str, dim: usize) -> usize {
    let digest = Sha256::digest(token.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(bytes) % dim as u64) as usize
}

impl EmbeddingProvider for HashedEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, MetricsError> {
        Ok(texts
            .iter()
            .map(|text| {
                let mut vector = vec![0.0; self.dim];
                for token in tokens(text) {
                    vector[token_bucket(&token, self.dim)] += 1.0;
                }
                vector
            })
            .collect())
    }
}

/// Provider backed by an HTTP endpoint: `POST {"texts": [...]}` returning
/// `{"vectors": [[...]]}`.
#[derive(Debug)]
pub struct HttpEmbedding {
    url: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbedding {
    pub fn new(url: impl Into<String>, dim: usize) -> Self {
        HttpEmbedding {
            url: url.into(),
            dim,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl EmbeddingProvider for HttpEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, MetricsError> {
        let response = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| MetricsError::Provider {
                detail: e.to_string(),
            })?;
        if !response.status().is_success() {
            return Err(MetricsError::Provider {
                detail: format!("endpoint returned HTTP {}", response.status()),
            });
        }
        let parsed: EmbedResponse = response.json().map_err(|e| MetricsError::Provider {
            detail: e.to_string(),
        })?;
        if parsed.vectors.len() != texts.len() {
            return Err(MetricsError::Provider {
                detail: format!(
                    "endpoint returned {} vectors for {} texts",
                    parsed.vectors.len(),
                    texts.len()
                ),
            });
        }
        for vector in &parsed.vectors {
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(MetricsError::Provider {
                    detail: "endpoint returned a non-finite component".to_string(),
                });
            }
        }
        Ok(parsed.vectors)
    }
}

// ===== Style similarity =====

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok(dot / (norm_a * norm_b))
}

/// Cosine between the generated story's embedding and the mean embedding of
/// the references. A single reference covers the per-story column of the
/// report; the full profiling set covers the history column.
pub fn style_similarity<S: AsRef<str>>(
    generated: &str,
    references: &[S],
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricsError> {
    if references.is_empty() {
        return Err(MetricsError::EmptyReferences);
    }
    let mut texts: Vec<&str> = Vec::with_capacity(references.len() + 1);
    texts.push(generated);
    texts.extend(references.iter().map(|r| r.as_ref()));
    let vectors = provider.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(MetricsError::Provider {
            detail: format!(
                "provider returned {} vectors for {} texts",
                vectors.len(),
                texts.len()
            ),
        });
    }
    let generated_vector = &vectors[0];
    let dim = generated_vector.len();
    let mut mean = vec![0.0; dim];
    for vector in &vectors[1..] {
        if vector.len() != dim {
            return Err(MetricsError::DimensionMismatch {
                left: dim,
                right: vector.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(vector) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= references.len() as f64;
    }
    cosine(generated_vector, &mean)
}

// ===== Report rows =====

/// One method's row in the metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: GenerationMethod,
    pub bleu: f64,
    pub rouge_l_f: f64,
    pub homog_rouge: f64,
    pub homog_embed: Option<f64>,
    pub style_history: f64,
    pub style_story: f64,
    pub mean_length: f64,
}

/// CSV report, one row per method.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(
        "method,bleu,rouge_l_f,homog_rouge,homog_embed,style_history,style_story,mean_length\n",
    );
    for row in rows {
        let homog_embed = row
            .homog_embed
            .map(|v| format!("{v:.4}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{},{:.4},{:.4},{:.1}\n",
            row.method.label(),
            row.bleu,
            row.rouge_l_f,
            row.homog_rouge,
            homog_embed,
            row.style_history,
            row.style_story,
            row.mean_length
        ));
    }
    out
}
