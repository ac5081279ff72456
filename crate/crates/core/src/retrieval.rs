//! BM25 lexical retrieval over writing-prompt text.
//!
//! Demonstration selection ranks an author's profiling prompts against the
//! target prompt so few-shot examples come from the most similar past work.
//! The scorer is classic Okapi BM25 with the Lucene IDF variant, which never
//! goes negative: `idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1)`. Query terms
//! are summed with repetition, so a duplicated token counts twice.

use std::collections::BTreeMap;

use thiserror::Error;

// ===== Parameters =====

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("duplicate document id {doc_id}")]
    DuplicateDocId { doc_id: usize },
}

/// One ranked result: the caller-supplied document id and its BM25 score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedHit {
    pub doc_id: usize,
    pub score: f64,
}

/// Lowercases and splits on any non-alphanumeric run. No stemming: "cats"
/// and "cat" are distinct terms.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

// ===== Index =====

/// Immutable BM25 index over caller-identified documents.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    ids: Vec<usize>,
    positions: BTreeMap<usize, usize>,
    term_freqs: Vec<BTreeMap<String, usize>>,
    doc_lens: Vec<usize>,
    doc_freqs: BTreeMap<String, usize>,
    avg_doc_len: f64,
}

/// Builds an index with the default k1/b parameters.
pub fn build_index<S: AsRef<str>>(docs: &[(usize, S)]) -> Result<Bm25Index, RetrievalError> {
    build_index_with_params(docs, DEFAULT_K1, DEFAULT_B)
}

pub fn build_index_with_params<S: AsRef<str>>(
    docs: &[(usize, S)],
    k1: f64,
    b: f64,
) -> Result<Bm25Index, RetrievalError> {
    if docs.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut ids = Vec::with_capacity(docs.len());
    let mut positions = BTreeMap::new();
    let mut term_freqs = Vec::with_capacity(docs.len());
    let mut doc_lens = Vec::with_capacity(docs.len());
    let mut doc_freqs: BTreeMap<String, usize> = BTreeMap::new();
    for (position, (doc_id, text)) in docs.iter().enumerate() {
        if positions.insert(*doc_id, position).is_some() {
            return Err(RetrievalError::DuplicateDocId { doc_id: *doc_id });
        }
        ids.push(*doc_id);
        let tokens = tokenize(text.as_ref());
        let mut freqs: BTreeMap<String, usize> = BTreeMap::new();
        for token in &tokens {
            *freqs.entry(token.clone()).or_insert(0) += 1;
        }
        for term in freqs.keys() {
            *doc_freqs.entry(term.clone()).or_insert(0) += 1;
        }
        doc_lens.push(tokens.len());
        term_freqs.push(freqs);
    }
    let avg_doc_len = doc_lens.iter().sum::<usize>() as f64 / doc_lens.len() as f64;
    Ok(Bm25Index {
        k1,
        b,
        ids,
        positions,
        term_freqs,
        doc_lens,
        doc_freqs,
        avg_doc_len,
    })
}

impl Bm25Index {
    /// Convenience constructor for positionally identified documents
    /// (doc ids 0..n).
    pub fn new<S: AsRef<str>>(documents: &[S]) -> Result<Self, RetrievalError> {
        let keyed: Vec<(usize, &str)> = documents
            .iter()
            .enumerate()
            .map(|(i, d)| (i, d.as_ref()))
            .collect();
        build_index(&keyed)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    /// Document frequency of one term.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freqs.get(term).copied().unwrap_or(0)
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn score_at(&self, query_tokens: &[String], position: usize) -> f64 {
        let freqs = &self.term_freqs[position];
        let doc_len = self.doc_lens[position] as f64;
        // A corpus of empty documents has no length signal; skip the
        // normalization rather than divide by zero.
        let avg = if self.avg_doc_len > 0.0 {
            self.avg_doc_len
        } else {
            1.0
        };
        let mut total = 0.0;
        for term in query_tokens {
            let tf = freqs.get(term).copied().unwrap_or(0) as f64;
            if tf == 0.0 {
                continue;
            }
            let norm = self.k1 * (1.0 - self.b + self.b * doc_len / avg);
            total += self.idf(term) * (tf * (self.k1 + 1.0)) / (tf + norm);
        }
        total
    }

    /// BM25 score of one document for the query. Query terms repeat: each
    /// occurrence contributes its full term score. Unknown ids score 0.
    pub fn score(&self, query: &str, doc_id: usize) -> f64 {
        match self.positions.get(&doc_id) {
            Some(&position) => self.score_at(&tokenize(query), position),
            None => 0.0,
        }
    }

    /// Top-k documents by descending score; equal scores order by ascending
    /// document id, so results are deterministic.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<RankedHit> {
        let query_tokens = tokenize(query);
        let mut scored: Vec<RankedHit> = (0..self.len())
            .map(|position| RankedHit {
                doc_id: self.ids[position],
                score: self.score_at(&query_tokens, position),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.doc_id.cmp(&b.doc_id))
        });
        scored.truncate(k);
        scored
    }
}
