//! Okapi BM25 over a passage corpus.
//!
//! Passages are indexed on title and body together. Scoring uses
//!
//! ```text
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! score(d, q) = Σ_{t ∈ q} idf(t) · tf · (k1 + 1) / (tf + k1 · (1 − b + b · dl / avgdl))
//! ```
//!
//! with `k1 = 1.2` and `b = 0.75` by default. Documents sharing no term with
//! the query are never returned.

mod index;

use std::collections::HashMap;
use std::io::BufRead;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{InvertedIndex, Posting, INDEX_FORMAT_VERSION, INDEX_MAGIC};

/// Splits text into lowercase alphanumeric terms.
pub fn tokenize(text: &str) -> Vec<String> {
    crate::text::words(text)
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("document at position {0} has an empty id")]
    EmptyId(usize),
    #[error("corpus line {line}: {message}")]
    MalformedCorpus { line: usize, message: String },
    #[error("index file: {0}")]
    IndexFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A retrievable passage. Serialized with the body under `"text"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "text")]
    pub body: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Document { id: id.into(), title: title.into(), body: body.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub doc: Document,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn idf(&self, doc_count: usize, df: usize) -> f64 {
        let (n, df) = (doc_count as f64, df as f64);
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn term_weight(&self, idf: f64, tf: u32, doc_len: u32, avg_doc_len: f64) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * doc_len as f64 / avg_doc_len;
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }
}

/// Reads a JSON Lines corpus of `{"id", "title", "text"}` objects.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>, RetrievalError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| RetrievalError::MalformedCorpus { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| RetrievalError::MalformedCorpus { line: line_no, message: e.to_string() })?;
        docs.push(doc);
    }
    Ok(docs)
}

impl InvertedIndex {
    /// Top-`k` documents for `query`, by descending score then ascending id.
    pub fn search(&self, query: &str, k: usize) -> Vec<RankedHit> {
        self.search_with(query, k, Bm25Params::default())
    }

    pub fn search_with(&self, query: &str, k: usize, params: Bm25Params) -> Vec<RankedHit> {
        if k == 0 || self.doc_count() == 0 {
            return Vec::new();
        }
        let mut terms = tokenize(query);
        // Each distinct query term contributes once.
        let mut seen = std::collections::HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));

        let avgdl = self.avg_doc_length();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(postings) = self.postings(term) else { continue };
            let idf = params.idf(self.doc_count(), postings.len());
            for p in postings {
                let w = params.term_weight(idf, p.tf, self.doc_length(p.doc), avgdl);
                *scores.entry(p.doc).or_insert(0.0) += w;
            }
        }

        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| self.document(a.0).id.cmp(&self.document(b.0).id))
        });
        ranked.truncate(k);
        ranked
            .into_iter()
            .map(|(ord, score)| RankedHit { doc: self.document(ord).clone(), score })
            .collect()
    }
}
