use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Document, SimEnvError};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const SEARCH_TOP_K: usize = 10;
pub const SNIPPET_CHARS: usize = 160;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text).into_iter().map(|(_, t)| t).collect()
}

/// Tokens with the char offset where each starts.
fn token_spans(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (ci, c) in text.chars().enumerate() {
        if c.is_alphanumeric() {
            if current.is_empty() {
                start = ci;
            }
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            out.push((start, std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        out.push((start, current));
    }
    out
}

fn indexed_tokens(doc: &Document) -> Vec<String> {
    let mut t = tokenize(&doc.title);
    t.extend(tokenize(&doc.text));
    t
}

/// One BM25 term contribution with Lucene-style idf.
pub fn bm25_score(tf: f64, df: f64, n_docs: f64, doc_len: f64, avg_len: f64) -> f64 {
    let idf = (1.0 + (n_docs - df + 0.5) / (df + 0.5)).ln();
    let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * doc_len / avg_len);
    idf * tf * (BM25_K1 + 1.0) / (tf + norm)
}

/// Inverted index over title and text. Documents are numbered in ascending
/// id order, so posting order and tie-breaking both follow ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    total_len: u64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Index {
    pub fn build(docs: &[Document]) -> Result<Self, SimEnvError> {
        let mut order: Vec<&Document> = docs.iter().collect();
        order.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = order.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(SimEnvError::DuplicateId(w[0].id.clone()));
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(order.len());
        for (i, doc) in order.iter().enumerate() {
            let tokens = indexed_tokens(doc);
            doc_lens.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push((i as u32, n));
            }
        }
        Ok(Index {
            doc_ids: order.iter().map(|d| d.id.clone()).collect(),
            total_len: doc_lens.iter().map(|&l| l as u64).sum(),
            doc_lens,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_id(&self, i: usize) -> &str {
        &self.doc_ids[i]
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("index serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    /// Up to [`SEARCH_TOP_K`] (doc position, score) pairs, best first, ties by id.
    pub fn rank(&self, query: &str) -> Vec<(usize, f64)> {
        if self.is_empty() {
            return Vec::new();
        }
        let n = self.len() as f64;
        let avg = (self.total_len as f64 / n).max(f64::MIN_POSITIVE);
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        for term in &terms {
            let plist = self.postings(term);
            let df = plist.len() as f64;
            for &(d, tf) in plist {
                let s = bm25_score(tf as f64, df, n, self.doc_lens[d as usize] as f64, avg);
                *scores.entry(d as usize).or_default() += s;
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(SEARCH_TOP_K);
        ranked
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

impl SearchHit {
    pub fn for_document(doc: &Document, query: &str) -> Self {
        SearchHit {
            title: doc.title.clone(),
            snippet: snippet(&doc.text, query),
            url: doc.url(),
        }
    }
}

/// Window of [`SNIPPET_CHARS`] chars centred on the earliest query-term
/// occurrence in `text`, shifted to stay inside the text.
fn snippet(text: &str, query: &str) -> String {
    let n = text.chars().count();
    if n <= SNIPPET_CHARS {
        return text.to_string();
    }
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let start = token_spans(text)
        .into_iter()
        .find(|(_, t)| terms.contains(t))
        .map_or(0, |(pos, t)| {
            let centre = pos + t.chars().count() / 2;
            centre.saturating_sub(SNIPPET_CHARS / 2).min(n - SNIPPET_CHARS)
        });
    text.chars().skip(start).take(SNIPPET_CHARS).collect()
}
