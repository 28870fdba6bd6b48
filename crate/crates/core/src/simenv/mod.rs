//! Offline document environment backing the `search` and `visit` tools.

mod backend;
mod index;
mod visit;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{sim_gateway, SearchBackend, VisitBackend};
pub use index::{bm25_score, tokenize, Index, SearchHit, BM25_B, BM25_K1, SEARCH_TOP_K, SNIPPET_CHARS};
pub use visit::{goal_extract, split_sentences, VISIT_TOP_K};

pub const URL_PREFIX: &str = "sim://doc/";

#[derive(Debug, Error)]
pub enum SimEnvError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate document id '{0}'")]
    DuplicateId(String),
    #[error("document '{from}' links to unknown id '{to}'")]
    DanglingLink { from: String, to: String },
    #[error("document with empty id")]
    EmptyId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub links: Vec<String>,
}

impl Document {
    pub fn url(&self) -> String {
        url_for(&self.id)
    }
}

pub fn url_for(id: &str) -> String {
    format!("{URL_PREFIX}{id}")
}

pub fn id_from_url(url: &str) -> Option<&str> {
    url.strip_prefix(URL_PREFIX).filter(|id| !id.is_empty())
}

/// Checks id uniqueness and link integrity.
pub fn validate_corpus(docs: &[Document]) -> Result<(), SimEnvError> {
    let mut seen = HashSet::new();
    for d in docs {
        if d.id.is_empty() {
            return Err(SimEnvError::EmptyId);
        }
        if !seen.insert(d.id.as_str()) {
            return Err(SimEnvError::DuplicateId(d.id.clone()));
        }
    }
    for d in docs {
        if let Some(to) = d.links.iter().find(|l| !seen.contains(l.as_str())) {
            return Err(SimEnvError::DanglingLink {
                from: d.id.clone(),
                to: to.clone(),
            });
        }
    }
    Ok(())
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<Document>, SimEnvError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(&line).map_err(|e| SimEnvError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>, SimEnvError> {
    read_corpus(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_corpus(mut writer: impl Write, docs: &[Document]) -> Result<(), SimEnvError> {
    for d in docs {
        serde_json::to_writer(&mut writer, d).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// A validated corpus with its index. Immutable once built.
#[derive(Debug, Clone)]
pub struct SimEnv {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    index: Index,
}

impl SimEnv {
    pub fn new(mut docs: Vec<Document>) -> Result<Self, SimEnvError> {
        validate_corpus(&docs)?;
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let index = Index::build(&docs)?;
        let by_id = docs.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        Ok(SimEnv { docs, by_id, index })
    }

    pub fn load(path: &Path) -> Result<Self, SimEnvError> {
        Self::new(load_corpus(path)?)
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn resolve(&self, url: &str) -> Option<&Document> {
        id_from_url(url).and_then(|id| self.get(id))
    }

    /// Top hits for one query.
    pub fn search(&self, query: &str) -> Vec<SearchHit> {
        self.index
            .rank(query)
            .into_iter()
            .map(|(i, _)| SearchHit::for_document(&self.docs[i], query))
            .collect()
    }

    /// Goal-conditioned extract per url; unknown urls yield an error entry.
    pub fn visit(&self, urls: &[String], goal: &str) -> Vec<Result<Vec<String>, String>> {
        urls.iter()
            .map(|u| match self.resolve(u) {
                Some(d) => Ok(goal_extract(&d.text, goal, VISIT_TOP_K)),
                None => Err(format!("unknown url '{u}'")),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn doc(id: &str, text: &str, links: &[&str]) -> Document {
        Document {
            id: id.into(),
            title: format!("Doc {id}"),
            text: text.into(),
            links: links.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn rejects_duplicates_and_dangling_links() {
        let dup = vec![doc("a", "x", &[]), doc("a", "y", &[])];
        assert!(matches!(SimEnv::new(dup), Err(SimEnvError::DuplicateId(_))));
        let dangling = vec![doc("a", "x", &["b"])];
        assert!(matches!(SimEnv::new(dangling), Err(SimEnvError::DanglingLink { .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let docs = vec![doc("a", "Alpha beta.", &["b"]), doc("b", "Gamma.", &[])];
        let mut buf = Vec::new();
        write_corpus(&mut buf, &docs).unwrap();
        assert_eq!(read_corpus(&buf[..]).unwrap(), docs);
        assert!(matches!(
            read_corpus(&b"{\"id\": 1}\n"[..]),
            Err(SimEnvError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn urls() {
        let env = SimEnv::new(vec![doc("e1", "x", &[])]).unwrap();
        assert_eq!(env.docs()[0].url(), "sim://doc/e1");
        assert!(env.resolve("sim://doc/e1").is_some());
        assert!(env.resolve("sim://doc/").is_none());
        assert!(env.resolve("http://e1").is_none());
        let v = env.visit(&["sim://doc/e1".into(), "sim://doc/zz".into()], "x");
        assert!(v[0].is_ok() && v[1].is_err());
    }
}
