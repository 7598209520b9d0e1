//! Tokenization and an in-memory inverted index over answer texts.
//!
//! The index keeps exactly the statistics lexical scorers need: postings with
//! term frequencies, per-document lengths, collection length and collection
//! term frequencies. Documents are numbered densely in insertion order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Answer;

/// Version tag written into serialized indexes.
pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Dense document number within one index.
pub type DocNo = u32;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate answer id `{0}`")]
    DuplicateDocument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: invalid index file: {message}")]
    Format { path: PathBuf, message: String },
}

/// Normalized terms of a text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenStream(Vec<String>);

impl TokenStream {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distinct terms in first-occurrence order.
    pub fn unique(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.0.iter().map(String::as_str).filter(|t| seen.insert(*t)).collect()
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl From<Vec<String>> for TokenStream {
    fn from(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        TokenStream(tokens)
    }
}

/// Lowercased alphanumeric runs. No stemming, no stopwords.
///
/// Lowercasing can expand a char into several (`İ` becomes `i` plus a
/// combining dot); only the alphanumeric parts are kept so that re-tokenizing
/// joined output is a fixed point.
pub fn tokenize(text: &str) -> TokenStream {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase().filter(|l| l.is_alphanumeric()));
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenStream(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: DocNo,
    pub tf: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermEntry {
    /// Sorted by `doc`.
    pub postings: Vec<Posting>,
    pub collection_tf: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    format_version: u32,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    collection_length: u64,
    terms: BTreeMap<String, TermEntry>,
    #[serde(skip)]
    lookup: HashMap<String, DocNo>,
}

impl InvertedIndex {
    /// Indexes answer texts. Tokenization runs in parallel; postings are merged
    /// in document order so the result is identical across runs.
    pub fn build(answers: &[Answer]) -> Result<Self, IndexError> {
        let docs: Vec<(&str, &str)> = answers.iter().map(|a| (a.id.as_str(), a.text.as_str())).collect();
        Self::build_from_texts(&docs)
    }

    /// Indexes `(id, text)` pairs.
    pub fn build_from_texts(docs: &[(&str, &str)]) -> Result<Self, IndexError> {
        let mut lookup = HashMap::with_capacity(docs.len());
        for (i, (id, _)) in docs.iter().enumerate() {
            if lookup.insert(id.to_string(), i as DocNo).is_some() {
                return Err(IndexError::DuplicateDocument(id.to_string()));
            }
        }
        let counted: Vec<(u32, BTreeMap<String, u32>)> = docs
            .par_iter()
            .map(|(_, text)| {
                let tokens = tokenize(text);
                let mut tf = BTreeMap::new();
                for t in tokens.0.iter() {
                    *tf.entry(t.clone()).or_insert(0u32) += 1;
                }
                (tokens.len() as u32, tf)
            })
            .collect();

        let mut terms: BTreeMap<String, TermEntry> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut collection_length = 0u64;
        for (doc, (len, tfs)) in counted.into_iter().enumerate() {
            doc_lengths.push(len);
            collection_length += u64::from(len);
            for (term, tf) in tfs {
                let entry = terms.entry(term).or_default();
                entry.postings.push(Posting { doc: doc as DocNo, tf });
                entry.collection_tf += u64::from(tf);
            }
        }
        Ok(InvertedIndex {
            format_version: INDEX_FORMAT_VERSION,
            doc_ids: docs.iter().map(|(id, _)| id.to_string()).collect(),
            doc_lengths,
            collection_length,
            terms,
            lookup,
        })
    }

    /// Number of indexed documents (N).
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn collection_length(&self) -> u64 {
        self.collection_length
    }

    pub fn avg_doc_length(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.collection_length as f64 / self.doc_ids.len() as f64
        }
    }

    pub fn doc_id(&self, doc: DocNo) -> &str {
        &self.doc_ids[doc as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_no(&self, id: &str) -> Option<DocNo> {
        self.lookup.get(id).copied()
    }

    pub fn doc_length(&self, doc: DocNo) -> u32 {
        self.doc_lengths[doc as usize]
    }

    pub fn term(&self, term: &str) -> Option<&TermEntry> {
        self.terms.get(term)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &TermEntry)> {
        self.terms.iter().map(|(t, e)| (t.as_str(), e))
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.terms.get(term).map(|e| e.postings.as_slice()).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn collection_tf(&self, term: &str) -> u64 {
        self.terms.get(term).map_or(0, |e| e.collection_tf)
    }

    /// Frequency of `term` in `doc` (binary search over the postings).
    pub fn tf(&self, term: &str, doc: DocNo) -> u32 {
        let postings = self.postings(term);
        postings
            .binary_search_by_key(&doc, |p| p.doc)
            .map_or(0, |i| postings[i].tf)
    }

    /// Writes the index as JSON (see `docs/index-format.md`).
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let io_err = |source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        serde_json::to_writer(&mut w, self).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let file = File::open(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let format = |message: String| IndexError::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut index: InvertedIndex =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| format(e.to_string()))?;
        if index.format_version != INDEX_FORMAT_VERSION {
            return Err(format(format!(
                "unsupported format version {} (expected {INDEX_FORMAT_VERSION})",
                index.format_version
            )));
        }
        if index.doc_ids.len() != index.doc_lengths.len() {
            return Err(format("doc_ids and doc_lengths differ in length".into()));
        }
        index.lookup = HashMap::with_capacity(index.doc_ids.len());
        for (i, id) in index.doc_ids.iter().enumerate() {
            if index.lookup.insert(id.clone(), i as DocNo).is_some() {
                return Err(format(format!("duplicate document `{id}`")));
            }
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).0
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(toks("Chapter 7 Bankruptcy?"), ["chapter", "7", "bankruptcy"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("re-file my case"), ["re", "file", "my", "case"]);
        assert_eq!(toks("Ärger, \u{201c}Quoted\u{201d} §523(a)(2)"), ["ärger", "quoted", "523", "a", "2"]);
    }

    #[test]
    fn hand_counted_index() {
        let idx = InvertedIndex::build_from_texts(&[("d1", "a b a")]).unwrap();
        assert_eq!(idx.postings("a"), [Posting { doc: 0, tf: 2 }]);
        assert_eq!(idx.postings("b"), [Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.collection_length(), 3);
        assert_eq!(idx.tf("a", 0), 2);
        assert_eq!(idx.tf("zzz", 0), 0);
    }

    #[test]
    fn empty_index() {
        let idx = InvertedIndex::build_from_texts(&[]).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert_eq!(idx.collection_length(), 0);
        assert!(idx.is_empty());
    }

    #[test]
    fn duplicate_documents_rejected() {
        let err = InvertedIndex::build_from_texts(&[("d", "x"), ("d", "y")]).unwrap_err();
        assert!(matches!(err, IndexError::DuplicateDocument(id) if id == "d"));
    }

    #[test]
    fn save_load_round_trip() {
        let idx = InvertedIndex::build_from_texts(&[("d1", "law law court"), ("d2", "court of appeals")]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        let back = InvertedIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.doc_no("d2"), Some(1));
        let bytes = std::fs::read(&path).unwrap();
        idx.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn load_rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        let mut idx = InvertedIndex::build_from_texts(&[("d1", "x")]).unwrap();
        idx.format_version = 99;
        idx.save(&path).unwrap();
        assert!(matches!(InvertedIndex::load(&path), Err(IndexError::Format { .. })));
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(text in "\\PC{0,60}") {
            let once = tokenize(&text);
            prop_assert_eq!(tokenize(&once.join()), once);
        }

        #[test]
        fn building_twice_is_identical(texts in proptest::collection::vec("[a-d ]{0,12}", 0..12)) {
            let ids: Vec<String> = (0..texts.len()).map(|i| format!("d{i}")).collect();
            let docs: Vec<(&str, &str)> = ids.iter().map(String::as_str).zip(texts.iter().map(String::as_str)).collect();
            prop_assert_eq!(InvertedIndex::build_from_texts(&docs).unwrap(), InvertedIndex::build_from_texts(&docs).unwrap());
        }
    }
}
