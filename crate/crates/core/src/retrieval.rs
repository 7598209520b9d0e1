//! First-stage lexical retrieval: BM25 and Dirichlet-smoothed query
//! likelihood (LMD) over an [`InvertedIndex`].

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Question;
use crate::text_index::{tokenize, DocNo, InvertedIndex, TokenStream};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RetrievalError {
    #[error("unknown answer id `{0}`")]
    UnknownAnswer(String),
    #[error("no query term occurs in the collection")]
    Unscoreable,
    #[error("cutoff k must be positive")]
    ZeroCutoff,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("the index is empty")]
    EmptyIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub answer_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Ranked candidates for one query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub question_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts `(answer_id, score)` pairs by descending score, ascending id, keeps
    /// the first `k` and numbers them from 1.
    pub fn from_scores(question_id: impl Into<String>, mut scored: Vec<(String, f64)>, k: usize) -> Self {
        let cmp = |a: &(String, f64), b: &(String, f64)| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0));
        if scored.len() > k && k > 0 {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored.truncate(k);
        Self::from_ordered(question_id, scored)
    }

    /// Numbers already-ordered entries from 1.
    pub fn from_ordered(question_id: impl Into<String>, ordered: Vec<(String, f64)>) -> Self {
        RankedList {
            question_id: question_id.into(),
            entries: ordered
                .into_iter()
                .enumerate()
                .map(|(i, (answer_id, score))| RankedEntry {
                    answer_id,
                    score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn answer_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.answer_id.as_str())
    }

    /// Checks: ranks consecutive from 1, scores non-increasing, ids distinct.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(format!("entry {i} has rank {}", e.rank));
            }
            if !seen.insert(e.answer_id.as_str()) {
                return Err(format!("answer `{}` listed twice", e.answer_id));
            }
            if i > 0 && e.score > self.entries[i - 1].score {
                return Err(format!("score increases at rank {}", e.rank));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, RetrievalError> {
        if !(k1 >= 0.0 && k1.is_finite()) || !(0.0..=1.0).contains(&b) {
            return Err(RetrievalError::InvalidParams(format!("k1={k1}, b={b}")));
        }
        Ok(Bm25Params { k1, b })
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmdParams {
    /// Dirichlet pseudo-count.
    pub mu: f64,
}

impl LmdParams {
    pub fn new(mu: f64) -> Result<Self, RetrievalError> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(RetrievalError::InvalidParams(format!("mu={mu}")));
        }
        Ok(LmdParams { mu })
    }
}

impl Default for LmdParams {
    fn default() -> Self {
        LmdParams { mu: 1000.0 }
    }
}

/// Non-negative BM25 idf: `ln(1 + (N - df + 0.5) / (df + 0.5))`.
pub fn bm25_idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

impl Bm25Params {
    fn term_weight(&self, idf: f64, tf: f64, doc_len: f64, avgdl: f64) -> f64 {
        let norm = if avgdl > 0.0 {
            1.0 - self.b + self.b * doc_len / avgdl
        } else {
            1.0
        };
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }
}

fn resolve(index: &InvertedIndex, answer_id: &str) -> Result<DocNo, RetrievalError> {
    index
        .doc_no(answer_id)
        .ok_or_else(|| RetrievalError::UnknownAnswer(answer_id.to_string()))
}

/// BM25 score of one document, summing over distinct query terms.
pub fn bm25_score(
    query: &TokenStream,
    answer_id: &str,
    index: &InvertedIndex,
    params: &Bm25Params,
) -> Result<f64, RetrievalError> {
    let doc = resolve(index, answer_id)?;
    let (n, avgdl, len) = (index.doc_count(), index.avg_doc_length(), f64::from(index.doc_length(doc)));
    Ok(query
        .unique()
        .into_iter()
        .map(|t| {
            let tf = index.tf(t, doc);
            if tf == 0 {
                0.0
            } else {
                params.term_weight(bm25_idf(n, index.doc_freq(t)), f64::from(tf), len, avgdl)
            }
        })
        .sum())
}

/// Query terms known to the collection, with multiplicity, in first-occurrence
/// order: `(term, count, collection probability)`.
fn lmd_query_terms<'q>(query: &'q TokenStream, index: &InvertedIndex) -> Vec<(&'q str, f64, f64)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in query.tokens() {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let total = index.collection_length() as f64;
    query
        .unique()
        .into_iter()
        .filter_map(|t| {
            let ctf = index.collection_tf(t);
            (ctf > 0).then(|| (t, counts[t] as f64, ctf as f64 / total))
        })
        .collect()
}

/// Dirichlet-smoothed query log-likelihood of one document. Query terms absent
/// from the collection are skipped; repeated query terms count repeatedly.
pub fn lmd_score(
    query: &TokenStream,
    answer_id: &str,
    index: &InvertedIndex,
    params: &LmdParams,
) -> Result<f64, RetrievalError> {
    let doc = resolve(index, answer_id)?;
    let terms = lmd_query_terms(query, index);
    if terms.is_empty() {
        return Err(RetrievalError::Unscoreable);
    }
    let denom = f64::from(index.doc_length(doc)) + params.mu;
    Ok(terms
        .into_iter()
        .map(|(t, count, p)| count * ((f64::from(index.tf(t, doc)) + params.mu * p) / denom).ln())
        .sum())
}

/// Scores the candidate pool of a query in one pass over the postings.
pub trait CandidateScorer: Sync {
    fn score_candidates(&self, query: &TokenStream, index: &InvertedIndex) -> Vec<(DocNo, f64)>;
}

/// Dense accumulator touched in first-visit order.
struct Accumulator {
    scores: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<DocNo>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Accumulator {
            scores: vec![0.0; n],
            seen: vec![false; n],
            touched: Vec::new(),
        }
    }

    fn add(&mut self, doc: DocNo, v: f64) {
        let i = doc as usize;
        if !self.seen[i] {
            self.seen[i] = true;
            self.touched.push(doc);
        }
        self.scores[i] += v;
    }

    fn into_scores(self) -> Vec<(DocNo, f64)> {
        let scores = self.scores;
        self.touched.into_iter().map(|d| (d, scores[d as usize])).collect()
    }
}

impl CandidateScorer for Bm25Params {
    /// Candidates are documents containing at least one query term.
    fn score_candidates(&self, query: &TokenStream, index: &InvertedIndex) -> Vec<(DocNo, f64)> {
        let (n, avgdl) = (index.doc_count(), index.avg_doc_length());
        let mut acc = Accumulator::new(n);
        for t in query.unique() {
            let postings = index.postings(t);
            if postings.is_empty() {
                continue;
            }
            let idf = bm25_idf(n, postings.len());
            for p in postings {
                let len = f64::from(index.doc_length(p.doc));
                acc.add(p.doc, self.term_weight(idf, f64::from(p.tf), len, avgdl));
            }
        }
        acc.into_scores()
    }
}

impl CandidateScorer for LmdParams {
    /// Candidates are documents containing at least one collection-known query
    /// term. Each candidate's score equals [`lmd_score`]: the all-background
    /// part is added per document and matched terms add their correction.
    fn score_candidates(&self, query: &TokenStream, index: &InvertedIndex) -> Vec<(DocNo, f64)> {
        let terms = lmd_query_terms(query, index);
        let mut matched = Accumulator::new(index.doc_count());
        for &(t, count, p) in &terms {
            let background = self.mu * p;
            for posting in index.postings(t) {
                let with_tf = (f64::from(posting.tf) + background).ln() - background.ln();
                matched.add(posting.doc, count * with_tf);
            }
        }
        let query_len: f64 = terms.iter().map(|&(_, c, _)| c).sum();
        let background: f64 = terms.iter().map(|&(_, c, p)| c * (self.mu * p).ln()).sum();
        matched
            .into_scores()
            .into_iter()
            .map(|(doc, correction)| {
                let len = f64::from(index.doc_length(doc));
                (doc, background + correction - query_len * (len + self.mu).ln())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "scorer")]
pub enum FirstStage {
    Bm25(Bm25Params),
    Lmd(LmdParams),
}

impl FirstStage {
    pub fn name(&self) -> &'static str {
        match self {
            FirstStage::Bm25(_) => "bm25",
            FirstStage::Lmd(_) => "lmd",
        }
    }
}

impl CandidateScorer for FirstStage {
    fn score_candidates(&self, query: &TokenStream, index: &InvertedIndex) -> Vec<(DocNo, f64)> {
        match self {
            FirstStage::Bm25(p) => p.score_candidates(query, index),
            FirstStage::Lmd(p) => p.score_candidates(query, index),
        }
    }
}

/// Which question fields form the first-stage query text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryComposition {
    pub subject: bool,
    pub description: bool,
    pub tags: bool,
}

impl Default for QueryComposition {
    fn default() -> Self {
        QueryComposition {
            subject: true,
            description: true,
            tags: true,
        }
    }
}

impl QueryComposition {
    /// Selected fields joined by single spaces; tags are space-joined.
    pub fn compose(&self, question: &Question) -> String {
        let mut parts: Vec<&str> = Vec::new();
        if self.subject {
            parts.push(&question.subject);
        }
        if self.description {
            parts.push(&question.description);
        }
        let tags = question.tags.join(" ");
        if self.tags {
            parts.push(&tags);
        }
        parts.retain(|p| !p.is_empty());
        parts.join(" ")
    }
}

/// Top-`k` answers for a question; ties go to the smaller answer id. A query
/// with no collection-known term yields an empty list.
pub fn retrieve(
    question: &Question,
    index: &InvertedIndex,
    scorer: &dyn CandidateScorer,
    composition: &QueryComposition,
    k: usize,
) -> Result<RankedList, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroCutoff);
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let query = tokenize(&composition.compose(question));
    let scored: Vec<(String, f64)> = scorer
        .score_candidates(&query, index)
        .into_iter()
        .map(|(doc, s)| (index.doc_id(doc).to_string(), s))
        .collect();
    Ok(RankedList::from_scores(question.id.clone(), scored, k))
}

/// [`retrieve`] for many questions in parallel; output follows input order.
pub fn retrieve_all(
    questions: &[&Question],
    index: &InvertedIndex,
    scorer: &dyn CandidateScorer,
    composition: &QueryComposition,
    k: usize,
) -> Result<Vec<RankedList>, RetrievalError> {
    questions
        .par_iter()
        .map(|q| retrieve(q, index, scorer, composition, k))
        .collect()
}
