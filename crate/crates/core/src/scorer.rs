//! Second-stage relevance scorers.
//!
//! A [`RelevanceScorer`] maps a batch of rendered question/answer pairs to one
//! real score per pair. The neural cross-encoder runs out of process and is
//! reached through [`crate::protocol::HttpScorer`]; the deterministic scorers
//! here stand in for it in tests and offline runs.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::structured::{InputFormat, Marker, StructuredInput};
use crate::text_index::tokenize;

/// Default number of pairs per request.
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("scorer unreachable: {0}")]
    Transport(String),
    #[error("scorer timed out: {0}")]
    Timeout(String),
    #[error("scorer rejected the request (status {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("scorer failed (status {status}): {message}")]
    ServerError { status: u16, message: String },
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("scorer returned no score for pair `{0}`")]
    MissingScore(String),
    #[error("scorer returned a score for unknown pair `{0}`")]
    UnexpectedScore(String),
    #[error("scorer returned a non-finite score for pair `{0}`")]
    NonFiniteScore(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch of {size} pairs exceeds the maximum of {max}")]
    BatchTooLarge { size: usize, max: usize },
    #[error("pair id `{0}` appears twice in one batch")]
    DuplicatePairId(String),
}

impl ScorerError {
    /// Failures worth retrying: the request may succeed unchanged later.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ScorerError::Transport(_) | ScorerError::Timeout(_) | ScorerError::ServerError { .. }
        )
    }
}

/// One question/answer pair to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub pair_id: String,
    pub input: StructuredInput,
    pub format: InputFormat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub pairs: Vec<ScorePair>,
}

impl ScoreRequest {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Non-empty, at most `max` pairs, distinct pair ids.
    pub fn check(&self, max: usize) -> Result<(), ScorerError> {
        if self.pairs.is_empty() {
            return Err(ScorerError::EmptyBatch);
        }
        if self.pairs.len() > max {
            return Err(ScorerError::BatchTooLarge {
                size: self.pairs.len(),
                max,
            });
        }
        let mut seen = HashSet::with_capacity(self.pairs.len());
        for p in &self.pairs {
            if !seen.insert(p.pair_id.as_str()) {
                return Err(ScorerError::DuplicatePairId(p.pair_id.clone()));
            }
        }
        Ok(())
    }
}

/// Scores keyed by pair id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: HashMap<String, f64>,
}

pub trait RelevanceScorer: Send + Sync {
    /// Scores one batch. Implementations may assume [`ScoreRequest::check`]
    /// passed; callers go through [`score_batch`].
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError>;

    /// Largest batch the scorer accepts.
    fn max_batch(&self) -> usize {
        DEFAULT_BATCH_SIZE
    }
}

impl<S: RelevanceScorer + ?Sized> RelevanceScorer for &S {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        (**self).score(request)
    }

    fn max_batch(&self) -> usize {
        (**self).max_batch()
    }
}

impl<S: RelevanceScorer + ?Sized> RelevanceScorer for std::sync::Arc<S> {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        (**self).score(request)
    }

    fn max_batch(&self) -> usize {
        (**self).max_batch()
    }
}

/// Validates the batch, calls the scorer and checks that exactly one finite
/// score came back per pair. A partial response fails the whole batch.
pub fn score_batch(request: &ScoreRequest, scorer: &dyn RelevanceScorer) -> Result<ScoreResponse, ScorerError> {
    request.check(scorer.max_batch())?;
    let response = scorer.score(request)?;
    let expected: HashSet<&str> = request.pairs.iter().map(|p| p.pair_id.as_str()).collect();
    if let Some(extra) = response.scores.keys().find(|k| !expected.contains(k.as_str())) {
        return Err(ScorerError::UnexpectedScore(extra.clone()));
    }
    for p in &request.pairs {
        match response.scores.get(&p.pair_id) {
            None => return Err(ScorerError::MissingScore(p.pair_id.clone())),
            Some(s) if !s.is_finite() => return Err(ScorerError::NonFiniteScore(p.pair_id.clone())),
            Some(_) => {}
        }
    }
    Ok(response)
}

/// Scores every pair with a pure function of the pair.
pub struct FnScorer<F> {
    f: F,
    max_batch: usize,
}

impl<F: Fn(&ScorePair) -> f64 + Send + Sync> FnScorer<F> {
    pub fn new(f: F) -> Self {
        FnScorer {
            f,
            max_batch: DEFAULT_BATCH_SIZE,
        }
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch;
        self
    }
}

impl<F: Fn(&ScorePair) -> f64 + Send + Sync> RelevanceScorer for FnScorer<F> {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        request.check(self.max_batch)?;
        Ok(ScoreResponse {
            scores: request.pairs.iter().map(|p| (p.pair_id.clone(), (self.f)(p))).collect(),
        })
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }
}

/// Answer length in characters.
pub fn answer_length(pair: &ScorePair) -> f64 {
    pair.input.answer_text.chars().count() as f64
}

/// Number of distinct tag-segment terms that occur in the answer. Zero when
/// the input carries no `[T]` segment.
pub fn tag_overlap(pair: &ScorePair) -> f64 {
    let answer: HashSet<String> = tokenize(&pair.input.answer_text).tokens().iter().cloned().collect();
    let tags: HashSet<String> = pair
        .input
        .query_segments
        .iter()
        .filter(|s| s.marker == Some(Marker::T))
        .flat_map(|s| tokenize(&s.text).tokens().to_vec())
        .collect();
    tags.intersection(&answer).count() as f64
}

/// Number of distinct query terms (all segments) that occur in the answer.
pub fn term_overlap(pair: &ScorePair) -> f64 {
    let answer: HashSet<String> = tokenize(&pair.input.answer_text).tokens().iter().cloned().collect();
    let query: HashSet<String> = pair
        .input
        .query_segments
        .iter()
        .flat_map(|s| tokenize(&s.text).tokens().to_vec())
        .collect();
    query.intersection(&answer).count() as f64
}

/// Built-in deterministic scorers, selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockKind {
    /// Answer length in characters.
    AnswerLength,
    /// Tag terms found in the answer.
    TagOverlap,
    /// Query terms found in the answer.
    TermOverlap,
    /// Always zero.
    Constant,
}

impl std::str::FromStr for MockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "answer-length" => Ok(MockKind::AnswerLength),
            "tag-overlap" => Ok(MockKind::TagOverlap),
            "term-overlap" => Ok(MockKind::TermOverlap),
            "constant" => Ok(MockKind::Constant),
            _ => Err(format!(
                "unknown mock scorer `{s}` (expected answer-length, tag-overlap, term-overlap or constant)"
            )),
        }
    }
}

pub fn mock_scorer(kind: MockKind, max_batch: usize) -> Box<dyn RelevanceScorer> {
    match kind {
        MockKind::AnswerLength => Box::new(FnScorer::new(answer_length).with_max_batch(max_batch)),
        MockKind::TagOverlap => Box::new(FnScorer::new(tag_overlap).with_max_batch(max_batch)),
        MockKind::TermOverlap => Box::new(FnScorer::new(term_overlap).with_max_batch(max_batch)),
        MockKind::Constant => Box::new(FnScorer::new(|_: &ScorePair| 0.0).with_max_batch(max_batch)),
    }
}
