//! Second-stage re-ranking of first-stage candidate lists.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::{Answer, Corpus, Question};
use crate::retrieval::RankedList;
use crate::scorer::{score_batch, RelevanceScorer, ScorePair, ScoreRequest, ScorerError, DEFAULT_BATCH_SIZE};
use crate::structured::{build_input, InputFormat, InputOptions, StructuredError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RerankError {
    #[error("run references unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("run references unknown answer `{0}`")]
    UnknownAnswer(String),
    #[error(transparent)]
    Input(#[from] StructuredError),
    #[error("query `{question_id}`: {source}")]
    Scorer {
        question_id: String,
        #[source]
        source: ScorerError,
    },
    #[error("batch size must be positive")]
    ZeroBatch,
}

impl RerankError {
    /// Transport-level scorer failures, as opposed to bad data or a misbehaving
    /// scorer.
    pub fn is_transport(&self) -> bool {
        matches!(self, RerankError::Scorer { source, .. } if source.is_retryable())
    }
}

/// Id-indexed view of a corpus for pair construction.
pub struct CorpusLookup<'a> {
    questions: HashMap<&'a str, &'a Question>,
    answers: HashMap<&'a str, &'a Answer>,
}

impl<'a> CorpusLookup<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        CorpusLookup {
            questions: corpus.question_map(),
            answers: corpus.answer_map(),
        }
    }

    pub fn question(&self, id: &str) -> Option<&'a Question> {
        self.questions.get(id).copied()
    }

    pub fn answer(&self, id: &str) -> Option<&'a Answer> {
        self.answers.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerankConfig {
    pub input: InputOptions,
    /// Pairs per scorer request, capped by the scorer's own maximum.
    pub batch_size: usize,
}

impl RerankConfig {
    pub fn new(input: InputOptions) -> Self {
        RerankConfig {
            input,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    /// TREC run tag for this configuration.
    pub fn run_tag(&self) -> String {
        let base = match self.input.format {
            InputFormat::Fs => "ce-fs",
            InputFormat::Cat => "ce-cat",
        };
        if self.input.format == InputFormat::Fs && !self.input.ablation.is_empty() {
            let dropped: Vec<String> = self.input.ablation.dropped().map(|f| f.to_string()).collect();
            format!("{base}-no-{}", dropped.join("-"))
        } else {
            base.to_string()
        }
    }
}

/// Builds the scorer pairs for one list, in list order.
pub fn build_pairs(list: &RankedList, lookup: &CorpusLookup<'_>, options: &InputOptions) -> Result<Vec<ScorePair>, RerankError> {
    let question = lookup
        .question(&list.question_id)
        .ok_or_else(|| RerankError::UnknownQuestion(list.question_id.clone()))?;
    list.entries
        .iter()
        .map(|e| {
            let answer = lookup
                .answer(&e.answer_id)
                .ok_or_else(|| RerankError::UnknownAnswer(e.answer_id.clone()))?;
            Ok(ScorePair {
                pair_id: format!("{}#{}", list.question_id, e.answer_id),
                input: build_input(question, &answer.text, options)?,
                format: options.format,
            })
        })
        .collect()
}

/// Re-orders `list` by scorer score, descending; ties keep first-stage order.
/// The candidate set is unchanged and ranks are renumbered from 1.
pub fn rerank(
    list: &RankedList,
    lookup: &CorpusLookup<'_>,
    scorer: &dyn RelevanceScorer,
    config: &RerankConfig,
) -> Result<RankedList, RerankError> {
    if config.batch_size == 0 {
        return Err(RerankError::ZeroBatch);
    }
    if list.is_empty() {
        return Ok(list.clone());
    }
    let pairs = build_pairs(list, lookup, &config.input)?;
    let batch = config.batch_size.min(scorer.max_batch()).max(1);
    let mut scores: HashMap<String, f64> = HashMap::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch) {
        let request = ScoreRequest { pairs: chunk.to_vec() };
        let response = score_batch(&request, scorer).map_err(|source| RerankError::Scorer {
            question_id: list.question_id.clone(),
            source,
        })?;
        scores.extend(response.scores);
    }

    let mut scored: Vec<(usize, &str, f64)> = list
        .entries
        .iter()
        .zip(&pairs)
        .map(|(e, p)| (e.rank, e.answer_id.as_str(), scores[&p.pair_id]))
        .collect();
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    Ok(RankedList::from_ordered(
        list.question_id.clone(),
        scored.into_iter().map(|(_, id, s)| (id.to_string(), s)).collect(),
    ))
}

/// Re-ranks many lists concurrently; output follows input order.
pub fn rerank_all(
    lists: &[RankedList],
    lookup: &CorpusLookup<'_>,
    scorer: &dyn RelevanceScorer,
    config: &RerankConfig,
) -> Result<Vec<RankedList>, RerankError> {
    lists.par_iter().map(|l| rerank(l, lookup, scorer, config)).collect()
}
