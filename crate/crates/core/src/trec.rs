//! TREC run and qrels files.
//!
//! Run lines are `qid Q0 docid rank score tag`; qrels lines are
//! `qid 0 docid rel` with `rel > 0` meaning relevant.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::corpus::{Corpus, Judgment};
use crate::retrieval::RankedList;

#[derive(Debug, thiserror::Error)]
pub enum TrecError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: `{question_id}` lists `{answer_id}` twice")]
    DuplicateEntry {
        line: usize,
        question_id: String,
        answer_id: String,
    },
    #[error("line {line}: tag `{found}` differs from `{expected}`")]
    MixedTags { line: usize, expected: String, found: String },
}

/// Ranked lists keyed by question id.
pub type Run = BTreeMap<String, RankedList>;

/// Relevant answer ids keyed by question id.
pub type Qrels = BTreeMap<String, BTreeSet<String>>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrecError + '_ {
    move |source| TrecError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses run text. Within a query, entries are ordered by the rank column
/// (ties by descending score, then id) and renumbered from 1. A run must use
/// a single tag.
pub fn parse_run(text: &str) -> Result<(Run, Option<String>), TrecError> {
    let mut rows: BTreeMap<String, Vec<(usize, f64, String)>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut tag: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(TrecError::Malformed {
                line,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let rank: usize = fields[3].parse().map_err(|_| TrecError::Malformed {
            line,
            message: format!("rank `{}` is not a non-negative integer", fields[3]),
        })?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| TrecError::Malformed {
                line,
                message: format!("score `{}` is not a finite number", fields[4]),
            })?;
        match &tag {
            None => tag = Some(fields[5].to_string()),
            Some(t) if t != fields[5] => {
                return Err(TrecError::MixedTags {
                    line,
                    expected: t.clone(),
                    found: fields[5].to_string(),
                })
            }
            Some(_) => {}
        }
        let (qid, aid) = (fields[0].to_string(), fields[2].to_string());
        if !seen.insert((qid.clone(), aid.clone())) {
            return Err(TrecError::DuplicateEntry {
                line,
                question_id: qid,
                answer_id: aid,
            });
        }
        rows.entry(qid).or_default().push((rank, score, aid));
    }
    let run = rows
        .into_iter()
        .map(|(qid, mut entries)| {
            entries.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then_with(|| a.2.cmp(&b.2)));
            let list = RankedList::from_ordered(qid.clone(), entries.into_iter().map(|(_, s, id)| (id, s)).collect());
            (qid, list)
        })
        .collect();
    Ok((run, tag))
}

pub fn read_run(path: &Path) -> Result<(Run, Option<String>), TrecError> {
    parse_run(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Formats lists in the given order with six-decimal scores.
pub fn format_run<'a>(lists: impl IntoIterator<Item = &'a RankedList>, tag: &str) -> String {
    let mut out = String::new();
    for list in lists {
        for e in &list.entries {
            writeln!(out, "{} Q0 {} {} {:.6} {}", list.question_id, e.answer_id, e.rank, e.score, tag).expect("write to String");
        }
    }
    out
}

pub fn write_run<'a>(path: &Path, lists: impl IntoIterator<Item = &'a RankedList>, tag: &str) -> Result<(), TrecError> {
    fs::write(path, format_run(lists, tag)).map_err(io_err(path))
}

pub fn parse_qrels(text: &str) -> Result<Qrels, TrecError> {
    let mut qrels = Qrels::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(TrecError::Malformed {
                line,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let rel: i64 = fields[3].parse().map_err(|_| TrecError::Malformed {
            line,
            message: format!("relevance `{}` is not an integer", fields[3]),
        })?;
        if rel > 0 {
            qrels.entry(fields[0].to_string()).or_default().insert(fields[2].to_string());
        }
    }
    Ok(qrels)
}

pub fn read_qrels(path: &Path) -> Result<Qrels, TrecError> {
    parse_qrels(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn qrels_from_judgments(judgments: &[Judgment]) -> Qrels {
    let mut qrels = Qrels::new();
    for j in judgments {
        qrels.entry(j.question_id.clone()).or_default().insert(j.best_answer_id.clone());
    }
    qrels
}

pub fn qrels_from_corpus(corpus: &Corpus) -> Qrels {
    qrels_from_judgments(&corpus.judgments)
}

/// Keeps only the listed questions.
pub fn restrict_qrels(qrels: &Qrels, question_ids: &[String]) -> Qrels {
    question_ids
        .iter()
        .filter_map(|q| qrels.get(q).map(|r| (q.clone(), r.clone())))
        .collect()
}
