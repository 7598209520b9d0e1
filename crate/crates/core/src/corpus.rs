//! Questions, answers and best-answer judgments, plus the on-disk corpus format.
//!
//! A corpus directory holds three files:
//!
//! * `questions.jsonl`: one JSON object per line (`id`, `subject`, `description`,
//!   `tags`, `timestamp`, `asker_id`), timestamps in RFC 3339 UTC.
//! * `answers.jsonl`: one JSON object per line (`id`, `question_id`, `text`,
//!   `lawyer_id`, `questioner_helpful`, `lawyer_agree_count`).
//! * `qrels.txt`: TREC qrels, `<question_id> 0 <answer_id> 1`.
//!
//! Text fields are stored verbatim. Loading validates every record and reports
//! the file and line of the first offending one.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";
pub const QRELS_FILE: &str = "qrels.txt";

/// Tag delimiter used when tags are flattened to text.
pub const TAG_DELIMITER: char = ';';

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}:{line}: malformed record ({field}): {message}")]
    Malformed {
        file: String,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{file}:{line}: duplicate id `{id}`")]
    DuplicateId { file: String, line: usize, id: String },
    #[error("{file}:{line}: `{id}` references unknown question `{question_id}`")]
    DanglingQuestion {
        file: String,
        line: usize,
        id: String,
        question_id: String,
    },
    #[error("{file}:{line}: judgment references unknown answer `{answer_id}`")]
    DanglingAnswer {
        file: String,
        line: usize,
        answer_id: String,
    },
    #[error("{file}:{line}: answer `{answer_id}` does not belong to question `{question_id}`")]
    ForeignAnswer {
        file: String,
        line: usize,
        question_id: String,
        answer_id: String,
    },
    #[error("{file}:{line}: question `{question_id}` already has a judgment")]
    DuplicateJudgment {
        file: String,
        line: usize,
        question_id: String,
    },
    #[error("{file}:{line}: question `{question_id}` has more than one questioner-helpful answer (`{first}`, `{second}`)")]
    MultipleHelpful {
        file: String,
        line: usize,
        question_id: String,
        first: String,
        second: String,
    },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    /// Question title.
    pub subject: String,
    /// Question body.
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub timestamp: DateTime<Utc>,
    pub asker_id: String,
}

impl Question {
    /// Character length of subject plus description.
    pub fn text_len(&self) -> usize {
        self.subject.chars().count() + self.description.chars().count()
    }

    /// Subject and description joined by a single space.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.subject, self.description)
    }

    fn validate(&self) -> Result<(), (&'static str, String)> {
        check_id(&self.id)?;
        if self.subject.trim().is_empty() {
            return Err(("subject", "empty after trimming".into()));
        }
        if self.description.trim().is_empty() {
            return Err(("description", "empty after trimming".into()));
        }
        for tag in &self.tags {
            if tag.trim().is_empty() {
                return Err(("tags", "empty tag".into()));
            }
            if tag.contains(TAG_DELIMITER) {
                return Err(("tags", format!("tag `{tag}` contains `;`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub id: String,
    pub question_id: String,
    pub text: String,
    pub lawyer_id: String,
    /// Selected as most helpful by the asker.
    #[serde(default)]
    pub questioner_helpful: bool,
    /// Number of "lawyer agree" votes.
    #[serde(default)]
    pub lawyer_agree_count: u32,
}

impl Answer {
    fn validate(&self) -> Result<(), (&'static str, String)> {
        check_id(&self.id)?;
        if self.text.trim().is_empty() {
            return Err(("text", "empty after trimming".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Judgment {
    pub question_id: String,
    pub best_answer_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub questions: Vec<Question>,
    pub answers: Vec<Answer>,
    pub judgments: Vec<Judgment>,
}

impl Corpus {
    /// Builds a corpus from in-memory records, applying the same checks as
    /// [`load_corpus`].
    pub fn new(
        questions: Vec<Question>,
        answers: Vec<Answer>,
        judgments: Vec<Judgment>,
    ) -> Result<Self, CorpusError> {
        let corpus = Corpus {
            questions,
            answers,
            judgments,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn question_map(&self) -> HashMap<&str, &Question> {
        self.questions.iter().map(|q| (q.id.as_str(), q)).collect()
    }

    pub fn answer_map(&self) -> HashMap<&str, &Answer> {
        self.answers.iter().map(|a| (a.id.as_str(), a)).collect()
    }

    /// Answers grouped by question id, in corpus order.
    pub fn answers_by_question(&self) -> HashMap<&str, Vec<&Answer>> {
        let mut grouped: HashMap<&str, Vec<&Answer>> = HashMap::new();
        for a in &self.answers {
            grouped.entry(a.question_id.as_str()).or_default().push(a);
        }
        grouped
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.questions.len(), self.answers.len(), self.judgments.len())
    }

    /// Checks every type invariant and referential integrity. Line numbers in
    /// errors are 1-based record positions.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let question_ids = check_questions(self.questions.iter().enumerate().map(|(i, q)| (i + 1, q)))?;
        let answer_owner = check_answers(
            self.answers.iter().enumerate().map(|(i, a)| (i + 1, a)),
            &question_ids,
        )?;
        check_judgments(
            self.judgments.iter().enumerate().map(|(i, j)| (i + 1, j)),
            &question_ids,
            &answer_owner,
        )
    }
}

fn check_id(id: &str) -> Result<(), (&'static str, String)> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(("id", format!("`{id}` is empty or contains whitespace")));
    }
    Ok(())
}

fn check_questions<'a>(
    records: impl Iterator<Item = (usize, &'a Question)>,
) -> Result<HashSet<&'a str>, CorpusError> {
    let mut ids = HashSet::new();
    for (line, q) in records {
        q.validate().map_err(|(field, message)| CorpusError::Malformed {
            file: QUESTIONS_FILE.into(),
            line,
            field: field.into(),
            message,
        })?;
        if !ids.insert(q.id.as_str()) {
            return Err(CorpusError::DuplicateId {
                file: QUESTIONS_FILE.into(),
                line,
                id: q.id.clone(),
            });
        }
    }
    Ok(ids)
}

fn check_answers<'a>(
    records: impl Iterator<Item = (usize, &'a Answer)>,
    question_ids: &HashSet<&str>,
) -> Result<HashMap<&'a str, &'a str>, CorpusError> {
    let mut owner = HashMap::new();
    let mut helpful: HashMap<&str, &str> = HashMap::new();
    for (line, a) in records {
        a.validate().map_err(|(field, message)| CorpusError::Malformed {
            file: ANSWERS_FILE.into(),
            line,
            field: field.into(),
            message,
        })?;
        if owner.insert(a.id.as_str(), a.question_id.as_str()).is_some() {
            return Err(CorpusError::DuplicateId {
                file: ANSWERS_FILE.into(),
                line,
                id: a.id.clone(),
            });
        }
        if !question_ids.contains(a.question_id.as_str()) {
            return Err(CorpusError::DanglingQuestion {
                file: ANSWERS_FILE.into(),
                line,
                id: a.id.clone(),
                question_id: a.question_id.clone(),
            });
        }
        if a.questioner_helpful {
            if let Some(first) = helpful.insert(a.question_id.as_str(), a.id.as_str()) {
                return Err(CorpusError::MultipleHelpful {
                    file: ANSWERS_FILE.into(),
                    line,
                    question_id: a.question_id.clone(),
                    first: first.to_string(),
                    second: a.id.clone(),
                });
            }
        }
    }
    Ok(owner)
}

fn check_judgments<'a>(
    records: impl Iterator<Item = (usize, &'a Judgment)>,
    question_ids: &HashSet<&str>,
    answer_owner: &HashMap<&str, &str>,
) -> Result<(), CorpusError> {
    let mut judged = HashSet::new();
    for (line, j) in records {
        if !question_ids.contains(j.question_id.as_str()) {
            return Err(CorpusError::DanglingQuestion {
                file: QRELS_FILE.into(),
                line,
                id: j.best_answer_id.clone(),
                question_id: j.question_id.clone(),
            });
        }
        match answer_owner.get(j.best_answer_id.as_str()) {
            None => {
                return Err(CorpusError::DanglingAnswer {
                    file: QRELS_FILE.into(),
                    line,
                    answer_id: j.best_answer_id.clone(),
                })
            }
            Some(owner) if *owner != j.question_id => {
                return Err(CorpusError::ForeignAnswer {
                    file: QRELS_FILE.into(),
                    line,
                    question_id: j.question_id.clone(),
                    answer_id: j.best_answer_id.clone(),
                })
            }
            Some(_) => {}
        }
        if !judged.insert(j.question_id.as_str()) {
            return Err(CorpusError::DuplicateJudgment {
                file: QRELS_FILE.into(),
                line,
                question_id: j.question_id.clone(),
            });
        }
    }
    Ok(())
}

/// Parses one JSON record per non-blank line, keeping the 1-based line number.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, file: &str) -> Result<Vec<(usize, T)>, CorpusError> {
    let reader = BufReader::new(File::open(path).map_err(|e| CorpusError::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            file: file.into(),
            line: i + 1,
            field: json_error_field(&e),
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

fn unzip_lines<T>(records: Vec<(usize, T)>) -> (Vec<usize>, Vec<T>) {
    records.into_iter().unzip()
}

fn json_error_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports "missing field `x`" / "unknown field `x`"; surface the name.
    msg.split('`').nth(1).unwrap_or("record").to_string()
}

/// Reads a `questions.jsonl` file without cross-file checks.
pub fn read_questions(path: &Path) -> Result<Vec<Question>, CorpusError> {
    let (lines, questions) = unzip_lines(read_jsonl::<Question>(path, QUESTIONS_FILE)?);
    check_questions(lines.iter().copied().zip(questions.iter()))?;
    Ok(questions)
}

/// Reads an `answers.jsonl` file, checking per-record invariants only.
pub fn read_answers(path: &Path) -> Result<Vec<Answer>, CorpusError> {
    let (lines, answers) = unzip_lines(read_jsonl::<Answer>(path, ANSWERS_FILE)?);
    for (line, a) in lines.iter().zip(&answers) {
        a.validate().map_err(|(field, message)| CorpusError::Malformed {
            file: ANSWERS_FILE.into(),
            line: *line,
            field: field.into(),
            message,
        })?;
    }
    Ok(answers)
}

/// Parses TREC qrels into judgments. Lines with relevance 0 are skipped.
pub fn read_qrels(path: &Path) -> Result<Vec<Judgment>, CorpusError> {
    Ok(read_qrels_lines(path)?.into_iter().map(|(_, j)| j).collect())
}

fn read_qrels_lines(path: &Path) -> Result<Vec<(usize, Judgment)>, CorpusError> {
    let reader = BufReader::new(File::open(path).map_err(|e| CorpusError::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let malformed = |field: &str, message: String| CorpusError::Malformed {
            file: QRELS_FILE.into(),
            line: i + 1,
            field: field.into(),
            message,
        };
        if fields.len() != 4 {
            return Err(malformed("record", format!("expected 4 fields, found {}", fields.len())));
        }
        let rel: i64 = fields[3]
            .parse()
            .map_err(|_| malformed("relevance", format!("not an integer: `{}`", fields[3])))?;
        if rel > 0 {
            out.push((
                i + 1,
                Judgment {
                    question_id: fields[0].to_string(),
                    best_answer_id: fields[2].to_string(),
                },
            ));
        }
    }
    Ok(out)
}

/// Loads and validates a corpus directory. A missing qrels file is treated as
/// an empty judgment set.
pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let questions = read_questions(&dir.join(QUESTIONS_FILE))?;
    let (answer_lines, answers) = unzip_lines(read_jsonl::<Answer>(&dir.join(ANSWERS_FILE), ANSWERS_FILE)?);
    let qrels_path = dir.join(QRELS_FILE);
    let (qrels_lines, judgments) = if qrels_path.exists() {
        unzip_lines(read_qrels_lines(&qrels_path)?)
    } else {
        (Vec::new(), Vec::new())
    };

    {
        let question_ids: HashSet<&str> = questions.iter().map(|q| q.id.as_str()).collect();
        let owner = check_answers(answer_lines.into_iter().zip(answers.iter()), &question_ids)?;
        check_judgments(qrels_lines.into_iter().zip(judgments.iter()), &question_ids, &owner)?;
    }

    Ok(Corpus {
        questions,
        answers,
        judgments,
    })
}

fn write_lines<I, F>(path: &Path, items: I, mut f: F) -> Result<(), CorpusError>
where
    I: IntoIterator,
    F: FnMut(&mut BufWriter<File>, I::Item) -> io::Result<()>,
{
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        f(&mut w, item).map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

fn write_json_line<T: Serialize>(w: &mut impl Write, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

/// Writes judgments as TREC qrels.
pub fn write_qrels(judgments: &[Judgment], path: &Path) -> Result<(), CorpusError> {
    write_lines(path, judgments, |w, j| {
        writeln!(w, "{} 0 {} 1", j.question_id, j.best_answer_id)
    })
}

/// Writes the three corpus files into `dir`, creating it if needed.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    write_lines(&dir.join(QUESTIONS_FILE), &corpus.questions, |w, q| write_json_line(w, q))?;
    write_lines(&dir.join(ANSWERS_FILE), &corpus.answers, |w, a| write_json_line(w, a))?;
    write_qrels(&corpus.judgments, &dir.join(QRELS_FILE))
}
