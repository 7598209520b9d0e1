//! Benchmark construction from raw forum data: best-answer adjudication,
//! near-duplicate question collapse and chronological splitting.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Answer, Corpus, Judgment, Question};
use crate::levenshtein;

/// Minimum number of "lawyer agree" votes that makes an answer the best one
/// when the asker selected none.
pub const MIN_LAWYER_AGREES: u32 = 3;

/// Default near-duplicate threshold, in percent.
pub const DEFAULT_DUPLICATE_THRESHOLD: f64 = 90.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DatasetError {
    #[error("split fractions must each lie in (0, 1) and sum to 1, got {train} + {validation} + {test}")]
    InvalidSplitSpec {
        train: Ratio<u64>,
        validation: Ratio<u64>,
        test: Ratio<u64>,
    },
    #[error("{n} questions cannot populate three non-empty splits (sizes would be {train}, {validation}, {test})")]
    TooFewQuestions {
        n: usize,
        train: usize,
        validation: usize,
        test: usize,
    },
    #[error("duplicate question id `{0}`")]
    DuplicateQuestion(String),
    #[error("duplicate threshold must lie in (0, 100], got {0}")]
    InvalidThreshold(f64),
}

/// Picks the best answer of `question`: the asker's helpful pick if present,
/// otherwise the answer with the most lawyer agrees among those with at least
/// [`MIN_LAWYER_AGREES`] (ties go to the smallest answer id).
///
/// Answers belonging to other questions are ignored.
pub fn select_best_answer<'a>(question: &Question, answers: &[&'a Answer]) -> Option<&'a str> {
    let own = answers.iter().filter(|a| a.question_id == question.id);
    let helpful = own
        .clone()
        .filter(|a| a.questioner_helpful)
        .min_by(|x, y| x.id.cmp(&y.id));
    if let Some(a) = helpful {
        return Some(a.id.as_str());
    }
    own.filter(|a| a.lawyer_agree_count >= MIN_LAWYER_AGREES)
        .min_by(|x, y| {
            y.lawyer_agree_count
                .cmp(&x.lawyer_agree_count)
                .then_with(|| x.id.cmp(&y.id))
        })
        .map(|a| a.id.as_str())
}

/// Two questions whose similarity ratio exceeded the threshold; `first < second`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub first: String,
    pub second: String,
    /// Levenshtein ratio in percent.
    pub ratio: f64,
}

/// Histogram over 64 character buckets. The bucketed L1 gap is a lower bound
/// on edit distance.
fn char_histogram(chars: &[char]) -> [u32; 64] {
    let mut h = [0u32; 64];
    for &c in chars {
        h[(c as u32 % 64) as usize] += 1;
    }
    h
}

fn histogram_bound(a: &[u32; 64], b: &[u32; 64]) -> usize {
    let (mut pos, mut neg) = (0u64, 0u64);
    for (x, y) in a.iter().zip(b) {
        if x > y {
            pos += u64::from(x - y);
        } else {
            neg += u64::from(y - x);
        }
    }
    pos.max(neg) as usize
}

/// Largest edit distance for which the ratio still strictly exceeds
/// `threshold`, or `None` when no distance qualifies.
fn max_qualifying_distance(longest: usize, threshold: f64) -> Option<usize> {
    let qualifies = |d: usize| levenshtein::ratio_from_distance(d, longest) > threshold;
    if !qualifies(0) {
        return None;
    }
    let mut d = ((longest as f64) * (1.0 - threshold / 100.0)).floor().max(0.0) as usize;
    d = d.min(longest);
    while d > 0 && !qualifies(d) {
        d -= 1;
    }
    while d < longest && qualifies(d + 1) {
        d += 1;
    }
    Some(d)
}

/// Finds every unordered pair of questions whose `subject + " " + description`
/// Levenshtein ratio strictly exceeds `threshold` (percent).
///
/// Pairs are normalized so `first < second` and returned sorted.
pub fn find_near_duplicates(
    questions: &[Question],
    threshold: f64,
) -> Result<Vec<DuplicatePair>, DatasetError> {
    if !(threshold > 0.0 && threshold <= 100.0) {
        return Err(DatasetError::InvalidThreshold(threshold));
    }
    let texts: Vec<Vec<char>> = questions.iter().map(|q| q.full_text().chars().collect()).collect();
    let hists: Vec<[u32; 64]> = texts.iter().map(|t| char_histogram(t)).collect();

    let mut pairs: Vec<DuplicatePair> = (0..questions.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (texts, hists) = (&texts, &hists);
            (i + 1..questions.len()).filter_map(move |j| {
                let (a, b) = (&texts[i], &texts[j]);
                let longest = a.len().max(b.len());
                let budget = max_qualifying_distance(longest, threshold)?;
                if a.len().abs_diff(b.len()) > budget || histogram_bound(&hists[i], &hists[j]) > budget {
                    return None;
                }
                let d = levenshtein::bounded_distance(a, b, budget)?;
                let (first, second) = ordered(&questions[i].id, &questions[j].id);
                Some(DuplicatePair {
                    first,
                    second,
                    ratio: levenshtein::ratio_from_distance(d, longest),
                })
            })
        })
        .collect();
    pairs.sort_by(|x, y| (&x.first, &x.second).cmp(&(&y.first, &y.second)));
    Ok(pairs)
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Survivor preference: longer text, then earlier timestamp, then smaller id.
fn survivor_order(a: &Question, b: &Question) -> Ordering {
    b.text_len()
        .cmp(&a.text_len())
        .then_with(|| a.timestamp.cmp(&b.timestamp))
        .then_with(|| a.id.cmp(&b.id))
}

/// Maps every question in a duplicate component to its survivor. Questions
/// not named in any pair map to themselves.
pub fn survivor_map(questions: &[Question], pairs: &[DuplicatePair]) -> HashMap<String, String> {
    let index: HashMap<&str, usize> = questions.iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect();
    let mut sets = DisjointSet::new(questions.len());
    for p in pairs {
        if let (Some(&a), Some(&b)) = (index.get(p.first.as_str()), index.get(p.second.as_str())) {
            sets.union(a, b);
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..questions.len() {
        components.entry(sets.find(i)).or_default().push(i);
    }
    let mut map = HashMap::with_capacity(questions.len());
    for members in components.values() {
        let survivor = members
            .iter()
            .copied()
            .min_by(|&a, &b| survivor_order(&questions[a], &questions[b]))
            .expect("non-empty component");
        for &m in members {
            map.insert(questions[m].id.clone(), questions[survivor].id.clone());
        }
    }
    map
}

/// Collapses each connected component of `pairs` onto one surviving question.
///
/// Answers of removed questions move to the survivor. A survivor keeps its own
/// judgment; otherwise it inherits the judgment of the highest-ranked removed
/// member that has one. The same precedence applies to questioner-helpful
/// flags so the merged question keeps at most one.
pub fn collapse_duplicates(corpus: &Corpus, pairs: &[DuplicatePair]) -> Corpus {
    if pairs.is_empty() {
        return corpus.clone();
    }
    let survivors = survivor_map(&corpus.questions, pairs);
    let by_id = corpus.question_map();
    let rank_in_component = |id: &str| -> (bool, usize, i64, String) {
        // Survivor first, then the survivor ordering among the rest.
        let q = by_id[id];
        (
            survivors[id] != id,
            usize::MAX - q.text_len(),
            q.timestamp.timestamp(),
            q.id.clone(),
        )
    };

    let questions: Vec<Question> = corpus
        .questions
        .iter()
        .filter(|q| survivors[&q.id] == q.id)
        .cloned()
        .collect();

    // Which original question's helpful flag the survivor keeps.
    let mut helpful_owner: HashMap<&str, &str> = HashMap::new();
    for a in corpus.answers.iter().filter(|a| a.questioner_helpful) {
        let target = survivors[&a.question_id].as_str();
        let keep = match helpful_owner.get(target) {
            Some(current) => rank_in_component(&a.question_id) < rank_in_component(current),
            None => true,
        };
        if keep {
            helpful_owner.insert(target, a.question_id.as_str());
        }
    }
    let answers: Vec<Answer> = corpus
        .answers
        .iter()
        .map(|a| {
            let target = survivors[&a.question_id].clone();
            let mut moved = a.clone();
            if moved.questioner_helpful && helpful_owner.get(target.as_str()) != Some(&a.question_id.as_str()) {
                moved.questioner_helpful = false;
            }
            moved.question_id = target;
            moved
        })
        .collect();

    let mut chosen: HashMap<&str, &Judgment> = HashMap::new();
    for j in &corpus.judgments {
        let target = survivors[&j.question_id].as_str();
        let keep = match chosen.get(target) {
            Some(current) => rank_in_component(&j.question_id) < rank_in_component(&current.question_id),
            None => true,
        };
        if keep {
            chosen.insert(target, j);
        }
    }
    let judgments: Vec<Judgment> = questions
        .iter()
        .filter_map(|q| {
            chosen.get(q.id.as_str()).map(|j| Judgment {
                question_id: q.id.clone(),
                best_answer_id: j.best_answer_id.clone(),
            })
        })
        .collect();

    Corpus {
        questions,
        answers,
        judgments,
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    train: Ratio<u64>,
    validation: Ratio<u64>,
    test: Ratio<u64>,
}

impl SplitSpec {
    pub fn new(train: Ratio<u64>, validation: Ratio<u64>, test: Ratio<u64>) -> Result<Self, DatasetError> {
        let zero = Ratio::from_integer(0);
        let one = Ratio::from_integer(1);
        let in_range = |r: Ratio<u64>| r > zero && r < one;
        if !(in_range(train) && in_range(validation) && in_range(test)) || train + validation + test != one {
            return Err(DatasetError::InvalidSplitSpec {
                train,
                validation,
                test,
            });
        }
        Ok(SplitSpec {
            train,
            validation,
            test,
        })
    }

    /// Builds a spec from whole percentages.
    pub fn from_percentages(train: u64, validation: u64, test: u64) -> Result<Self, DatasetError> {
        Self::new(Ratio::new(train, 100), Ratio::new(validation, 100), Ratio::new(test, 100))
    }

    pub fn train(&self) -> Ratio<u64> {
        self.train
    }

    pub fn validation(&self) -> Ratio<u64> {
        self.validation
    }

    pub fn test(&self) -> Ratio<u64> {
        self.test
    }

    /// Split sizes for `n` questions: floors for train and validation, the
    /// remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: Ratio<u64>| ((*r.numer() as u128 * n as u128) / *r.denom() as u128) as usize;
        let train = floor(self.train);
        let validation = floor(self.validation);
        (train, validation, n - train - validation)
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::from_percentages(70, 10, 20).expect("valid default split")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    /// Looks up `train`, `validation` or `test`.
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "validation" => Some(&self.validation),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Orders questions by `(timestamp, id)` and cuts them into train, validation
/// and test. Every split must come out non-empty.
pub fn chronological_split(questions: &[Question], spec: &SplitSpec) -> Result<DatasetSplits, DatasetError> {
    let mut seen = HashSet::new();
    for q in questions {
        if !seen.insert(q.id.as_str()) {
            return Err(DatasetError::DuplicateQuestion(q.id.clone()));
        }
    }
    let n = questions.len();
    let (train, validation, test) = spec.sizes(n);
    if train == 0 || validation == 0 || test == 0 {
        return Err(DatasetError::TooFewQuestions {
            n,
            train,
            validation,
            test,
        });
    }
    let mut ordered: Vec<&Question> = questions.iter().collect();
    ordered.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
    let mut ids = ordered.into_iter().map(|q| q.id.clone());
    Ok(DatasetSplits {
        train: ids.by_ref().take(train).collect(),
        validation: ids.by_ref().take(validation).collect(),
        test: ids.collect(),
    })
}

/// Output of [`build_dataset`].
#[derive(Debug, Clone)]
pub struct BuiltDataset {
    /// Deduplicated corpus with one judgment per question that has a best answer.
    pub corpus: Corpus,
    pub duplicate_pairs: Vec<DuplicatePair>,
    pub splits: DatasetSplits,
}

/// Runs the full collection pipeline on raw questions and answers: dedup
/// first, then best-answer selection, then the chronological split. Any
/// judgments already present in `raw` are discarded.
pub fn build_dataset(raw: &Corpus, threshold: f64, spec: &SplitSpec) -> Result<BuiltDataset, DatasetError> {
    let duplicate_pairs = find_near_duplicates(&raw.questions, threshold)?;
    let unjudged = Corpus {
        judgments: Vec::new(),
        ..raw.clone()
    };
    let mut corpus = collapse_duplicates(&unjudged, &duplicate_pairs);
    log::info!(
        "{} near-duplicate pairs, {} questions removed",
        duplicate_pairs.len(),
        raw.questions.len() - corpus.questions.len()
    );

    let grouped = corpus.answers_by_question();
    let judgments: Vec<Judgment> = corpus
        .questions
        .iter()
        .filter_map(|q| {
            let answers = grouped.get(q.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            select_best_answer(q, answers).map(|best| Judgment {
                question_id: q.id.clone(),
                best_answer_id: best.to_string(),
            })
        })
        .collect();
    drop(grouped);
    corpus.judgments = judgments;

    let splits = chronological_split(&corpus.questions, spec)?;
    Ok(BuiltDataset {
        corpus,
        duplicate_pairs,
        splits,
    })
}
