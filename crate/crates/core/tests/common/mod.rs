//! Independent oracles and random fixture generators shared by the
//! integration tests and the acceptance suite. Nothing here calls the code it
//! checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, TimeZone, Utc};
use cqa_core::corpus::{Answer, Question};
use cqa_core::retrieval::RankedList;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn ts(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_600_000_000 + secs, 0).unwrap()
}

pub fn question(id: &str, subject: &str, description: &str, tags: &[&str], secs: i64) -> Question {
    Question {
        id: id.to_string(),
        subject: subject.to_string(),
        description: description.to_string(),
        tags: tags.iter().map(|t| t.to_string()).collect(),
        timestamp: ts(secs),
        asker_id: format!("asker-{id}"),
    }
}

pub fn answer(id: &str, question_id: &str, text: &str) -> Answer {
    Answer {
        id: id.to_string(),
        question_id: question_id.to_string(),
        text: text.to_string(),
        lawyer_id: "lawyer".to_string(),
        questioner_helpful: false,
        lawyer_agree_count: 0,
    }
}

// ---------------------------------------------------------------- scoring

/// Micro-corpus: documents as token lists over a small vocabulary.
pub struct MicroCorpus {
    pub docs: Vec<(String, Vec<String>)>,
    pub query: Vec<String>,
}

impl MicroCorpus {
    pub fn random(rng: &mut impl Rng) -> Self {
        let vocab_size = rng.random_range(1..=20);
        let vocab: Vec<String> = (0..vocab_size).map(|i| format!("t{i}")).collect();
        let n_docs = rng.random_range(1..=10);
        let docs = (0..n_docs)
            .map(|d| {
                let len = rng.random_range(1..=15);
                let tokens = (0..len).map(|_| vocab[rng.random_range(0..vocab_size)].clone()).collect();
                (format!("d{d}"), tokens)
            })
            .collect();
        let qlen = rng.random_range(1..=6);
        let mut query: Vec<String> = (0..qlen).map(|_| vocab[rng.random_range(0..vocab_size)].clone()).collect();
        if rng.random_bool(0.3) {
            query.push("unseen".to_string());
        }
        MicroCorpus { docs, query }
    }

    pub fn texts(&self) -> Vec<(String, String)> {
        self.docs.iter().map(|(id, t)| (id.clone(), t.join(" "))).collect()
    }

    fn tf(doc: &[String], term: &str) -> f64 {
        doc.iter().filter(|t| *t == term).count() as f64
    }

    /// Direct BM25 over every document.
    pub fn bm25(&self, k1: f64, b: f64) -> Vec<f64> {
        let n = self.docs.len() as f64;
        let avgdl = self.docs.iter().map(|(_, d)| d.len() as f64).sum::<f64>() / n;
        let mut terms: Vec<&String> = Vec::new();
        for t in &self.query {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        self.docs
            .iter()
            .map(|(_, doc)| {
                let mut score = 0.0;
                for term in &terms {
                    let df = self.docs.iter().filter(|(_, d)| d.contains(term)).count() as f64;
                    let tf = Self::tf(doc, term);
                    if tf == 0.0 {
                        continue;
                    }
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    let dl = doc.len() as f64;
                    score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
                }
                score
            })
            .collect()
    }

    /// Direct Dirichlet query likelihood of every document, with whether the
    /// document contains a collection-known query term. `None` when no query
    /// term occurs in the collection.
    pub fn lmd(&self, mu: f64) -> Option<Vec<(f64, bool)>> {
        let total: f64 = self.docs.iter().map(|(_, d)| d.len() as f64).sum();
        let known = |t: &String| self.docs.iter().any(|(_, d)| d.contains(t));
        if !self.query.iter().any(known) {
            return None;
        }
        Some(
            self.docs
                .iter()
                .map(|(_, doc)| {
                    let mut score = 0.0;
                    let mut matched = false;
                    for term in &self.query {
                        let cf: f64 = self.docs.iter().map(|(_, d)| Self::tf(d, term)).sum();
                        if cf == 0.0 {
                            continue;
                        }
                        let tf = Self::tf(doc, term);
                        matched |= tf > 0.0;
                        score += ((tf + mu * cf / total) / (doc.len() as f64 + mu)).ln();
                    }
                    (score, matched)
                })
                .collect(),
        )
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// ---------------------------------------------------------------- metrics

/// Run as ordered answer-id lists plus qrels.
pub struct MetricFixture {
    pub run: BTreeMap<String, Vec<String>>,
    pub qrels: BTreeMap<String, BTreeSet<String>>,
}

impl MetricFixture {
    /// Up to 50 judged queries, lists of up to 100 documents. Some judged
    /// queries are missing from the run and some run queries are unjudged.
    pub fn random(rng: &mut impl Rng, single_relevant: bool) -> Self {
        let n_queries = rng.random_range(1..=50);
        let mut run = BTreeMap::new();
        let mut qrels = BTreeMap::new();
        for q in 0..n_queries {
            let qid = format!("q{q}");
            let pool = rng.random_range(1..=100);
            let mut docs: Vec<String> = (0..pool).map(|d| format!("d{d}")).collect();
            docs.shuffle(rng);
            let n_rel = if single_relevant { 1 } else { rng.random_range(1..=4) };
            let relevant: BTreeSet<String> = (0..n_rel).map(|_| format!("d{}", rng.random_range(0..120))).collect();
            let len = rng.random_range(0..=docs.len());
            docs.truncate(len);
            if rng.random_bool(0.9) {
                run.insert(qid.clone(), docs);
            }
            if rng.random_bool(0.95) || run.is_empty() {
                qrels.insert(qid, relevant);
            }
        }
        if qrels.is_empty() {
            qrels.insert("q0".into(), ["d0".to_string()].into());
        }
        MetricFixture { run, qrels }
    }

    pub fn ranked(&self) -> BTreeMap<String, RankedList> {
        self.run
            .iter()
            .map(|(q, docs)| {
                let scored = docs.iter().enumerate().map(|(i, d)| (d.clone(), (docs.len() - i) as f64)).collect();
                (q.clone(), RankedList::from_ordered(q.clone(), scored))
            })
            .collect()
    }
}

/// Average precision by explicit prefix enumeration.
pub fn oracle_ap(docs: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let depth = k.min(docs.len());
    let mut total = 0.0;
    for j in 1..=depth {
        if relevant.contains(&docs[j - 1]) {
            let prefix = &docs[..j];
            let hits = prefix.iter().filter(|d| relevant.contains(*d)).count();
            total += hits as f64 / j as f64;
        }
    }
    total / relevant.len() as f64
}

pub fn oracle_recall(docs: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let prefix = &docs[..k.min(docs.len())];
    relevant.iter().filter(|r| prefix.contains(r)).count() as f64 / relevant.len() as f64
}

pub fn oracle_rr(docs: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    for (i, d) in docs.iter().take(k).enumerate() {
        if relevant.contains(d) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

/// Mean of `metric` over judged queries, absent queries scoring 0.
pub fn oracle_mean(fixture: &MetricFixture, metric: impl Fn(&[String], &BTreeSet<String>) -> f64) -> f64 {
    let empty = Vec::new();
    let values: Vec<f64> = fixture
        .qrels
        .iter()
        .map(|(q, rel)| metric(fixture.run.get(q).unwrap_or(&empty), rel))
        .collect();
    values.iter().sum::<f64>() / values.len() as f64
}

// ---------------------------------------------------------------- t-test

/// Closed-form paired t statistic.
pub fn oracle_t(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let ss = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    mean / (ss / (n - 1.0) / n).sqrt()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// Two-sided p-value of Student's t with `df` degrees of freedom, by
/// quadrature. Substituting `t = sqrt(df) tan(theta)` turns the tail of the
/// density into an integral of `cos(theta)^(df - 1)`.
pub fn oracle_p(t: f64, df: f64) -> f64 {
    let theta0 = (t.abs() / df.sqrt()).atan();
    let f = |x: f64| x.cos().powf(df - 1.0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    simpson(f, theta0, half_pi, 200_000) / simpson(f, 0.0, half_pi, 200_000)
}

// ---------------------------------------------------------------- dedup

pub fn dp_edit_distance(a: &[char], b: &[char]) -> usize {
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        m[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = m[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            m[i][j] = sub.min(m[i - 1][j] + 1).min(m[i][j - 1] + 1);
        }
    }
    m[a.len()][b.len()]
}

pub fn oracle_ratio(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 100.0;
    }
    100.0 * (1.0 - dp_edit_distance(&a, &b) as f64 / longest as f64)
}

/// Connected components of the "ratio exceeds threshold" graph, each sorted,
/// components ordered by first member.
pub fn oracle_components(questions: &[Question], threshold: f64) -> Vec<Vec<String>> {
    let n = questions.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    let texts: Vec<String> = questions.iter().map(|q| format!("{} {}", q.subject, q.description)).collect();
    for i in 0..n {
        for j in i + 1..n {
            if oracle_ratio(&texts[i], &texts[j]) > threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut groups: HashMap<usize, Vec<String>> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(questions[i].id.clone());
    }
    let mut out: Vec<Vec<String>> = groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    out.sort();
    out
}

fn substitute(text: &str, positions: std::ops::Range<usize>, with: char) -> String {
    text.chars()
        .enumerate()
        .map(|(i, c)| if positions.contains(&i) { with } else { c })
        .collect()
}

/// Six questions: a three-question near-duplicate chain (neighbours 91%
/// similar, ends 82%), an isolated pair at exactly 92%, and one unrelated
/// question.
pub fn dedup_fixture() -> Vec<Question> {
    let base = "Can my landlord keep the whole security deposit after I moved out of the apartment in good shap";
    let step1 = substitute(base, 0..9, 'X');
    let step2 = substitute(&step1, 50..59, 'Z');
    vec![
        question("c1", base, "Rent.", &["landlord"], 10),
        question("c2", &step1, "Rent.", &["landlord"], 20),
        question("c3", &step2, "Rent.", &["landlord"], 30),
        question("p1", "Employer refuses to pay overtime hours worked", "Wage", &["employment"], 40),
        question("p2", "Employer refuzes to pau overtine hours workes", "Wage", &["employment"], 50),
        question("u1", "How do I contest a speeding ticket in another state", "Traffic.", &["traffic"], 60),
    ]
}
