//! Rank metrics over runs and paired significance testing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::retrieval::RankedList;
use crate::trec::{Qrels, Run};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("cutoff k must be positive")]
    ZeroCutoff,
    #[error("question `{0}` has no relevant answers")]
    NoRelevant(String),
    #[error("qrels contain no judged questions")]
    EmptyQrels,
    #[error("run lists `{answer_id}` twice for `{question_id}`")]
    DuplicateEntry { question_id: String, answer_id: String },
    #[error("unknown metric `{0}` (expected e.g. MAP@1000, R@10, MRR@10)")]
    UnknownMetric(String),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("paired samples cover different questions")]
    MismatchedQueries,
    #[error("a paired t-test needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid correction: {0}")]
    InvalidCorrection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    Map,
    Recall,
    Mrr,
}

/// A metric at a cutoff, written `MAP@1k`, `R@10`, `MRR@10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Metric {
    pub kind: MetricKind,
    pub k: usize,
}

impl Metric {
    pub fn map(k: usize) -> Self {
        Metric { kind: MetricKind::Map, k }
    }

    pub fn recall(k: usize) -> Self {
        Metric { kind: MetricKind::Recall, k }
    }

    pub fn mrr(k: usize) -> Self {
        Metric { kind: MetricKind::Mrr, k }
    }

    /// MAP@1k, R@1k, R@100, R@10, R@1.
    pub fn standard_suite() -> Vec<Metric> {
        vec![
            Metric::map(1000),
            Metric::recall(1000),
            Metric::recall(100),
            Metric::recall(10),
            Metric::recall(1),
        ]
    }

    pub fn compute(&self, list: &RankedList, relevant: &BTreeSet<String>) -> Result<f64, EvalError> {
        match self.kind {
            MetricKind::Map => average_precision_at_k(list, relevant, self.k),
            MetricKind::Recall => recall_at_k(list, relevant, self.k),
            MetricKind::Mrr => reciprocal_rank_at_k(list, relevant, self.k),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Map => "MAP",
            MetricKind::Recall => "R",
            MetricKind::Mrr => "MRR",
        };
        if self.k >= 1000 && self.k % 1000 == 0 {
            write!(f, "{name}@{}k", self.k / 1000)
        } else {
            write!(f, "{name}@{}", self.k)
        }
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::UnknownMetric(s.to_string());
        let (name, cutoff) = s.trim().split_once('@').ok_or_else(bad)?;
        let kind = match name.to_ascii_lowercase().as_str() {
            "map" | "ap" => MetricKind::Map,
            "r" | "recall" => MetricKind::Recall,
            "mrr" | "rr" => MetricKind::Mrr,
            _ => return Err(bad()),
        };
        let k = match cutoff.strip_suffix(['k', 'K']) {
            Some(thousands) => thousands.parse::<usize>().ok().and_then(|t| t.checked_mul(1000)),
            None => cutoff.parse().ok(),
        }
        .ok_or_else(bad)?;
        if k == 0 {
            return Err(EvalError::ZeroCutoff);
        }
        Ok(Metric { kind, k })
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

fn check(list: &RankedList, relevant: &BTreeSet<String>, k: usize) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    if relevant.is_empty() {
        return Err(EvalError::NoRelevant(list.question_id.clone()));
    }
    Ok(())
}

/// Sum of precision at each relevant hit within the top `k`, divided by the
/// number of relevant answers.
pub fn average_precision_at_k(list: &RankedList, relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(list, relevant, k)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in list.entries.iter().take(k).enumerate() {
        if relevant.contains(&e.answer_id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Fraction of relevant answers within the top `k`.
pub fn recall_at_k(list: &RankedList, relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(list, relevant, k)?;
    let hits = list.entries.iter().take(k).filter(|e| relevant.contains(&e.answer_id)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Reciprocal rank of the first relevant answer within the top `k`.
pub fn reciprocal_rank_at_k(list: &RankedList, relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(list, relevant, k)?;
    Ok(list
        .entries
        .iter()
        .take(k)
        .position(|e| relevant.contains(&e.answer_id))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    pub per_query: BTreeMap<String, f64>,
    /// Mean of `per_query`, folded in question-id order.
    pub aggregate: f64,
}

fn mean<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Evaluates every judged question. Questions missing from the run score 0;
/// run entries for unjudged questions are ignored.
pub fn evaluate_run(run: &Run, qrels: &Qrels, metrics: &[Metric]) -> Result<Vec<MetricReport>, EvalError> {
    if qrels.is_empty() {
        return Err(EvalError::EmptyQrels);
    }
    for list in run.values() {
        let mut seen = HashSet::with_capacity(list.len());
        for e in &list.entries {
            if !seen.insert(e.answer_id.as_str()) {
                return Err(EvalError::DuplicateEntry {
                    question_id: list.question_id.clone(),
                    answer_id: e.answer_id.clone(),
                });
            }
        }
    }
    let empty = RankedList::default();
    let rows: Vec<(&String, Vec<f64>)> = qrels
        .par_iter()
        .map(|(qid, relevant)| {
            let list = run.get(qid).unwrap_or(&empty);
            let values = metrics
                .iter()
                .map(|m| m.compute(list, relevant))
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| match e {
                    EvalError::NoRelevant(_) => EvalError::NoRelevant(qid.clone()),
                    other => other,
                })?;
            Ok((qid, values))
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(metrics
        .iter()
        .enumerate()
        .map(|(i, &metric)| {
            let per_query: BTreeMap<String, f64> = rows.iter().map(|(q, v)| ((*q).clone(), v[i])).collect();
            let aggregate = mean(per_query.values());
            MetricReport {
                metric,
                per_query,
                aggregate,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestStatus {
    Ok,
    /// Every difference is zero; p is 1.
    ZeroVariance,
    /// Differences are constant and nonzero; t is infinite and p is 0.
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub n: usize,
    pub mean_diff: f64,
    pub status: TestStatus,
}

/// Two-sided paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_diff = diffs.iter().sum::<f64>() / n as f64;
    let df = n - 1;
    if diffs.iter().all(|d| *d == diffs[0]) {
        return Ok(if diffs[0] == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                df,
                n,
                mean_diff: 0.0,
                status: TestStatus::ZeroVariance,
            }
        } else {
            TTest {
                t: f64::INFINITY.copysign(diffs[0]),
                p: 0.0,
                df,
                n,
                mean_diff: diffs[0],
                status: TestStatus::Saturated,
            }
        });
    }
    let var = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / df as f64;
    let t = mean_diff / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        df,
        n,
        mean_diff,
        status: TestStatus::Ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonferroniDecision {
    pub p_value: f64,
    pub corrected_alpha: f64,
    pub significant: bool,
}

/// Compares each p-value with `alpha / m`.
pub fn bonferroni(p_values: &[f64], alpha: f64, m: usize) -> Result<Vec<BonferroniDecision>, EvalError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvalError::InvalidCorrection(format!("alpha {alpha} is outside (0, 1)")));
    }
    if m == 0 || m < p_values.len() {
        return Err(EvalError::InvalidCorrection(format!(
            "m = {m} but {} comparisons were made",
            p_values.len()
        )));
    }
    let corrected_alpha = alpha / m as f64;
    Ok(p_values
        .iter()
        .map(|&p_value| BonferroniDecision {
            p_value,
            corrected_alpha,
            significant: p_value < corrected_alpha,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub metric: Metric,
    pub system_a: String,
    pub system_b: String,
    /// Serialized as null when infinite.
    pub t_statistic: f64,
    pub p_value: f64,
    pub corrected_alpha: f64,
    pub significant: bool,
    pub status: TestStatus,
}

/// Pairs two reports of the same metric by question id and tests them.
pub fn paired_values(a: &MetricReport, b: &MetricReport) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    if a.metric != b.metric || !a.per_query.keys().eq(b.per_query.keys()) {
        return Err(EvalError::MismatchedQueries);
    }
    Ok((a.per_query.values().copied().collect(), b.per_query.values().copied().collect()))
}

/// Tests every pair of systems on every metric, correcting for `m`
/// comparisons.
pub fn compare_systems(
    systems: &[(String, Vec<MetricReport>)],
    alpha: f64,
    m: usize,
) -> Result<Vec<SignificanceResult>, EvalError> {
    let mut tests = Vec::new();
    for (i, (name_a, reports_a)) in systems.iter().enumerate() {
        for (name_b, reports_b) in &systems[i + 1..] {
            for (ra, rb) in reports_a.iter().zip(reports_b) {
                let (va, vb) = paired_values(ra, rb)?;
                tests.push((ra.metric, name_a, name_b, paired_t_test(&va, &vb)?));
            }
        }
    }
    let p_values: Vec<f64> = tests.iter().map(|t| t.3.p).collect();
    let decisions = bonferroni(&p_values, alpha, m)?;
    Ok(tests
        .into_iter()
        .zip(decisions)
        .map(|((metric, a, b, test), d)| SignificanceResult {
            metric,
            system_a: a.clone(),
            system_b: b.clone(),
            t_statistic: test.t,
            p_value: test.p,
            corrected_alpha: d.corrected_alpha,
            significant: d.significant,
            status: test.status,
        })
        .collect())
}

/// Plain-text table: one row per system, one column per metric.
pub fn format_table(systems: &[(String, Vec<MetricReport>)]) -> String {
    let Some((_, first)) = systems.first() else {
        return String::new();
    };
    let name_width = systems.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(6);
    let headers: Vec<String> = first.iter().map(|r| r.metric.to_string()).collect();
    let widths: Vec<usize> = headers.iter().map(|h| h.len().max(6)).collect();
    let mut out = format!("{:<name_width$}", "system");
    for (h, w) in headers.iter().zip(&widths) {
        out.push_str(&format!("  {h:>w$}"));
    }
    out.push('\n');
    for (name, reports) in systems {
        out.push_str(&format!("{name:<name_width$}"));
        for (r, w) in reports.iter().zip(&widths) {
            out.push_str(&format!("  {:>w$.4}", r.aggregate));
        }
        out.push('\n');
    }
    out
}

pub fn format_significance(results: &[SignificanceResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{} vs {} {}: t={:.4} p={:.3e} alpha'={:.3e} {}\n",
            r.system_a,
            r.system_b,
            r.metric,
            r.t_statistic,
            r.p_value,
            r.corrected_alpha,
            if r.significant { "significant" } else { "n.s." }
        ));
    }
    out
}
