//! Segment-removal study on the fs layout.

use serde::Serialize;

use crate::eval::{evaluate_run, EvalError, Metric, MetricReport};
use crate::rerank::{rerank_all, CorpusLookup, RerankConfig, RerankError};
use crate::retrieval::RankedList;
use crate::scorer::RelevanceScorer;
use crate::structured::{AblationSpec, Field, InputOptions};
use crate::trec::{Qrels, Run};

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error("{label}: {source}")]
    Rerank {
        label: String,
        #[source]
        source: RerankError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl AblationError {
    pub fn is_transport(&self) -> bool {
        matches!(self, AblationError::Rerank { source, .. } if source.is_transport())
    }
}

/// Rows in report order: each single-segment drop, then the full layout.
pub fn variants() -> Vec<AblationSpec> {
    [Field::Tags, Field::Subject, Field::Description]
        .into_iter()
        .map(|f| AblationSpec::dropping([f]).expect("single drop"))
        .chain([AblationSpec::none()])
        .collect()
}

/// MAP@1k, R@100, R@10, R@1.
pub fn default_metrics() -> Vec<Metric> {
    vec![Metric::map(1000), Metric::recall(100), Metric::recall(10), Metric::recall(1)]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub ablation: AblationSpec,
    pub reports: Vec<MetricReport>,
    #[serde(skip)]
    pub run: Vec<RankedList>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn table(&self) -> String {
        let systems: Vec<(String, Vec<MetricReport>)> =
            self.rows.iter().map(|r| (r.label.clone(), r.reports.clone())).collect();
        crate::eval::format_table(&systems)
    }
}

/// Re-ranks `run` once per variant with the same scorer and evaluates each.
pub fn ablate(
    run: &Run,
    lookup: &CorpusLookup<'_>,
    qrels: &Qrels,
    scorer: &dyn RelevanceScorer,
    batch_size: usize,
    metrics: &[Metric],
) -> Result<AblationReport, AblationError> {
    let lists: Vec<RankedList> = run.values().cloned().collect();
    let mut rows = Vec::new();
    for ablation in variants() {
        let label = ablation.label();
        let config = RerankConfig {
            input: InputOptions::fs(ablation.clone()),
            batch_size,
        };
        let reranked = rerank_all(&lists, lookup, scorer, &config).map_err(|source| AblationError::Rerank {
            label: label.clone(),
            source,
        })?;
        let as_run: Run = reranked.iter().map(|l| (l.question_id.clone(), l.clone())).collect();
        let reports = evaluate_run(&as_run, qrels, metrics)?;
        rows.push(AblationRow {
            label,
            ablation,
            reports,
            run: reranked,
        });
    }
    Ok(AblationReport { rows })
}
