//! Answer retrieval for legal community question answering: benchmark
//! construction, lexical first-stage retrieval, structured re-ranker inputs,
//! batch scoring over a wire protocol, and evaluation.

pub mod ablation;
pub mod conformance;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod levenshtein;
pub mod protocol;
pub mod rerank;
pub mod retrieval;
pub mod scorer;
pub mod structured;
pub mod text_index;
pub mod trec;

pub use corpus::{load_corpus, write_corpus, Answer, Corpus, CorpusError, Judgment, Question};
pub use dataset::{build_dataset, chronological_split, BuiltDataset, DatasetError, DatasetSplits, SplitSpec};
pub use eval::{evaluate_run, paired_t_test, Metric, MetricReport, SignificanceResult};
pub use rerank::{rerank, CorpusLookup, RerankConfig, RerankError};
pub use retrieval::{Bm25Params, FirstStage, LmdParams, RankedEntry, RankedList};
pub use scorer::{RelevanceScorer, ScorePair, ScoreRequest, ScoreResponse, ScorerError};
pub use structured::{AblationSpec, InputFormat, InputOptions, StructuredInput};
pub use text_index::InvertedIndex;
pub use trec::{Qrels, Run};
