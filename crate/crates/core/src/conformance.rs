//! Checks that a scorer honours the batch scoring contract, so a mock and the
//! neural service are interchangeable.

use std::collections::HashMap;

use crate::scorer::{score_batch, RelevanceScorer, ScorePair, ScoreRequest};
use crate::structured::{InputFormat, Marker, QuerySegment, StructuredInput};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn sample_pairs() -> Vec<ScorePair> {
    let fs = |id: &str, subject: &str, tags: &str, answer: &str| ScorePair {
        pair_id: id.to_string(),
        input: StructuredInput {
            query_segments: vec![
                QuerySegment {
                    text: subject.to_string(),
                    marker: Some(Marker::S),
                },
                QuerySegment {
                    text: "I filed chapter 7 last year and the trustee wants my car.".to_string(),
                    marker: Some(Marker::D),
                },
                QuerySegment {
                    text: tags.to_string(),
                    marker: Some(Marker::T),
                },
            ],
            answer_text: answer.to_string(),
        },
        format: InputFormat::Fs,
    };
    let mut cat = fs(
        "cat-1",
        "Can the trustee take my car?",
        "",
        "California lets you exempt some equity in a vehicle.",
    );
    cat.format = InputFormat::Cat;
    cat.input.query_segments = vec![QuerySegment {
        text: "Can the trustee take my car? I filed chapter 7 last year.".to_string(),
        marker: None,
    }];
    vec![
        fs(
            "fs-1",
            "Can the trustee take my car?",
            "bankruptcy; chapter 7",
            "California lets you exempt some equity in a vehicle.",
        ),
        fs("fs-2", "Wage garnishment", "", "Filing stops most garnishments through the automatic stay."),
        fs("fs-3", "", "bankruptcy homestead exemption", "\u{201c}Homestead\u{201d} protects equity in your home."),
        cat,
    ]
}

fn outcome(name: &'static str, result: Result<(), String>) -> CheckOutcome {
    match result {
        Ok(()) => CheckOutcome {
            name,
            passed: true,
            detail: String::new(),
        },
        Err(detail) => CheckOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

/// Scores `pairs` in batches no larger than the scorer accepts.
fn scores(scorer: &dyn RelevanceScorer, pairs: Vec<ScorePair>) -> Result<HashMap<String, f64>, String> {
    let mut out = HashMap::new();
    for chunk in pairs.chunks(scorer.max_batch().max(1)) {
        let r = score_batch(&ScoreRequest { pairs: chunk.to_vec() }, scorer).map_err(|e| e.to_string())?;
        out.extend(r.scores);
    }
    Ok(out)
}

/// Runs every check and reports each outcome.
pub fn run(scorer: &dyn RelevanceScorer) -> Vec<CheckOutcome> {
    let pairs = sample_pairs();
    let mut out = Vec::new();

    out.push(outcome(
        "finite-scores",
        scores(scorer, pairs.clone()).and_then(|s| {
            if s.len() == pairs.len() && s.values().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(format!("{} scores for {} pairs", s.len(), pairs.len()))
            }
        }),
    ));

    out.push(outcome("empty-batch-rejected", {
        match scorer.score(&ScoreRequest::default()) {
            Err(_) => Ok(()),
            Ok(r) => Err(format!("empty batch accepted ({} scores)", r.scores.len())),
        }
    }));

    out.push(outcome("duplicate-pairs-identical", {
        let mut dup = pairs[0].clone();
        dup.pair_id = "fs-1-copy".into();
        scores(scorer, vec![pairs[0].clone(), dup]).and_then(|s| {
            if s["fs-1"] == s["fs-1-copy"] {
                Ok(())
            } else {
                Err(format!("{} != {}", s["fs-1"], s["fs-1-copy"]))
            }
        })
    }));

    out.push(outcome("batch-independent", {
        let alone = scores(scorer, vec![pairs[1].clone()]);
        let reversed: Vec<ScorePair> = pairs.iter().rev().cloned().collect();
        let together = scores(scorer, reversed);
        alone.and_then(|a| {
            together.and_then(|t| {
                if a["fs-2"] == t["fs-2"] {
                    Ok(())
                } else {
                    Err(format!("alone {} vs in batch {}", a["fs-2"], t["fs-2"]))
                }
            })
        })
    }));

    out.push(outcome("repeatable", {
        scores(scorer, pairs.clone()).and_then(|a| {
            scores(scorer, pairs.clone()).and_then(|b| if a == b { Ok(()) } else { Err("scores changed between calls".into()) })
        })
    }));

    out
}
