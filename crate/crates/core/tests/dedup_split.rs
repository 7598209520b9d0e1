mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{answer, dedup_fixture, oracle_components, oracle_ratio, question};
use cqa_core::corpus::{Corpus, Question};
use cqa_core::dataset::{
    build_dataset, chronological_split, collapse_duplicates, find_near_duplicates, survivor_map, DatasetError, SplitSpec,
};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn components_of(questions: &[Question], threshold: f64) -> Vec<Vec<String>> {
    let pairs = find_near_duplicates(questions, threshold).unwrap();
    let survivors = survivor_map(questions, &pairs);
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (id, s) in &survivors {
        groups.entry(s.as_str()).or_default().push(id.clone());
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

#[test]
fn fixture_chain_collapses_transitively() {
    let qs = dedup_fixture();
    let expected = oracle_components(&qs, 90.0);
    assert_eq!(expected.len(), 3);
    assert_eq!(components_of(&qs, 90.0), expected);

    let pairs = find_near_duplicates(&qs, 90.0).unwrap();
    let ids: BTreeSet<(&str, &str)> = pairs.iter().map(|p| (p.first.as_str(), p.second.as_str())).collect();
    assert_eq!(ids, [("c1", "c2"), ("c2", "c3"), ("p1", "p2")].into());
    for p in &pairs {
        let text = |id: &str| {
            let q = qs.iter().find(|q| q.id == id).unwrap();
            format!("{} {}", q.subject, q.description)
        };
        assert!((p.ratio - oracle_ratio(&text(&p.first), &text(&p.second))).abs() < 1e-9);
    }

    // The pair sits at exactly 92% and the chain links at 91%, so a threshold
    // of 92 merges nothing.
    assert_eq!(components_of(&qs, 92.0).len(), 6);
    assert_eq!(components_of(&qs, 91.5).len(), 5);
}

#[test]
fn collapse_keeps_every_answer() {
    let qs = dedup_fixture();
    let answers: Vec<_> = qs
        .iter()
        .enumerate()
        .flat_map(|(i, q)| (0..=i % 3).map(move |j| answer(&format!("{}-a{j}", q.id), &q.id, "Some reply.")))
        .collect();
    let n_answers = answers.len();
    let corpus = Corpus::new(qs.clone(), answers, vec![]).unwrap();
    let pairs = find_near_duplicates(&corpus.questions, 90.0).unwrap();
    let collapsed = collapse_duplicates(&corpus, &pairs);
    assert_eq!(collapsed.questions.len(), 3);
    assert_eq!(collapsed.answers.len(), n_answers);
    let kept: BTreeSet<&str> = collapsed.questions.iter().map(|q| q.id.as_str()).collect();
    assert!(collapsed.answers.iter().all(|a| kept.contains(a.question_id.as_str())));
}

fn jitter(base: &str, edits: &[(usize, char)]) -> String {
    let mut chars: Vec<char> = base.chars().collect();
    for &(pos, c) in edits {
        let i = pos % chars.len();
        chars[i] = c;
    }
    chars.into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Components agree with a quadratic scan using the textbook edit distance.
    #[test]
    fn components_match_brute_force(
        bases in prop::collection::vec("[a-e ]{8,30}", 1..4),
        edits in prop::collection::vec((0usize..3, prop::collection::vec((0usize..40, prop::sample::select(vec!['a', 'b', 'x', ' '])), 0..4)), 2..12),
        threshold in 60.0f64..99.0,
    ) {
        let qs: Vec<Question> = edits
            .iter()
            .enumerate()
            .map(|(i, (b, e))| question(&format!("q{i:02}"), &jitter(&bases[b % bases.len()], e), "", &[], i as i64))
            .collect();
        prop_assert_eq!(components_of(&qs, threshold), oracle_components(&qs, threshold));
    }
}

fn timed(n: usize) -> Vec<Question> {
    (0..n).map(|i| question(&format!("q{i:05}"), "s", "d", &[], (i as i64) * 60)).collect()
}

#[test]
fn split_sizes_follow_floors() {
    let spec = SplitSpec::default();
    assert_eq!(spec.sizes(10), (7, 1, 2));
    assert_eq!(spec.sizes(9846), (6892, 984, 1970));

    let mut qs = timed(9846);
    qs.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
    let splits = chronological_split(&qs, &spec).unwrap();
    assert_eq!(splits.sizes(), (6892, 984, 1970));
    let order: Vec<String> = timed(9846).into_iter().map(|q| q.id).collect();
    let joined: Vec<String> = splits.train.iter().chain(&splits.validation).chain(&splits.test).cloned().collect();
    assert_eq!(joined, order);
}

#[test]
fn split_rejects_empty_partitions() {
    let err = chronological_split(&timed(3), &SplitSpec::default()).unwrap_err();
    assert!(matches!(err, DatasetError::TooFewQuestions { n: 3, .. }), "{err}");
    assert!(chronological_split(&timed(10), &SplitSpec::default()).is_ok());
    assert!(SplitSpec::new(Ratio::new(1, 2), Ratio::new(1, 2), Ratio::new(1, 2)).is_err());
}

proptest! {
    /// Every test question is at least as recent as every train question.
    #[test]
    fn later_splits_never_predate_earlier_ones(stamps in prop::collection::vec(0i64..50, 10..80)) {
        let qs: Vec<Question> = stamps.iter().enumerate().map(|(i, s)| question(&format!("q{i:03}"), "s", "d", &[], *s)).collect();
        let splits = chronological_split(&qs, &SplitSpec::default()).unwrap();
        let when: BTreeMap<&str, (i64, &str)> = qs.iter().map(|q| (q.id.as_str(), (q.timestamp.timestamp(), q.id.as_str()))).collect();
        let key = |ids: &[String]| ids.iter().map(|i| when[i.as_str()]).collect::<Vec<_>>();
        let (tr, va, te) = (key(&splits.train), key(&splits.validation), key(&splits.test));
        prop_assert!(tr.iter().all(|a| va.iter().chain(&te).all(|b| a < b)));
        prop_assert!(va.iter().all(|a| te.iter().all(|b| a < b)));
        prop_assert_eq!(splits.sizes(), SplitSpec::default().sizes(qs.len()));
    }
}

#[test]
fn build_dataset_dedups_before_splitting() {
    let mut qs = dedup_fixture();
    qs.extend((0..8).map(|i| question(&format!("z{i}"), &format!("unrelated topic number {i} {}", "w".repeat(i * 7)), "Misc.", &[], 100 + i as i64)));
    // Only removed members carry a helpful answer, so survivors must inherit one.
    let answers: Vec<_> = qs
        .iter()
        .map(|q| {
            let mut a = answer(&format!("{}-a", q.id), &q.id, "Reply.");
            a.questioner_helpful = !matches!(q.id.as_str(), "c1" | "p1");
            a
        })
        .collect();
    let raw = Corpus::new(qs, answers, vec![]).unwrap();
    let built = build_dataset(&raw, 90.0, &SplitSpec::default()).unwrap();
    assert_eq!(built.corpus.questions.len(), 11);
    assert_eq!(built.splits.sizes(), SplitSpec::default().sizes(11));
    assert_eq!(built.corpus.judgments.len(), 11);
    assert_eq!(built.corpus.answers.len(), 14);
    let survivors: BTreeSet<&str> = built.corpus.questions.iter().map(|q| q.id.as_str()).collect();
    assert_eq!(survivors.iter().filter(|id| id.starts_with('c') || id.starts_with('p')).count(), 2);
}
