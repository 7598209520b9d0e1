mod common;

use common::{oracle_ap, oracle_mean, oracle_p, oracle_recall, oracle_rr, oracle_t, MetricFixture};
use cqa_core::eval::{bonferroni, evaluate_run, paired_t_test, Metric, TestStatus};
use cqa_core::trec::{format_run, parse_run};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CUTOFFS: [usize; 5] = [1, 2, 10, 100, 1000];

#[test]
fn evaluate_run_matches_prefix_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let f = MetricFixture::random(&mut rng, false);
        let metrics: Vec<Metric> = CUTOFFS.iter().flat_map(|&k| [Metric::map(k), Metric::recall(k), Metric::mrr(k)]).collect();
        let reports = evaluate_run(&f.ranked(), &f.qrels, &metrics).unwrap();
        for r in &reports {
            let k = r.metric.k;
            let expected = match r.metric.to_string().split('@').next().unwrap() {
                "MAP" => oracle_mean(&f, |d, rel| oracle_ap(d, rel, k)),
                "R" => oracle_mean(&f, |d, rel| oracle_recall(d, rel, k)),
                _ => oracle_mean(&f, |d, rel| oracle_rr(d, rel, k)),
            };
            assert!((r.aggregate - expected).abs() <= 1e-12, "{}: {} vs {expected}", r.metric, r.aggregate);
            assert_eq!(r.per_query.len(), f.qrels.len());
            assert!(r.per_query.values().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn single_relevant_map_equals_mrr() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let f = MetricFixture::random(&mut rng, true);
        for k in CUTOFFS {
            let r = evaluate_run(&f.ranked(), &f.qrels, &[Metric::map(k), Metric::mrr(k)]).unwrap();
            assert_eq!(r[0].per_query, r[1].per_query);
            assert_eq!(r[0].aggregate, r[1].aggregate);
        }
    }
}

#[test]
fn recall_is_monotone_in_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let f = MetricFixture::random(&mut rng, false);
        let metrics: Vec<Metric> = (1..=120).map(Metric::recall).collect();
        let reports = evaluate_run(&f.ranked(), &f.qrels, &metrics).unwrap();
        for w in reports.windows(2) {
            for (q, v) in &w[0].per_query {
                assert!(w[1].per_query[q] >= *v);
            }
        }
    }
}

#[test]
fn metrics_depend_only_on_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let f = MetricFixture::random(&mut rng, false);
        let run = f.ranked();
        let text = format_run(run.values(), "orig");
        let transformed: String = text
            .lines()
            .map(|l| {
                let mut fields: Vec<String> = l.split(' ').map(str::to_string).collect();
                let s: f64 = fields[4].parse().unwrap();
                fields[4] = format!("{:.6}", 3.0 * s.powi(3) + 11.0);
                fields.join(" ") + "\n"
            })
            .collect();
        let (reparsed, _) = parse_run(&transformed).unwrap();
        let m = Metric::standard_suite();
        let a = evaluate_run(&run, &f.qrels, &m).unwrap();
        let b = evaluate_run(&reparsed, &f.qrels, &m).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.per_query, y.per_query);
        }
    }
}

#[test]
fn t_test_matches_quadrature_oracle() {
    let d = [0.1, -0.2, 0.3, 0.05, -0.1, 0.15];
    let zeros = [0.0; 6];
    let t = paired_t_test(&d, &zeros).unwrap();
    assert!((t.t - oracle_t(&d, &zeros)).abs() < 1e-9);
    assert!((t.p - oracle_p(t.t, 5.0)).abs() < 1e-6, "{} vs {}", t.p, oracle_p(t.t, 5.0));

    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..20 {
        let n = rng.random_range(2..60);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let shift = rng.random_range(-0.2..0.2);
        let b: Vec<f64> = a.iter().map(|x| x + shift + rng.random_range(-0.3..0.3)).collect();
        let got = paired_t_test(&a, &b).unwrap();
        assert_eq!(got.status, TestStatus::Ok);
        assert_eq!(got.df, n - 1);
        let t = oracle_t(&a, &b);
        assert!((got.t - t).abs() <= 1e-6 * t.abs().max(1.0));
        let p = oracle_p(t, (n - 1) as f64);
        assert!((got.p - p).abs() <= 1e-6, "n={n}: {} vs {p}", got.p);
    }
}

#[test]
fn bonferroni_hand_arithmetic() {
    let cases: [(&[f64], f64, usize, &[bool]); 4] = [
        (&[0.0004], 0.001, 1, &[true]),
        (&[0.0004], 0.001, 5, &[false]),
        (&[0.00001, 0.5], 0.001, 2, &[true, false]),
        (&[0.0002], 0.001, 5, &[false]),
    ];
    for (p, alpha, m, expected) in cases {
        let d = bonferroni(p, alpha, m).unwrap();
        assert_eq!(d.iter().map(|x| x.significant).collect::<Vec<_>>(), expected);
        assert!(d.iter().all(|x| x.corrected_alpha == alpha / m as f64));
    }
}

proptest! {
    #[test]
    fn significance_matches_its_threshold(p in prop::collection::vec(0.0f64..=1.0, 1..10), alpha in 0.0001f64..0.5, extra in 0usize..5) {
        let m = p.len() + extra;
        for d in bonferroni(&p, alpha, m).unwrap() {
            prop_assert_eq!(d.significant, d.p_value < d.corrected_alpha);
        }
    }

    #[test]
    fn p_value_is_a_probability(a in prop::collection::vec(-5.0f64..5.0, 2..30), noise in prop::collection::vec(-1.0f64..1.0, 30)) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
        let t = paired_t_test(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.p));
        let swapped = paired_t_test(&b, &a).unwrap();
        prop_assert!((t.p - swapped.p).abs() < 1e-12);
        prop_assert!((t.t + swapped.t).abs() < 1e-9 || t.t.is_infinite());
    }
}
