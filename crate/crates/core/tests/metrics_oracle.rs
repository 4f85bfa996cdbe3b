mod common;

use std::collections::BTreeMap;

use biclir::corpus::RelevanceJudgments;
use biclir::evaluation::{
    average_precision, aqwv, evaluate, find_best_cutoff, mean_average_precision, ndcg_at_k, precision_at_k,
    EvalConfig,
};
use biclir::run::{RankedList, RankedRun};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn list(ids: &[&str]) -> Vec<(String, f64)> {
    let n = ids.len() as f64;
    ids.iter().enumerate().map(|(i, d)| (d.to_string(), n - i as f64)).collect()
}

fn rels(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
    pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
}

#[test]
fn hand_computed_values() {
    let ap = average_precision(&list(&["a", "x", "b"]), &rels(&[("a", 1), ("b", 1)]));
    assert!((ap - 0.8333).abs() < 5e-5, "{ap}");
    let nd = ndcg_at_k(&list(&["x", "a"]), &rels(&[("a", 1)]), 20);
    assert!((nd - 0.6309).abs() < 5e-5, "{nd}");

    let mut run = RankedRun::new();
    run.insert(RankedList::new("q", vec![("r1".into(), 2.0), ("n1".into(), 1.5), ("r2".into(), 0.5)]).unwrap());
    let mut qrels = RelevanceJudgments::new();
    qrels.insert("q", "r1", 1);
    qrels.insert("q", "r2", 1);
    let v = aqwv(&run, &qrels, 100, 40.0, 1.0);
    assert!((v - 0.09184).abs() < 5e-6, "{v}");
}

#[test]
fn fixed_denominator_and_edge_cases() {
    let ten: Vec<&str> = vec!["r1", "n1", "r2", "n2", "r3", "n3", "r4", "n4", "r5", "n5"];
    let r = rels(&[("r1", 1), ("r2", 1), ("r3", 1), ("r4", 1), ("r5", 1)]);
    assert_eq!(precision_at_k(&list(&ten), &r, 20), 0.25);
    assert_eq!(precision_at_k(&[], &r, 20), 0.0);
    assert_eq!(average_precision(&list(&["n1", "n2"]), &r), 0.0);
    assert_eq!(average_precision(&list(&["r1", "r2", "r3", "r4", "r5"]), &r), 1.0);
}

#[test]
fn metrics_match_brute_force_on_1000_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    for case in 0..1000 {
        let (run, qrels, n_docs) = random_instance(&mut rng);
        for l in run.iter() {
            let r = qrels.for_query(&l.query_id);
            let e = l.entries();
            assert!((average_precision(e, r) - oracle_ap(e, r)).abs() <= TOL, "case {case} AP");
            assert!((precision_at_k(e, r, 20) - oracle_p_at_k(e, r, 20)).abs() <= TOL, "case {case} P@20");
            assert!((ndcg_at_k(e, r, 20) - oracle_ndcg(e, r, 20)).abs() <= TOL, "case {case} NDCG");
        }
        if qrels.queries().all(|q| qrels.num_relevant(q) == 0) {
            continue;
        }
        assert!((mean_average_precision(&run, &qrels) - oracle_map(&run, &qrels)).abs() <= TOL, "case {case} MAP");
        for t in oracle_thresholds(&run) {
            let got = aqwv(&run, &qrels, n_docs, 40.0, t);
            let want = oracle_aqwv(&run, &qrels, n_docs, 40.0, t);
            assert!((got - want).abs() <= TOL, "case {case} AQWV at {t}: {got} vs {want}");
        }
        let best = oracle_best_aqwv(&run, &qrels, n_docs, 40.0);
        let (t, v) = find_best_cutoff(&run, &qrels, n_docs, 40.0);
        assert!((v - best).abs() <= TOL, "case {case} best AQWV {v} vs {best}");
        assert!((oracle_aqwv(&run, &qrels, n_docs, 40.0, t) - best).abs() <= TOL);
        // Ties go to the highest threshold.
        for other in oracle_thresholds(&run).into_iter().filter(|&o| o > t) {
            assert!(oracle_aqwv(&run, &qrels, n_docs, 40.0, other) < best - TOL, "case {case} tie rule");
        }
    }
}

#[test]
fn best_cutoff_on_three_docs_is_top_score() {
    let mut run = RankedRun::new();
    run.insert(RankedList::new("q", vec![("a".into(), 3.0), ("b".into(), 2.0), ("c".into(), 1.0)]).unwrap());
    let mut qrels = RelevanceJudgments::new();
    qrels.insert("q", "a", 1);
    let (t, v) = find_best_cutoff(&run, &qrels, 3, 40.0);
    assert_eq!(t, 3.0);
    assert_eq!(v, 1.0);
}

#[test]
fn cutoff_sets_invariant_under_monotone_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let (run, qrels, n) = random_instance(&mut rng);
        if qrels.queries().all(|q| qrels.num_relevant(q) == 0) {
            continue;
        }
        let mut moved = RankedRun::new();
        for l in run.iter() {
            let e = l.entries().iter().map(|(d, s)| (d.clone(), (s * 0.7).exp() + 3.0)).collect();
            moved.insert(RankedList::new(l.query_id.clone(), e).unwrap());
        }
        let (_, a) = find_best_cutoff(&run, &qrels, n, 40.0);
        let (_, b) = find_best_cutoff(&moved, &qrels, n, 40.0);
        assert!((a - b).abs() <= TOL);
        let (ma, mb) = (mean_average_precision(&run, &qrels), mean_average_precision(&moved, &qrels));
        assert_eq!(ma, mb);
    }
}

#[test]
fn perfect_run_scores_one() {
    let mut run = RankedRun::new();
    run.insert(
        RankedList::new("q", vec![("r1".into(), 3.0), ("r2".into(), 2.0), ("n".into(), 1.0)]).unwrap(),
    );
    let mut qrels = RelevanceJudgments::new();
    qrels.insert("q", "r1", 1);
    qrels.insert("q", "r2", 1);
    let rep = evaluate(&run, &qrels, 10, &EvalConfig::default()).unwrap();
    assert_eq!(rep.map, 1.0);
    assert_eq!(rep.ndcg_at_k, 1.0);
    assert_eq!(rep.aqwv, 1.0);
    assert_eq!(rep.threshold, 2.0);
}
