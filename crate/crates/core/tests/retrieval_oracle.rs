mod common;

use std::collections::{BTreeMap, HashMap};

use biclir::corpus::{tokenize, Corpus, Side, Token};
use biclir::retrieval::{
    build_index, expand_query_psq, ql_score, retrieve_topk, search, translate_query_dbqt, SearchMode,
    TranslationTable, WeightedQuery,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tok(s: &str) -> Token {
    tokenize(s).remove(0)
}

#[test]
fn hand_computed_dirichlet_scores() {
    let idx = build_index(&corpus(&["a b a", "b c"]), Side::Original).unwrap();
    let q = WeightedQuery::plain(&tokenize("a"));
    let s1 = ql_score(&q, "d1", &idx, 1.0).unwrap();
    let s2 = ql_score(&q, "d2", &idx, 1.0).unwrap();
    assert!((s1 - 0.6f64.ln()).abs() < 1e-9);
    assert!((s2 - (0.4f64 / 3.0).ln()).abs() < 1e-9);
    let top = retrieve_topk(&idx, "q", &q, 10, 1.0).unwrap();
    let ids: Vec<&str> = top.doc_ids().collect();
    // d2 has no "a" and is not a candidate under document-at-a-time scoring.
    assert_eq!(ids, ["d1"]);
    let oov = WeightedQuery::plain(&tokenize("zzz"));
    assert_eq!(ql_score(&oov, "d1", &idx, 1.0).unwrap(), 0.0);
    assert!(retrieve_topk(&idx, "q", &oov, 10, 1.0).unwrap().is_empty());
}

#[test]
fn topk_matches_exhaustive_scoring_on_1000_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for case in 0..1000 {
        let vocab = rng.random_range(2..=50);
        let n_docs = rng.random_range(1..=200);
        let docs: Vec<Vec<String>> = (0..n_docs)
            .map(|_| (0..rng.random_range(1..=15)).map(|_| format!("w{}", rng.random_range(0..vocab))).collect())
            .collect();
        let texts: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
        let corpus = Corpus::new(
            texts.iter().enumerate().map(|(i, t)| record(&format!("d{i:03}"), t, "")).collect(),
        )
        .unwrap();
        let idx = build_index(&corpus, Side::Original).unwrap();
        // Vocabulary slightly larger than the collection's so OOV terms occur.
        let query: Vec<String> = (0..rng.random_range(1..=4)).map(|_| format!("w{}", rng.random_range(0..vocab + 3))).collect();
        let mu = 10f64.powf(rng.random_range(-1.0..4.0));
        let k = rng.random_range(1..=30);
        let want = oracle_ql_topk(&docs, &query, k, mu);
        let all: HashMap<String, f64> = oracle_ql_topk(&docs, &query, usize::MAX, mu).into_iter().collect();
        let got = retrieve_topk(&idx, "q", &WeightedQuery::plain(&tokenize(&query.join(" "))), k, mu).unwrap();
        assert_eq!(got.len(), want.len(), "case {case}");
        // Mathematically tied documents may differ in the last bits, so a
        // position only has to hold a document whose oracle score matches.
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        for ((doc, s), (wdoc, w)) in got.entries().iter().zip(&want) {
            assert!(close(*s, *w), "case {case}: {doc} {s} vs {wdoc} {w}");
            assert!(doc == wdoc || close(all[doc], *w), "case {case}: {doc} at {wdoc}'s rank");
        }
    }
}

#[test]
fn psq_with_deterministic_table_equals_dbqt() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let texts: Vec<String> = (0..rng.random_range(2..40))
            .map(|_| (0..rng.random_range(1..10)).map(|_| format!("f{}", rng.random_range(0..12))).collect::<Vec<_>>().join(" "))
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let idx = build_index(&corpus(&refs), Side::Original).unwrap();
        let pairs: Vec<(Token, Token)> = (0..8).map(|i| (tok(&format!("e{i}")), tok(&format!("f{i}")))).collect();
        let table = TranslationTable::deterministic(&pairs).unwrap();
        let dict: HashMap<Token, Vec<Token>> = pairs.iter().map(|(e, f)| (e.clone(), vec![f.clone()])).collect();
        let query = tokenize(
            &(0..rng.random_range(1..5)).map(|_| format!("e{}", rng.random_range(0..10))).collect::<Vec<_>>().join(" "),
        );
        let a = retrieve_topk(&idx, "q", &expand_query_psq(&query, &table), 50, 100.0).unwrap();
        let b = retrieve_topk(&idx, "q", &translate_query_dbqt(&query, &dict), 50, 100.0).unwrap();
        assert_eq!(a.doc_ids().collect::<Vec<_>>(), b.doc_ids().collect::<Vec<_>>());
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert!((x.1 - y.1).abs() <= 1e-12);
        }
    }
}

#[test]
fn psq_expected_tf_inside_the_formula() {
    let idx = build_index(&corpus(&["f1 f1 x", "f2 y y"]), Side::Original).unwrap();
    let mut entries = BTreeMap::new();
    entries.insert(tok("e"), vec![(tok("f1"), 0.7), (tok("f2"), 0.3)]);
    let table = TranslationTable::new(entries).unwrap();
    let q = expand_query_psq(&tokenize("e"), &table);
    let mu: f64 = 2.0;
    let (tf, cf, total, len): (f64, f64, f64, f64) = (0.7 * 2.0, 0.7 * 2.0 + 0.3 * 1.0, 6.0, 3.0);
    let want = ((tf + mu * cf / total) / (len + mu)).ln();
    assert!((ql_score(&q, "d1", &idx, mu).unwrap() - want).abs() < 1e-12);
}

#[test]
fn search_modes_over_query_sets() {
    let docs = Corpus::new(vec![record("d1", "mti mti", "tree tree"), record("d2", "maji", "water")]).unwrap();
    let queries = Corpus::new(vec![record("q1", "tree", "mti")]).unwrap();
    let translated = build_index(&docs, Side::Translated).unwrap();
    let original = build_index(&docs, Side::Original).unwrap();
    let ql = search(&translated, &queries, &SearchMode::Ql, 10, 1000.0).unwrap();
    let ql_orig = search(&original, &queries, &SearchMode::Ql, 10, 1000.0).unwrap();
    assert_eq!(ql.get("q1").unwrap().doc_ids().collect::<Vec<_>>(), ["d1"]);
    assert_eq!(ql.get("q1").unwrap().entries(), ql_orig.get("q1").unwrap().entries());
    let dict = HashMap::from([(tok("tree"), vec![tok("mti")])]);
    let dbqt = search(&original, &queries, &SearchMode::Dbqt(dict), 10, 1000.0).unwrap();
    assert_eq!(dbqt.get("q1").unwrap().entries(), ql_orig.get("q1").unwrap().entries());
}

#[test]
fn large_mu_approaches_collection_model() {
    let idx = build_index(&corpus(&["a b a c", "b c c", "a"]), Side::Original).unwrap();
    let q = WeightedQuery::plain(&tokenize("a c"));
    let s = ql_score(&q, "d2", &idx, 1e9).unwrap();
    let want = (3.0f64 / 8.0) * (3.0 / 8.0);
    assert!((s.exp() - want).abs() / want < 1e-6);
}
