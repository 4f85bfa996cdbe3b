//! Brute-force references and fixtures shared by the integration tests.
//! The oracles here work from raw token lists and plain vectors and share no
//! code with the library beyond its data types.

#![allow(dead_code)]

use std::collections::BTreeMap;

use biclir::corpus::{tokenize, BilingualRecord, Corpus, RelevanceJudgments};
use biclir::run::{RankedList, RankedRun};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn record(id: &str, text: &str, translation: &str) -> BilingualRecord {
    BilingualRecord {
        id: id.to_string(),
        lang: "xx".to_string(),
        terms: tokenize(text),
        translated_terms: tokenize(translation),
    }
}

/// Documents indexed on their original side.
pub fn corpus(texts: &[&str]) -> Corpus {
    Corpus::new(
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| record(&format!("d{}", i + 1), t, ""))
            .collect(),
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Metrics

/// Docs ordered by score descending, doc id ascending.
pub fn sorted(entries: &[(String, f64)]) -> Vec<(String, f64)> {
    let mut v = entries.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    v
}

fn is_rel(rels: &BTreeMap<String, u32>, d: &str) -> bool {
    rels.get(d).copied().unwrap_or(0) >= 1
}

pub fn oracle_ap(list: &[(String, f64)], rels: &BTreeMap<String, u32>) -> f64 {
    let r = rels.values().filter(|&&g| g >= 1).count();
    if r == 0 {
        return 0.0;
    }
    // Precision at each relevant rank, recomputed from the prefix each time.
    let mut sum = 0.0;
    for i in 0..list.len() {
        if is_rel(rels, &list[i].0) {
            let hits = list[..=i].iter().filter(|(d, _)| is_rel(rels, d)).count();
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / r as f64
}

pub fn oracle_p_at_k(list: &[(String, f64)], rels: &BTreeMap<String, u32>, k: usize) -> f64 {
    list.iter().take(k).filter(|(d, _)| is_rel(rels, d)).count() as f64 / k as f64
}

fn dcg(grades: &[u32], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

pub fn oracle_ndcg(list: &[(String, f64)], rels: &BTreeMap<String, u32>, k: usize) -> f64 {
    let got: Vec<u32> = list.iter().map(|(d, _)| rels.get(d).copied().unwrap_or(0)).collect();
    let mut ideal: Vec<u32> = rels.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg(&got, k) / idcg
    }
}

fn judged_queries(qrels: &RelevanceJudgments) -> Vec<String> {
    qrels
        .queries()
        .filter(|q| qrels.num_relevant(q) > 0)
        .map(str::to_string)
        .collect()
}

pub fn oracle_map(run: &RankedRun, qrels: &RelevanceJudgments) -> f64 {
    let qs = judged_queries(qrels);
    let total: f64 = qs
        .iter()
        .map(|q| match run.get(q) {
            Some(l) => oracle_ap(l.entries(), qrels.for_query(q)),
            None => 0.0,
        })
        .sum();
    total / qs.len() as f64
}

pub fn oracle_aqwv(run: &RankedRun, qrels: &RelevanceJudgments, n_docs: usize, beta: f64, t: f64) -> f64 {
    let qs = judged_queries(qrels);
    let mut total = 0.0;
    for q in &qs {
        let rels = qrels.for_query(q);
        let r = rels.values().filter(|&&g| g >= 1).count();
        let returned: Vec<&str> = run
            .get(q)
            .map(|l| l.entries().iter().filter(|(_, s)| *s >= t).map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default();
        let hits = returned.iter().filter(|d| is_rel(rels, d)).count();
        let fa = returned.len() - hits;
        let p_miss = (r - hits) as f64 / r as f64;
        let p_fa = fa as f64 / (n_docs - r) as f64;
        total += 1.0 - p_miss - beta * p_fa;
    }
    total / qs.len() as f64
}

/// All candidate thresholds: +inf plus every score in the run.
pub fn oracle_thresholds(run: &RankedRun) -> Vec<f64> {
    let mut ts = vec![f64::INFINITY];
    for l in run.iter() {
        ts.extend(l.entries().iter().map(|e| e.1));
    }
    ts
}

pub fn oracle_best_aqwv(run: &RankedRun, qrels: &RelevanceJudgments, n_docs: usize, beta: f64) -> f64 {
    oracle_thresholds(run)
        .into_iter()
        .map(|t| oracle_aqwv(run, qrels, n_docs, beta, t))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random graded run and qrels over at most 50 documents. Scores are
/// quantized so ties occur.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (RankedRun, RelevanceJudgments, usize) {
    let n_docs = rng.random_range(5..=50);
    let n_queries = rng.random_range(1..=4);
    let mut run = RankedRun::new();
    let mut qrels = RelevanceJudgments::new();
    for q in 0..n_queries {
        let qid = format!("q{q}");
        let mut entries = Vec::new();
        for d in 0..n_docs {
            let id = format!("d{d:02}");
            if rng.random_bool(0.6) {
                entries.push((id.clone(), (rng.random_range(0..12) as f64) * 0.25 - 1.0));
            }
            if rng.random_bool(0.3) {
                qrels.insert(&qid, &id, rng.random_range(0..=3));
            }
        }
        if !entries.is_empty() {
            run.insert(RankedList::new(qid, entries).unwrap());
        }
    }
    (run, qrels, n_docs)
}

// ---------------------------------------------------------------------------
// Query likelihood

/// Exhaustive Dirichlet QL over raw token lists: every document containing
/// at least one query term is scored, then sorted and cut at `k`.
pub fn oracle_ql_topk(docs: &[Vec<String>], query: &[String], k: usize, mu: f64) -> Vec<(String, f64)> {
    let total: usize = docs.iter().map(Vec::len).sum();
    let cf = |t: &str| docs.iter().flatten().filter(|x| x.as_str() == t).count();
    let mut scored = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        if !query.iter().any(|t| d.contains(t)) {
            continue;
        }
        let mut s = 0.0;
        for t in query {
            let c = cf(t);
            if c == 0 {
                continue;
            }
            let tf = d.iter().filter(|x| *x == t).count() as f64;
            let p = c as f64 / total as f64;
            s += ((tf + mu * p) / (d.len() as f64 + mu)).ln();
        }
        scored.push((format!("d{i:03}"), s));
    }
    let mut out = sorted(&scored);
    out.truncate(k);
    out
}

// ---------------------------------------------------------------------------
// Synthetic experiment fixture

use biclir::corpus::{gen_cipher_dataset, CipherDataset, GenConfig, Side, Split};
use biclir::embeddings::{align_with_lexicon, apply_alignment, AlignmentMap};
use biclir::rankers::TextResources;
use biclir::retrieval::{build_index, search, SearchMode};
use biclir::training::{FeatureChannel, RerankInputs};

/// A cipher dataset with its first-stage runs and aligned embeddings.
pub struct Experiment {
    pub ds: CipherDataset,
    pub resources: TextResources,
    pub train: RankedRun,
    pub dev: RankedRun,
    pub test: RankedRun,
}

impl Experiment {
    pub fn new(cfg: &GenConfig) -> Self {
        Self::from_dataset(gen_cipher_dataset(cfg).unwrap())
    }

    pub fn from_dataset(ds: CipherDataset) -> Self {
        let idx = build_index(&ds.target_docs, Side::Translated).unwrap();
        let run = search(&idx, &ds.queries, &SearchMode::Ql, 100, 1000.0).unwrap();
        let w = align_with_lexicon(&ds.source_embeddings, &ds.target_embeddings, &ds.lexicon).unwrap();
        let map = AlignmentMap { w, source_lang: String::new(), target_lang: String::new() };
        let aligned = apply_alignment(&map, &ds.target_embeddings).unwrap();
        let resources = TextResources::new(&ds.target_docs, ds.source_embeddings.clone(), aligned).unwrap();
        let sub = |s: Split| {
            let q = ds.split_queries(s);
            run.subset(q.iter().map(|q| q.id.as_str()))
        };
        let (train, dev, test) = (sub(Split::Train), sub(Split::Dev), sub(Split::Test));
        Experiment { ds, resources, train, dev, test }
    }

    pub fn inputs(&self) -> RerankInputs<'_> {
        RerankInputs {
            docs: &self.ds.target_docs,
            queries: &self.ds.queries,
            resources: &self.resources,
            channel: FeatureChannel::default(),
        }
    }

    pub fn test_qrels(&self) -> RelevanceJudgments {
        self.ds.qrels.subset(self.test.query_ids())
    }
}

/// A dataset small enough for a few-second training run.
pub fn tiny_config(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        n_docs: 120,
        n_queries: 20,
        vocab_size: 400,
        doc_len_range: (10, 25),
        embed_dim: 10,
        n_topics: 8,
        split: (10, 5, 5),
        ..GenConfig::default()
    }
}
