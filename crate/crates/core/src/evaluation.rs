//! MAP, P@k, NDCG@k and AQWV with a global score-cutoff search.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::RelevanceJudgments;
use crate::run::{RankedList, RankedRun};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cutoff_k: usize,
    pub beta: f64,
    /// Fixed AQWV score threshold; searched when absent.
    pub aqwv_threshold: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoff_k: 20,
            beta: 40.0,
            aqwv_threshold: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Usage(format!("beta must be positive, got {}", self.beta)));
        }
        if self.cutoff_k == 0 {
            return Err(Error::Usage("cutoff_k must be >= 1".into()));
        }
        Ok(())
    }
}

fn num_relevant(rels: &BTreeMap<String, u32>) -> usize {
    rels.values().filter(|&&g| g >= 1).count()
}

fn grade(rels: &BTreeMap<String, u32>, doc: &str) -> u32 {
    rels.get(doc).copied().unwrap_or(0)
}

/// `(1/R) Σ precision@r` over ranks `r` holding a relevant document; 0 when `R = 0`.
pub fn average_precision(list: &[(String, f64)], rels: &BTreeMap<String, u32>) -> f64 {
    let r = num_relevant(rels);
    if r == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, (doc, _)) in list.iter().enumerate() {
        if grade(rels, doc) >= 1 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / r as f64
}

/// Relevant documents in the top `k` divided by `k` (not by the list length).
pub fn precision_at_k(list: &[(String, f64)], rels: &BTreeMap<String, u32>, k: usize) -> f64 {
    let hits = list.iter().take(k).filter(|(d, _)| grade(rels, d) >= 1).count();
    hits as f64 / k as f64
}

fn gain(g: u32) -> f64 {
    2f64.powi(g as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// Exponential-gain NDCG with `log2(r + 1)` discount; 0 when the ideal DCG is 0.
pub fn ndcg_at_k(list: &[(String, f64)], rels: &BTreeMap<String, u32>, k: usize) -> f64 {
    let dcg: f64 = list
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (d, _))| gain(grade(rels, d)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = rels.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| gain(g) / discount(i + 1)).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Queries with at least one relevant judgment, in id order.
pub fn evaluated_queries(qrels: &RelevanceJudgments) -> Vec<&str> {
    qrels.queries().filter(|q| qrels.num_relevant(q) > 0).collect()
}

fn entries<'a>(run: &'a RankedRun, qid: &str) -> &'a [(String, f64)] {
    run.get(qid).map(RankedList::entries).unwrap_or(&[])
}

/// Mean AP over queries with at least one relevant document; missing run
/// entries score 0.
pub fn mean_average_precision(run: &RankedRun, qrels: &RelevanceJudgments) -> f64 {
    let qs = evaluated_queries(qrels);
    if qs.is_empty() {
        return 0.0;
    }
    qs.iter().map(|q| average_precision(entries(run, q), qrels.for_query(q))).sum::<f64>() / qs.len() as f64
}

/// Per-query value `1 − P_miss − β·P_FA` from counts.
fn query_value(hits: usize, false_alarms: usize, r: usize, n_docs: usize, beta: f64) -> f64 {
    let p_miss = (r - hits) as f64 / r as f64;
    let non_rel = n_docs.saturating_sub(r);
    let p_fa = if non_rel == 0 { 0.0 } else { false_alarms as f64 / non_rel as f64 };
    1.0 - p_miss - beta * p_fa
}

/// AQWV at a global score threshold: documents scoring `>= threshold` are
/// returned; averaged over queries with at least one relevant document.
pub fn aqwv(run: &RankedRun, qrels: &RelevanceJudgments, n_docs: usize, beta: f64, threshold: f64) -> f64 {
    let qs = evaluated_queries(qrels);
    if qs.is_empty() {
        return 0.0;
    }
    let total: f64 = qs
        .iter()
        .map(|q| {
            let rels = qrels.for_query(q);
            let (mut hits, mut fa) = (0, 0);
            for (d, s) in entries(run, q) {
                if *s >= threshold {
                    if grade(rels, d) >= 1 {
                        hits += 1;
                    } else {
                        fa += 1;
                    }
                }
            }
            query_value(hits, fa, num_relevant(rels), n_docs, beta)
        })
        .sum();
    total / qs.len() as f64
}

/// Sweeps `+∞` and every distinct score as a global threshold and returns
/// `(threshold, AQWV)` of the maximizer, preferring the highest threshold on
/// ties.
pub fn find_best_cutoff(run: &RankedRun, qrels: &RelevanceJudgments, n_docs: usize, beta: f64) -> (f64, f64) {
    let qs = evaluated_queries(qrels);
    if qs.is_empty() {
        return (f64::INFINITY, 0.0);
    }
    let r: Vec<usize> = qs.iter().map(|q| num_relevant(qrels.for_query(q))).collect();
    let mut events: Vec<(f64, usize, bool)> = Vec::new();
    for (qi, q) in qs.iter().enumerate() {
        let rels = qrels.for_query(q);
        for (d, s) in entries(run, q) {
            events.push((*s, qi, grade(rels, d) >= 1));
        }
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut hits = vec![0usize; qs.len()];
    let mut fa = vec![0usize; qs.len()];
    let value = |hits: &[usize], fa: &[usize]| -> f64 {
        (0..qs.len()).map(|i| query_value(hits[i], fa[i], r[i], n_docs, beta)).sum::<f64>() / qs.len() as f64
    };
    let mut best = (f64::INFINITY, value(&hits, &fa));
    let mut i = 0;
    while i < events.len() {
        let s = events[i].0;
        while i < events.len() && events[i].0 == s {
            let (_, qi, rel) = events[i];
            if rel {
                hits[qi] += 1;
            } else {
                fa[qi] += 1;
            }
            i += 1;
        }
        let v = value(&hits, &fa);
        if v > best.1 {
            best = (s, v);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub ap: f64,
    pub p_at_k: f64,
    pub ndcg_at_k: f64,
    pub aqwv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub beta: f64,
    pub threshold: f64,
    pub map: f64,
    pub p_at_k: f64,
    pub ndcg_at_k: f64,
    pub aqwv: f64,
    pub per_query: Vec<QueryMetrics>,
}

/// Evaluates `run`; the AQWV threshold is `threshold` when given, else
/// searched on `run` itself.
pub fn evaluate(
    run: &RankedRun,
    qrels: &RelevanceJudgments,
    n_docs: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let qs = evaluated_queries(qrels);
    if qs.is_empty() {
        return Err(Error::data("qrels contain no query with a relevant document"));
    }
    let threshold = match cfg.aqwv_threshold {
        Some(t) => t,
        None => find_best_cutoff(run, qrels, n_docs, cfg.beta).0,
    };
    let per_query: Vec<QueryMetrics> = qs
        .iter()
        .map(|q| {
            let list = entries(run, q);
            let rels = qrels.for_query(q);
            let (mut hits, mut fa) = (0, 0);
            for (d, s) in list {
                if *s >= threshold {
                    if grade(rels, d) >= 1 {
                        hits += 1;
                    } else {
                        fa += 1;
                    }
                }
            }
            QueryMetrics {
                query_id: q.to_string(),
                ap: average_precision(list, rels),
                p_at_k: precision_at_k(list, rels, cfg.cutoff_k),
                ndcg_at_k: ndcg_at_k(list, rels, cfg.cutoff_k),
                aqwv: query_value(hits, fa, num_relevant(rels), n_docs, cfg.beta),
            }
        })
        .collect();
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        k: cfg.cutoff_k,
        beta: cfg.beta,
        threshold,
        map: mean(|m| m.ap),
        p_at_k: mean(|m| m.p_at_k),
        ndcg_at_k: mean(|m| m.ndcg_at_k),
        aqwv: mean(|m| m.aqwv),
        per_query,
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let k = self.k;
        let mut out = format!("{:<12} {:>8} {:>8} {:>8} {:>9}\n", "query", "AP", format!("P@{k}"), format!("NDCG@{k}"), "AQWV");
        let mut row = |id: &str, a: f64, p: f64, n: f64, q: f64| {
            let _ = writeln!(out, "{id:<12} {a:>8.4} {p:>8.4} {n:>8.4} {q:>9.4}");
        };
        for m in &self.per_query {
            row(&m.query_id, m.ap, m.p_at_k, m.ndcg_at_k, m.aqwv);
        }
        row("all", self.map, self.p_at_k, self.ndcg_at_k, self.aqwv);
        let _ = writeln!(out, "aqwv threshold = {} (beta = {})", self.threshold, self.beta);
        out
    }

    /// One JSON object per query followed by a summary line with `"query_id": "all"`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.per_query {
            out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
            out.push('\n');
        }
        let threshold = if self.threshold.is_finite() {
            serde_json::json!(self.threshold)
        } else {
            serde_json::json!("inf")
        };
        let summary = serde_json::json!({
            "query_id": "all",
            "map": self.map,
            "p_at_k": self.p_at_k,
            "ndcg_at_k": self.ndcg_at_k,
            "aqwv": self.aqwv,
            "k": self.k,
            "beta": self.beta,
            "threshold": threshold,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(docs: &[&str]) -> Vec<(String, f64)> {
        docs.iter().enumerate().map(|(i, d)| (d.to_string(), -(i as f64))).collect()
    }

    fn rels(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn ap_examples() {
        let r = rels(&[("a", 1), ("c", 1)]);
        assert!((average_precision(&list(&["a", "b", "c"]), &r) - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&list(&["a", "c", "b"]), &r), 1.0);
        assert_eq!(average_precision(&list(&["b", "x"]), &r), 0.0);
    }

    #[test]
    fn precision_examples() {
        let docs: Vec<String> = (0..20).map(|i| format!("d{i}")).collect();
        let names: Vec<&str> = docs.iter().map(String::as_str).collect();
        let r = rels(&[("d0", 1), ("d3", 1), ("d7", 2), ("d9", 1), ("d19", 1)]);
        assert_eq!(precision_at_k(&list(&names), &r, 20), 0.25);
        let r10 = rels(&[("d0", 1), ("d3", 1), ("d7", 2), ("d9", 1), ("d8", 1)]);
        assert_eq!(precision_at_k(&list(&names[..10]), &r10, 20), 0.25);
        assert_eq!(precision_at_k(&[], &r, 20), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let r = rels(&[("a", 1)]);
        assert_eq!(ndcg_at_k(&list(&["a", "b"]), &r, 20), 1.0);
        assert!((ndcg_at_k(&list(&["b", "a"]), &r, 20) - 0.6309297535714574).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&list(&["b"]), &rels(&[("b", 0)]), 20), 0.0);
    }

    fn run_of(lists: &[(&str, &[(&str, f64)])]) -> RankedRun {
        let mut run = RankedRun::new();
        for (q, e) in lists {
            run.insert(RankedList::new(*q, e.iter().map(|(d, s)| (d.to_string(), *s)).collect()).unwrap());
        }
        run
    }

    #[test]
    fn aqwv_examples() {
        let mut qrels = RelevanceJudgments::new();
        qrels.insert("q", "r1", 1);
        qrels.insert("q", "r2", 1);
        let run = run_of(&[("q", &[("r1", 3.0), ("x", 2.0), ("r2", 1.0)])]);
        let v = aqwv(&run, &qrels, 100, 40.0, 2.0);
        assert!((v - (1.0 - 0.5 - 40.0 / 98.0)).abs() < 1e-12);
        assert!((v - 0.09184).abs() < 5e-5);
        assert_eq!(aqwv(&run, &qrels, 100, 40.0, f64::INFINITY), 0.0);
        let exact = run_of(&[("q", &[("r1", 3.0), ("r2", 2.0), ("x", 1.0)])]);
        assert_eq!(aqwv(&exact, &qrels, 100, 40.0, 2.0), 1.0);
    }

    #[test]
    fn cutoff_search() {
        let mut qrels = RelevanceJudgments::new();
        qrels.insert("q", "r", 1);
        let run = run_of(&[("q", &[("r", 0.9), ("x", 0.5), ("y", 0.1)])]);
        let (t, v) = find_best_cutoff(&run, &qrels, 3, 40.0);
        assert_eq!((t, v), (0.9, 1.0));
        // huge beta: returning anything irrelevant is ruinous, nothing returned at best
        let run = run_of(&[("q", &[("x", 0.9), ("r", 0.5)])]);
        let (t, v) = find_best_cutoff(&run, &qrels, 3, 1e9);
        assert_eq!((t, v), (f64::INFINITY, 0.0));
    }

    #[test]
    fn report_outputs() {
        let mut qrels = RelevanceJudgments::new();
        qrels.insert("q1", "a", 1);
        qrels.insert("q2", "b", 2);
        qrels.insert("q3", "c", 0);
        let run = run_of(&[("q1", &[("a", 2.0), ("b", 1.0)]), ("q2", &[("a", 1.0), ("b", 0.5)])]);
        let rep = evaluate(&run, &qrels, 10, &EvalConfig::default()).unwrap();
        assert_eq!(rep.per_query.len(), 2);
        assert!((rep.map - 0.75).abs() < 1e-12);
        assert!(rep.to_table().contains("all"));
        let jsonl = rep.to_jsonl();
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("\"query_id\":\"all\""));
        let empty = RelevanceJudgments::new();
        assert!(evaluate(&run, &empty, 10, &EvalConfig::default()).is_err());
    }
}
