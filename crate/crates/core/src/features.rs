//! Hand-crafted reranking features fused linearly with the neural score.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{CollectionStats, Token};
use crate::{Error, Result};

pub const NUM_FEATURES: usize = 4;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["ql", "exact", "exact_idf", "bigram"];
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// First-stage query-likelihood log-probability.
    pub f_ql: f64,
    /// Fraction of unique query terms occurring in the document.
    pub f_exact: f64,
    /// IDF-weighted fraction of unique query terms occurring in the document.
    pub f_exact_idf: f64,
    /// Fraction of adjacent query bigrams occurring adjacently in the document.
    pub f_bigram: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [self.f_ql, self.f_exact, self.f_exact_idf, self.f_bigram]
    }
}

pub fn extract_features(query: &[Token], doc: &[Token], stats: &CollectionStats, ql_score: f64) -> FeatureVector {
    let doc_terms: HashSet<&str> = doc.iter().map(Token::as_str).collect();
    let mut unique: Vec<&str> = query.iter().map(Token::as_str).collect();
    unique.sort_unstable();
    unique.dedup();

    let (mut matched, mut idf_matched, mut idf_total) = (0usize, 0.0, 0.0);
    for t in &unique {
        let idf = stats.idf(t);
        idf_total += idf;
        if doc_terms.contains(t) {
            matched += 1;
            idf_matched += idf;
        }
    }
    let f_exact = if unique.is_empty() { 0.0 } else { matched as f64 / unique.len() as f64 };
    let f_exact_idf = if idf_total > 0.0 { idf_matched / idf_total } else { 0.0 };

    let f_bigram = if query.len() < 2 {
        0.0
    } else {
        let doc_bigrams: HashSet<(&str, &str)> = doc.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
        let hits = query
            .windows(2)
            .filter(|w| doc_bigrams.contains(&(w[0].as_str(), w[1].as_str())))
            .count();
        hits as f64 / (query.len() - 1) as f64
    };

    FeatureVector {
        f_ql: ql_score,
        f_exact,
        f_exact_idf,
        f_bigram,
    }
}

/// Per-feature z-scoring statistics frozen from training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub means: [f64; NUM_FEATURES],
    pub stds: [f64; NUM_FEATURES],
}

impl Default for FeatureStats {
    /// The identity transform.
    fn default() -> Self {
        FeatureStats {
            means: [0.0; NUM_FEATURES],
            stds: [1.0; NUM_FEATURES],
        }
    }
}

impl FeatureStats {
    /// Population mean and standard deviation per column, std floored at
    /// [`STD_FLOOR`].
    pub fn fit(rows: &[FeatureVector]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::data("feature standardization needs at least 2 rows"));
        }
        let n = rows.len() as f64;
        let mut means = [0.0; NUM_FEATURES];
        for r in rows {
            for (m, x) in means.iter_mut().zip(r.to_array()) {
                *m += x / n;
            }
        }
        for (j, m) in means.iter_mut().enumerate() {
            let first = rows[0].to_array()[j];
            if rows.iter().all(|r| r.to_array()[j] == first) {
                *m = first;
            }
        }
        let mut stds = [0.0; NUM_FEATURES];
        for r in rows {
            for (j, x) in r.to_array().into_iter().enumerate() {
                stds[j] += (x - means[j]).powi(2) / n;
            }
        }
        for s in &mut stds {
            *s = s.sqrt().max(STD_FLOOR);
        }
        Ok(FeatureStats { means, stds })
    }

    pub fn transform(&self, f: &FeatureVector) -> [f64; NUM_FEATURES] {
        let mut out = f.to_array();
        for j in 0..NUM_FEATURES {
            out[j] = (out[j] - self.means[j]) / self.stds[j];
        }
        out
    }
}

/// Fits statistics on `rows` and returns them with the transformed rows.
pub fn standardize_features(rows: &[FeatureVector]) -> Result<(FeatureStats, Vec<[f64; NUM_FEATURES]>)> {
    let stats = FeatureStats::fit(rows)?;
    let out = rows.iter().map(|r| stats.transform(r)).collect();
    Ok((stats, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn stats_with_idf(idf: &[(&str, u64)], n_docs: usize) -> CollectionStats {
        let df: BTreeMap<Token, u64> = idf.iter().map(|(t, d)| (tokenize(t).remove(0), *d)).collect();
        CollectionStats {
            n_docs,
            total_terms: 100,
            cf: df.clone(),
            df,
            avg_doc_len: 10.0,
        }
    }

    fn empty_stats() -> CollectionStats {
        stats_with_idf(&[], 10)
    }

    #[test]
    fn exact_fraction() {
        let f = extract_features(&tokenize("a b"), &tokenize("x a y"), &empty_stats(), -3.0);
        assert_eq!(f.f_exact, 0.5);
        assert_eq!(f.f_ql, -3.0);
    }

    #[test]
    fn bigram_fraction() {
        let f = extract_features(&tokenize("a b c"), &tokenize("a b x c b"), &empty_stats(), 0.0);
        assert_eq!(f.f_bigram, 0.5);
        let f = extract_features(&tokenize("a"), &tokenize("a"), &empty_stats(), 0.0);
        assert_eq!(f.f_bigram, 0.0);
    }

    #[test]
    fn idf_weighted_fraction() {
        let s = stats_with_idf(&[("a", 1), ("b", 10)], 100);
        let (ia, ib) = (100f64.ln(), 10f64.ln());
        let f = extract_features(&tokenize("a b"), &tokenize("a"), &s, 0.0);
        assert!((f.f_exact_idf - ia / (ia + ib)).abs() < 1e-12);
        assert!((f.f_exact_idf - 2.0 / 3.0).abs() < 1e-12);
        // zero denominator: every query term ubiquitous
        let s = stats_with_idf(&[("a", 5)], 5);
        assert_eq!(extract_features(&tokenize("a"), &tokenize("a"), &s, 0.0).f_exact_idf, 0.0);
    }

    #[test]
    fn standardization() {
        let rows: Vec<FeatureVector> = (0..10)
            .map(|i| FeatureVector { f_ql: -(i as f64) * 3.0, f_exact: 0.5, f_exact_idf: (i % 3) as f64 / 3.0, f_bigram: (i as f64).sqrt() / 4.0 })
            .collect();
        let (_, out) = standardize_features(&rows).unwrap();
        for j in 0..NUM_FEATURES {
            let col: Vec<f64> = out.iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9);
            if j == 1 {
                assert!(col.iter().all(|&x| x == 0.0));
            } else {
                assert!((var.sqrt() - 1.0).abs() < 1e-6);
            }
        }
        assert!(FeatureStats::fit(&rows[..1]).is_err());
    }

    fn terms() -> impl Strategy<Value = Vec<Token>> {
        proptest::collection::vec("[a-f]", 1..8).prop_map(|v| tokenize(&v.join(" ")))
    }

    proptest! {
        #[test]
        fn fractions_bounded(q in terms(), d in terms()) {
            let s = stats_with_idf(&[("a", 1), ("b", 3), ("c", 10)], 10);
            let f = extract_features(&q, &d, &s, -1.0);
            for x in [f.f_exact, f.f_exact_idf, f.f_bigram] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn exact_is_order_invariant_and_dedups(q in terms(), d in terms()) {
            let s = empty_stats();
            let mut rev = d.clone();
            rev.reverse();
            let a = extract_features(&q, &d, &s, 0.0);
            prop_assert_eq!(a.f_exact, extract_features(&q, &rev, &s, 0.0).f_exact);
            let mut doubled = q.clone();
            doubled.extend(q.iter().cloned());
            prop_assert_eq!(a.f_exact, extract_features(&doubled, &d, &s, 0.0).f_exact);
        }
    }

    #[test]
    fn bigram_depends_on_order() {
        let q = tokenize("a b");
        let f1 = extract_features(&q, &tokenize("a b"), &empty_stats(), 0.0);
        let f2 = extract_features(&q, &tokenize("b a"), &empty_stats(), 0.0);
        assert_eq!((f1.f_bigram, f2.f_bigram), (1.0, 0.0));
        assert_eq!(f1.f_exact, f2.f_exact);
    }
}
