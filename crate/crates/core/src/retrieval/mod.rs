//! Inverted index and first-stage query-likelihood retrieval with Dirichlet
//! smoothing, plus DBQT and PSQ query translation.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_file, BilingualRecord, CollectionStats, Corpus, Side, Token};
use crate::embeddings::single_token;
use crate::run::{RankedList, RankedRun};
use crate::{Error, Result};

pub const DEFAULT_MU: f64 = 1000.0;
pub const DEFAULT_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    pub side: Side,
    /// Document ids in ascending order; postings refer to positions here.
    doc_ids: Vec<String>,
    doc_len: Vec<u64>,
    postings: BTreeMap<Token, Vec<(u32, u32)>>,
    pub stats: CollectionStats,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus, side: Side) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::data("cannot index an empty corpus"));
        }
        if side == Side::Translated && corpus.iter().all(|d| d.translated_terms.is_empty()) {
            return Err(Error::data(
                "cannot index the translated side: every translation is empty",
            ));
        }
        let mut docs: Vec<&BilingualRecord> = corpus.iter().collect();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let stats = CollectionStats::from_sequences(docs.iter().map(|d| d.side(side)))?;
        let mut postings: BTreeMap<Token, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        let mut counts: HashMap<&Token, u32> = HashMap::new();
        for (n, doc) in docs.iter().enumerate() {
            let terms = doc.side(side);
            doc_len.push(terms.len() as u64);
            counts.clear();
            for t in terms {
                *counts.entry(t).or_insert(0) += 1;
            }
            for (t, tf) in counts.drain() {
                postings.entry(t.clone()).or_default().push((n as u32, tf));
            }
        }
        Ok(InvertedIndex {
            side,
            doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
            doc_len,
            postings,
            stats,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    fn doc_number(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(doc_id))
            .ok()
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u64> {
        self.doc_number(doc_id).map(|n| self.doc_len[n])
    }

    /// `(doc_id, tf)` postings of a term, ascending by document id.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|p| {
                p.iter()
                    .map(|&(n, tf)| (self.doc_ids[n as usize].as_str(), tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn tf(&self, term: &str, doc_id: &str) -> u32 {
        let Some(n) = self.doc_number(doc_id) else { return 0 };
        self.tf_at(term, n)
    }

    fn tf_at(&self, term: &str, n: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| {
                p.binary_search_by_key(&(n as u32), |e| e.0)
                    .ok()
                    .map(|i| p[i].1)
            })
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(src: &str) -> Result<Self> {
        serde_json::from_str(src).map_err(|e| Error::data(format!("bad index file: {e}")))
    }
}

pub fn build_index(corpus: &Corpus, side: Side) -> Result<InvertedIndex> {
    InvertedIndex::build(corpus, side)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<InvertedIndex> {
    InvertedIndex::from_json(&read_file(path.as_ref())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTerm {
    pub term: Token,
    pub weight: f64,
}

/// How the alternatives inside one group combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combination {
    /// Every alternative is an independent query term: `Σ w · ln p(t|d)`.
    Independent,
    /// Alternatives of a group share one probability through expected term
    /// and collection frequencies (probabilistic structured query).
    Structured,
}

/// Query terms grouped by the source term they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedQuery {
    pub groups: Vec<Vec<WeightedTerm>>,
    pub combination: Combination,
}

impl WeightedQuery {
    /// Every token with weight one.
    pub fn plain(terms: &[Token]) -> Self {
        WeightedQuery {
            groups: terms
                .iter()
                .map(|t| vec![WeightedTerm { term: t.clone(), weight: 1.0 }])
                .collect(),
            combination: Combination::Independent,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.groups.iter().all(Vec::is_empty)
    }

    pub fn entries(&self) -> impl Iterator<Item = &WeightedTerm> {
        self.groups.iter().flatten()
    }
}

/// Replaces each term by all of its dictionary translations with weight one;
/// terms without an entry are dropped.
pub fn translate_query_dbqt(query: &[Token], dictionary: &HashMap<Token, Vec<Token>>) -> WeightedQuery {
    let mut groups = Vec::new();
    for t in query {
        if let Some(translations) = dictionary.get(t) {
            for f in translations {
                groups.push(vec![WeightedTerm { term: f.clone(), weight: 1.0 }]);
            }
        }
    }
    WeightedQuery {
        groups,
        combination: Combination::Independent,
    }
}

/// `source → [(target, p(target|source))]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranslationTable {
    entries: BTreeMap<Token, Vec<(Token, f64)>>,
}

impl TranslationTable {
    pub fn new(entries: BTreeMap<Token, Vec<(Token, f64)>>) -> Result<Self> {
        for (s, alts) in &entries {
            let mut total = 0.0;
            for (_, p) in alts {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::data(format!("probability {p} for {s} outside (0, 1]")));
                }
                total += p;
            }
            if total > 1.0 + 1e-9 {
                return Err(Error::data(format!("probabilities for {s} sum to {total} > 1")));
            }
        }
        Ok(TranslationTable { entries })
    }

    /// Deterministic table: every dictionary translation with probability 1
    /// (only valid when each source word has exactly one translation).
    pub fn deterministic(pairs: &[(Token, Token)]) -> Result<Self> {
        let mut entries: BTreeMap<Token, Vec<(Token, f64)>> = BTreeMap::new();
        for (s, t) in pairs {
            entries.entry(s.clone()).or_default().push((t.clone(), 1.0));
        }
        TranslationTable::new(entries)
    }

    pub fn get(&self, source: &str) -> Option<&[(Token, f64)]> {
        self.entries.get(source).map(Vec::as_slice)
    }

    pub fn parse_tsv(src: &str, origin: &str) -> Result<Self> {
        let mut entries: BTreeMap<Token, Vec<(Token, f64)>> = BTreeMap::new();
        for (i, line) in src.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: &str| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(perr("expected \"source<TAB>target<TAB>prob\""));
            }
            let p: f64 = cols[2].trim().parse().map_err(|_| perr("bad probability"))?;
            let (Some(s), Some(t)) = (single_token(cols[0]), single_token(cols[1])) else {
                log::warn!("{origin}:{}: skipping multi-word entry", i + 1);
                continue;
            };
            entries.entry(s).or_default().push((t, p));
        }
        TranslationTable::new(entries)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, alts) in &self.entries {
            for (t, p) in alts {
                out.push_str(&format!("{s}\t{t}\t{p}\n"));
            }
        }
        out
    }
}

pub fn load_translation_table(path: impl AsRef<Path>) -> Result<TranslationTable> {
    let path = path.as_ref();
    TranslationTable::parse_tsv(&read_file(path)?, &path.display().to_string())
}

/// One structured group per source term, weighted by `p(f|e)`; terms absent
/// from the table are dropped.
pub fn expand_query_psq(query: &[Token], table: &TranslationTable) -> WeightedQuery {
    let groups = query
        .iter()
        .filter_map(|e| table.get(e))
        .map(|alts| {
            alts.iter()
                .map(|(f, p)| WeightedTerm { term: f.clone(), weight: *p })
                .collect()
        })
        .collect();
    WeightedQuery {
        groups,
        combination: Combination::Structured,
    }
}

/// Dirichlet-smoothed log-likelihood of `query` under one document, given the
/// query's term frequencies in that document (aligned with `query.entries()`).
fn score_with_tfs(query: &WeightedQuery, tfs: &[u32], doc_len: u64, stats: &CollectionStats, mu: f64) -> f64 {
    let total = stats.total_terms as f64;
    let denom = (doc_len as f64 + mu).ln();
    let mut score = 0.0;
    let mut k = 0;
    for group in &query.groups {
        match query.combination {
            Combination::Independent => {
                for wt in group {
                    let cf = stats.cf(&wt.term);
                    if cf > 0 {
                        let p_c = cf as f64 / total;
                        score += wt.weight * ((tfs[k] as f64 + mu * p_c).ln() - denom);
                    }
                    k += 1;
                }
            }
            Combination::Structured => {
                let (mut tf_e, mut cf_e) = (0.0, 0.0);
                for wt in group {
                    tf_e += wt.weight * tfs[k] as f64;
                    cf_e += wt.weight * stats.cf(&wt.term) as f64;
                    k += 1;
                }
                if cf_e > 0.0 {
                    let p_c = cf_e / total;
                    score += (tf_e + mu * p_c).ln() - denom;
                }
            }
        }
    }
    score
}

/// Query-likelihood score of one document.
pub fn ql_score(query: &WeightedQuery, doc_id: &str, index: &InvertedIndex, mu: f64) -> Result<f64> {
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::Usage(format!("Dirichlet mu must be positive, got {mu}")));
    }
    let n = index
        .doc_number(doc_id)
        .ok_or_else(|| Error::data(format!("unknown document {doc_id}")))?;
    let tfs: Vec<u32> = query.entries().map(|wt| index.tf_at(&wt.term, n)).collect();
    Ok(score_with_tfs(query, &tfs, index.doc_len[n], &index.stats, mu))
}

#[derive(PartialEq)]
struct Scored(f64, usize);

impl Eq for Scored {}

impl Ord for Scored {
    // Larger is better: higher score, then smaller doc number.
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Document-at-a-time top-k over the postings of the query terms. Documents
/// matching no query term are not scored.
pub fn retrieve_topk(
    index: &InvertedIndex,
    query_id: &str,
    query: &WeightedQuery,
    k: usize,
    mu: f64,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Usage("k must be at least 1".into()));
    }
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::Usage(format!("Dirichlet mu must be positive, got {mu}")));
    }
    let lists: Vec<&[(u32, u32)]> = query
        .entries()
        .map(|wt| {
            if wt.weight > 0.0 {
                index.postings.get(&wt.term).map_or(&[][..], Vec::as_slice)
            } else {
                &[][..]
            }
        })
        .collect();
    let mut cursors = vec![0usize; lists.len()];
    // min-heap of (next doc number, list index)
    let mut frontier: BinaryHeap<Reverse<(u32, usize)>> = lists
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| Reverse((l[0].0, i)))
        .collect();
    let mut top: BinaryHeap<Reverse<Scored>> = BinaryHeap::with_capacity(k + 1);
    let mut tfs = vec![0u32; lists.len()];
    while let Some(&Reverse((doc, _))) = frontier.peek() {
        tfs.iter_mut().for_each(|t| *t = 0);
        while let Some(&Reverse((d, i))) = frontier.peek() {
            if d != doc {
                break;
            }
            frontier.pop();
            tfs[i] = lists[i][cursors[i]].1;
            cursors[i] += 1;
            if let Some(&(next, _)) = lists[i].get(cursors[i]) {
                frontier.push(Reverse((next, i)));
            }
        }
        let n = doc as usize;
        let s = score_with_tfs(query, &tfs, index.doc_len[n], &index.stats, mu);
        top.push(Reverse(Scored(s, n)));
        if top.len() > k {
            top.pop();
        }
    }
    let entries = top
        .into_iter()
        .map(|Reverse(Scored(s, n))| (index.doc_ids[n].clone(), s))
        .collect();
    RankedList::new(query_id, entries)
}

/// First-stage retrieval mode.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchMode {
    /// Plain query likelihood. Against a translated-side index the source
    /// query is used; against an original-side index, its translation.
    Ql,
    Dbqt(HashMap<Token, Vec<Token>>),
    Psq(TranslationTable),
}

impl SearchMode {
    pub fn tag(&self, side: Side) -> String {
        match self {
            SearchMode::Ql => format!("ql-{side}"),
            SearchMode::Dbqt(_) => "dbqt".into(),
            SearchMode::Psq(_) => "psq".into(),
        }
    }

    pub fn weighted_query(&self, query: &BilingualRecord, side: Side) -> Result<WeightedQuery> {
        match self {
            SearchMode::Ql => Ok(WeightedQuery::plain(match side {
                Side::Translated => &query.terms,
                Side::Original => &query.translated_terms,
            })),
            SearchMode::Dbqt(dict) => {
                require_original(side)?;
                Ok(translate_query_dbqt(&query.terms, dict))
            }
            SearchMode::Psq(table) => {
                require_original(side)?;
                Ok(expand_query_psq(&query.terms, table))
            }
        }
    }
}

fn require_original(side: Side) -> Result<()> {
    if side != Side::Original {
        return Err(Error::Usage(
            "query translation modes need an index over original-language documents".into(),
        ));
    }
    Ok(())
}

/// Runs every query and collects a run.
pub fn search(index: &InvertedIndex, queries: &Corpus, mode: &SearchMode, k: usize, mu: f64) -> Result<RankedRun> {
    let mut run = RankedRun::new();
    for q in queries {
        let wq = mode.weighted_query(q, index.side)?;
        run.insert(retrieve_topk(index, &q.id, &wq, k, mu)?);
    }
    Ok(run)
}
