//! Ranked lists and TREC run files (`qid Q0 docid rank score tag`).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::read_file;
use crate::{Error, Result};

/// `(score desc, doc_id asc)`.
pub fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Scored documents for one query, kept in `(score desc, doc_id asc)` order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub query_id: String,
    entries: Vec<(String, f64)>,
}

impl RankedList {
    /// Sorts the entries; duplicate document ids are rejected.
    pub fn new(query_id: impl Into<String>, mut entries: Vec<(String, f64)>) -> Result<Self> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(entries.len());
        for (d, s) in &entries {
            if !seen.insert(d.as_str()) {
                return Err(Error::data(format!("duplicate document {d} for query {query_id}")));
            }
            if s.is_nan() {
                return Err(Error::NonFinite("ranked list score"));
            }
        }
        entries.sort_by(rank_order);
        Ok(RankedList { query_id, entries })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.0.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

/// Ranked lists keyed by query id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedRun {
    lists: BTreeMap<String, RankedList>,
}

impl RankedRun {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, list: RankedList) {
        self.lists.insert(list.query_id.clone(), list);
    }

    pub fn get(&self, qid: &str) -> Option<&RankedList> {
        self.lists.get(qid)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RankedList> {
        self.lists.values()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.lists.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    /// The lists of the given queries (queries absent from the run are skipped).
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> RankedRun {
        let mut out = RankedRun::new();
        for id in ids {
            if let Some(l) = self.lists.get(id) {
                out.insert(l.clone());
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn to_trec(&self, tag: &str) -> String {
        let mut out = String::new();
        for list in self.lists.values() {
            for (rank, (doc, score)) in list.entries.iter().enumerate() {
                writeln!(out, "{} Q0 {} {} {} {}", list.query_id, doc, rank + 1, score, tag)
                    .expect("string write");
            }
        }
        out
    }

    /// Parses a TREC run. Entries are re-sorted by score; the file's rank
    /// column is not trusted.
    pub fn parse_trec(src: &str, origin: &str) -> Result<Self> {
        let mut raw: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (i, line) in src.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            if f.len() != 6 {
                return Err(perr(format!(
                    "expected 6 fields \"qid Q0 docid rank score tag\", found {}",
                    f.len()
                )));
            }
            f[3].parse::<u64>()
                .map_err(|_| perr(format!("bad rank {:?}", f[3])))?;
            let score: f64 = f[4]
                .parse()
                .map_err(|_| perr(format!("bad score {:?}", f[4])))?;
            raw.entry(f[0].to_string())
                .or_default()
                .push((f[2].to_string(), score));
        }
        let mut run = RankedRun::new();
        for (q, entries) in raw {
            run.insert(RankedList::new(q, entries)?);
        }
        Ok(run)
    }
}

pub fn load_run(path: impl AsRef<Path>) -> Result<RankedRun> {
    let path = path.as_ref();
    RankedRun::parse_trec(&read_file(path)?, &path.display().to_string())
}
