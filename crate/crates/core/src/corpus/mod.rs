//! Bilingual documents and queries, tokenization, TREC qrels and collection
//! statistics.

mod synth;

pub use synth::{gen_cipher_dataset, CipherDataset, GenConfig, Split};

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A lowercase, whitespace-free, non-empty term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    /// Builds a token from a surface string that is already normalized.
    pub(crate) fn from_normalized(s: impl Into<String>) -> Self {
        let s = s.into();
        debug_assert!(!s.is_empty() && !s.chars().any(char::is_whitespace));
        Token(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Deref for Token {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for Token {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercases, splits on whitespace and strips leading/trailing punctuation.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .filter_map(|raw| {
            let lower = raw.to_lowercase();
            let t = lower.trim_matches(|c: char| !c.is_alphanumeric());
            (!t.is_empty()).then(|| Token(t.to_string()))
        })
        .collect()
}

/// Which token sequence of a record to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Original,
    Translated,
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Side::Original),
            "translated" => Ok(Side::Translated),
            other => Err(Error::Usage(format!(
                "unknown side {other:?} (expected original|translated)"
            ))),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Original => "original",
            Side::Translated => "translated",
        })
    }
}

/// A document or query: its original-language terms plus a translation into
/// the other language (possibly empty).
#[derive(Debug, Clone, PartialEq)]
pub struct BilingualRecord {
    pub id: String,
    pub lang: String,
    pub terms: Vec<Token>,
    pub translated_terms: Vec<Token>,
}

pub type BilingualDocument = BilingualRecord;
pub type BilingualQuery = BilingualRecord;

impl BilingualRecord {
    pub fn side(&self, side: Side) -> &[Token] {
        match side {
            Side::Original => &self.terms,
            Side::Translated => &self.translated_terms,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    lang: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    translation: Option<String>,
}

/// An ordered set of records with unique ids. Used for documents and queries.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<BilingualRecord>,
    by_id: HashMap<String, usize>,
}

pub type QuerySet = Corpus;

impl Corpus {
    pub fn new(records: Vec<BilingualRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.terms.is_empty() {
                return Err(Error::data(format!("record {} has no terms", r.id)));
            }
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate id {}", r.id)));
            }
        }
        Ok(Corpus { records, by_id })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[BilingualRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BilingualRecord> {
        self.records.iter()
    }

    pub fn get(&self, id: &str) -> Option<&BilingualRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    /// Records whose ids are listed, in the given order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Corpus> {
        let recs = ids
            .into_iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::data(format!("unknown id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(recs)
    }

    /// Serializes in the JSON-lines record format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = RecordLine {
                id: r.id.clone(),
                lang: r.lang.clone(),
                text: join_tokens(&r.terms),
                translation: if r.translated_terms.is_empty() {
                    None
                } else {
                    Some(join_tokens(&r.translated_terms))
                },
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(src: &str, origin: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashMap::new();
        for (lineno, line) in src.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            if seen.insert(parsed.id.clone(), lineno + 1).is_some() {
                return Err(Error::data(format!("duplicate id {}", parsed.id)));
            }
            let terms = tokenize(&parsed.text);
            if terms.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno + 1,
                    msg: format!("record {} has empty text", parsed.id),
                });
            }
            records.push(BilingualRecord {
                id: parsed.id,
                lang: parsed.lang,
                terms,
                translated_terms: parsed.translation.as_deref().map(tokenize).unwrap_or_default(),
            });
        }
        Corpus::new(records)
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a BilingualRecord;
    type IntoIter = std::slice::Iter<'a, BilingualRecord>;
    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

pub(crate) fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(Token::as_str).collect::<Vec<_>>().join(" ")
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_documents(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    Corpus::parse_jsonl(&read_file(path)?, &path.display().to_string())
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    load_documents(path)
}

/// Graded relevance labels keyed by query id, then document id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelevanceJudgments {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl RelevanceJudgments {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a grade, returning the previous one if the pair was already judged.
    pub fn insert(&mut self, qid: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.grades
            .entry(qid.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> Option<u32> {
        self.grades.get(qid).and_then(|m| m.get(doc_id)).copied()
    }

    /// Grades for one query; empty map when the query is unjudged.
    pub fn for_query(&self, qid: &str) -> &BTreeMap<String, u32> {
        static EMPTY: BTreeMap<String, u32> = BTreeMap::new();
        self.grades.get(qid).unwrap_or(&EMPTY)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    /// Judgments of the given queries only.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> RelevanceJudgments {
        let mut grades = BTreeMap::new();
        for id in ids {
            if let Some(m) = self.grades.get(id) {
                grades.insert(id.to_string(), m.clone());
            }
        }
        RelevanceJudgments { grades }
    }

    pub fn num_relevant(&self, qid: &str) -> usize {
        self.for_query(qid).values().filter(|&&g| g >= 1).count()
    }

    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let mut qrels = RelevanceJudgments::new();
        for (lineno, line) in src.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg,
            };
            if fields.len() != 4 {
                return Err(err(format!(
                    "expected 4 fields \"qid 0 docid grade\", found {}",
                    fields.len()
                )));
            }
            let grade: i64 = fields[3]
                .parse()
                .map_err(|_| err(format!("non-integer grade {:?}", fields[3])))?;
            if grade < 0 {
                return Err(err(format!("negative grade {grade}")));
            }
            if qrels
                .insert(fields[0], fields[2], grade as u32)
                .is_some()
            {
                log::warn!(
                    "{origin}:{}: repeated judgment for ({}, {}); last value wins",
                    lineno + 1,
                    fields[0],
                    fields[2]
                );
            }
        }
        Ok(qrels)
    }

    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.grades {
            for (d, g) in docs {
                out.push_str(&format!("{q} 0 {d} {g}\n"));
            }
        }
        out
    }
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<RelevanceJudgments> {
    let path = path.as_ref();
    RelevanceJudgments::parse(&read_file(path)?, &path.display().to_string())
}

/// Term and document frequencies over one side of a collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub n_docs: usize,
    pub total_terms: u64,
    pub cf: BTreeMap<Token, u64>,
    pub df: BTreeMap<Token, u64>,
    pub avg_doc_len: f64,
}

impl CollectionStats {
    pub fn from_sequences<'a, I>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [Token]>,
    {
        let mut n_docs = 0;
        let mut total_terms = 0u64;
        let mut cf: BTreeMap<Token, u64> = BTreeMap::new();
        let mut df: BTreeMap<Token, u64> = BTreeMap::new();
        let mut seen: Vec<&Token> = Vec::new();
        for terms in docs {
            n_docs += 1;
            total_terms += terms.len() as u64;
            seen.clear();
            for t in terms {
                *cf.entry(t.clone()).or_insert(0) += 1;
                seen.push(t);
            }
            seen.sort_unstable();
            seen.dedup();
            for t in &seen {
                *df.entry((*t).clone()).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::data("collection statistics need a non-empty corpus"));
        }
        Ok(CollectionStats {
            n_docs,
            total_terms,
            cf,
            df,
            avg_doc_len: total_terms as f64 / n_docs as f64,
        })
    }

    /// `ln(N / df)`, or `ln(N + 1)` for terms never seen in the collection.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        match self.df.get(term) {
            Some(&df) => (n / df as f64).ln(),
            None => (n + 1.0).ln(),
        }
    }

    pub fn cf(&self, term: &str) -> u64 {
        self.cf.get(term).copied().unwrap_or(0)
    }

    pub fn df(&self, term: &str) -> u64 {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// Collection language model `cf(t) / total_terms`.
    pub fn p_collection(&self, term: &str) -> f64 {
        self.cf(term) as f64 / self.total_terms as f64
    }
}

/// Statistics over the original-language `terms` of every document.
pub fn collection_stats(corpus: &Corpus) -> Result<CollectionStats> {
    side_stats(corpus, Side::Original)
}

pub fn side_stats(corpus: &Corpus, side: Side) -> Result<CollectionStats> {
    CollectionStats::from_sequences(corpus.iter().map(|d| d.side(side)))
}
