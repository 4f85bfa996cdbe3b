//! Word vectors, orthogonal Procrustes alignment and dictionary induction.
//!
//! Alignment always maps the target language into the source space: for a
//! lexicon pair `(s, t)` the solved map `W` minimizes `‖W·y_t − x_s‖`.

pub mod linalg;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_file, tokenize, Token};
use crate::{Error, Result};
pub use linalg::{random_orthogonal, svd_small, Matrix, Svd};
use linalg::{dot, norm};

/// Word vectors for one language. Unknown tokens look up as the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    tokens: Vec<Token>,
    vocab: HashMap<Token, usize>,
    vectors: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(tokens: Vec<Token>, vectors: Matrix) -> Result<Self> {
        if tokens.len() != vectors.rows() {
            return Err(Error::shape(
                "embeddings",
                format!("{} tokens for {} rows", tokens.len(), vectors.rows()),
            ));
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite("embeddings"));
        }
        let mut vocab = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if vocab.insert(t.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate embedding token {t}")));
            }
        }
        Ok(EmbeddingMatrix {
            tokens,
            vocab,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    /// The token's vector, or `None` when it is out of vocabulary.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.vectors.row(i))
    }

    /// The token's vector and an OOV flag; OOV tokens map to zeros.
    pub fn lookup(&self, token: &str) -> (Vec<f64>, bool) {
        match self.get(token) {
            Some(v) => (v.to_vec(), false),
            None => (vec![0.0; self.dim()], true),
        }
    }

    /// Stacks the vectors of a token sequence into a `len × dim` row-major buffer.
    pub fn embed_sequence(&self, tokens: &[Token]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; tokens.len() * d];
        for (i, t) in tokens.iter().enumerate() {
            if let Some(v) = self.get(t) {
                out[i * d..(i + 1) * d].copy_from_slice(v);
            }
        }
        out
    }

    pub fn parse_vec(src: &str, origin: &str) -> Result<Self> {
        let mut lines = src.lines().enumerate();
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| perr(1, "missing \"count dim\" header".into()))?;
        let hdr: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str| s.parse::<usize>().ok();
        let (count, dim) = match hdr.as_slice() {
            [c, d] => match (parse_usize(c), parse_usize(d)) {
                (Some(c), Some(d)) if d > 0 => (c, d),
                _ => return Err(perr(1, format!("bad header {header:?}"))),
            },
            _ => return Err(perr(1, format!("bad header {header:?}"))),
        };
        let mut tokens = Vec::with_capacity(count);
        let mut seen = HashSet::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (i, line) in lines {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(raw) = fields.next() else { continue };
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| perr(lineno, format!("bad number {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != dim {
                return Err(perr(
                    lineno,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(perr(lineno, "non-finite vector component".into()));
            }
            let mut toks = tokenize(raw);
            if toks.len() != 1 {
                log::warn!("{origin}:{lineno}: skipping untokenizable entry {raw:?}");
                continue;
            }
            let tok = toks.pop().expect("one token");
            if !seen.insert(tok.clone()) {
                log::warn!("{origin}:{lineno}: duplicate token {tok}; keeping first");
                continue;
            }
            tokens.push(tok);
            data.extend(values);
        }
        if tokens.len() != count {
            log::warn!(
                "{origin}: header announces {count} vectors, loaded {}",
                tokens.len()
            );
        }
        let rows = tokens.len();
        EmbeddingMatrix::new(tokens, Matrix::from_vec(rows, dim, data)?)
    }

    pub fn to_vec_format(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim());
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            for v in self.vectors.row(i) {
                write!(out, " {v}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    /// Copy with every row scaled to unit length (zero rows stay zero).
    pub fn normalized(&self) -> Matrix {
        let mut m = self.vectors.clone();
        for i in 0..m.rows() {
            let r = m.row_mut(i);
            let n = norm(r);
            if n > 0.0 {
                r.iter_mut().for_each(|x| *x /= n);
            }
        }
        m
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    EmbeddingMatrix::parse_vec(&read_file(path)?, &path.display().to_string())
}

/// Bilingual word pairs `(source, target)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    pub pairs: Vec<(Token, Token)>,
}

impl Lexicon {
    pub fn new(pairs: Vec<(Token, Token)>) -> Self {
        Lexicon { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn parse_tsv(src: &str, origin: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in src.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    msg: "expected \"source<TAB>target\"".into(),
                });
            }
            match (single_token(cols[0]), single_token(cols[1])) {
                (Some(s), Some(t)) => pairs.push((s, t)),
                _ => log::warn!("{origin}:{}: skipping multi-word entry", i + 1),
            }
        }
        Ok(Lexicon { pairs })
    }

    pub fn to_tsv(&self) -> String {
        self.pairs
            .iter()
            .map(|(s, t)| format!("{s}\t{t}\n"))
            .collect()
    }

    /// Source → targets, in file order.
    pub fn as_dictionary(&self) -> HashMap<Token, Vec<Token>> {
        let mut dict: HashMap<Token, Vec<Token>> = HashMap::new();
        for (s, t) in &self.pairs {
            let e = dict.entry(s.clone()).or_default();
            if !e.contains(t) {
                e.push(t.clone());
            }
        }
        dict
    }

    /// Drops pairs with a token missing from either embedding; returns the
    /// filtered lexicon and the number of dropped pairs.
    pub fn filter_oov(
        &self,
        source: &EmbeddingMatrix,
        target: &EmbeddingMatrix,
    ) -> (Lexicon, usize) {
        let kept: Vec<_> = self
            .pairs
            .iter()
            .filter(|(s, t)| source.contains(s) && target.contains(t))
            .cloned()
            .collect();
        let dropped = self.pairs.len() - kept.len();
        if dropped > 0 {
            log::info!("lexicon: filtered {dropped} OOV pairs, {} kept", kept.len());
        }
        (Lexicon { pairs: kept }, dropped)
    }
}

pub(crate) fn single_token(s: &str) -> Option<Token> {
    let mut t = tokenize(s);
    (t.len() == 1).then(|| t.pop().expect("one token"))
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    Lexicon::parse_tsv(&read_file(path)?, &path.display().to_string())
}

/// Orthogonal map `W` taking target-language vectors into the source space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    #[serde(with = "matrix_serde")]
    pub w: Matrix,
    pub source_lang: String,
    pub target_lang: String,
}

impl AlignmentMap {
    pub fn identity(dim: usize) -> Self {
        AlignmentMap {
            w: Matrix::identity(dim),
            source_lang: String::new(),
            target_lang: String::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    pub fn orthogonality_error(&self) -> f64 {
        self.w.orthogonality_error()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.w.mul_vec(v)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("alignment serializes");
        s.push('\n');
        s
    }

    pub fn from_json(src: &str, origin: &str) -> Result<Self> {
        let map: AlignmentMap = serde_json::from_str(src).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if map.w.rows() != map.w.cols() || !map.w.is_finite() {
            return Err(Error::data(format!("{origin}: alignment must be a finite square matrix")));
        }
        Ok(map)
    }
}

pub fn load_alignment(path: impl AsRef<Path>) -> Result<AlignmentMap> {
    let path = path.as_ref();
    AlignmentMap::from_json(&read_file(path)?, &path.display().to_string())
}

mod matrix_serde {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Raw {
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        Raw {
            rows: m.rows(),
            cols: m.cols(),
            values: m.data().to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let raw = Raw::deserialize(d)?;
        Matrix::from_vec(raw.rows, raw.cols, raw.values).map_err(serde::de::Error::custom)
    }
}

/// Solves `argmin_{W orthogonal} Σ_i ‖W·y_i − x_i‖²` for paired rows of `x`
/// (source) and `y` (target): `W = U·Vᵀ` where `U·S·Vᵀ = svd(Xᵀ·Y)`.
pub fn procrustes(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::shape(
            "procrustes",
            format!(
                "{}x{} vs {}x{}",
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            ),
        ));
    }
    if x.rows() == 0 {
        return Err(Error::data("procrustes needs at least one lexicon pair"));
    }
    let cross = x.transpose().matmul(y)?;
    let svd = svd_small(&cross)?;
    svd.u.matmul(&svd.v.transpose())
}

/// `‖W·Yᵀ − Xᵀ‖_F²`.
pub fn procrustes_loss(w: &Matrix, x: &Matrix, y: &Matrix) -> f64 {
    let mapped = y.matmul(&w.transpose()).expect("dims");
    let mut loss = 0.0;
    for (a, b) in mapped.data().iter().zip(x.data()) {
        loss += (a - b) * (a - b);
    }
    loss
}

/// Stacks the vectors of lexicon pairs into `(X, Y)`; OOV pairs are filtered first.
pub fn lexicon_matrices(
    lexicon: &Lexicon,
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
) -> Result<(Matrix, Matrix, usize)> {
    if source.dim() != target.dim() {
        return Err(Error::shape(
            "lexicon_matrices",
            format!("dims {} vs {}", source.dim(), target.dim()),
        ));
    }
    let (kept, dropped) = lexicon.filter_oov(source, target);
    let d = source.dim();
    let mut xs = Vec::with_capacity(kept.len() * d);
    let mut ys = Vec::with_capacity(kept.len() * d);
    for (s, t) in &kept.pairs {
        xs.extend_from_slice(source.get(s).expect("filtered"));
        ys.extend_from_slice(target.get(t).expect("filtered"));
    }
    let n = kept.len();
    Ok((Matrix::from_vec(n, d, xs)?, Matrix::from_vec(n, d, ys)?, dropped))
}

/// Procrustes on the in-vocabulary pairs of a lexicon.
pub fn align_with_lexicon(
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    lexicon: &Lexicon,
) -> Result<Matrix> {
    let (x, y, _) = lexicon_matrices(lexicon, source, target)?;
    if x.rows() == 0 {
        return Err(Error::data("lexicon is empty after OOV filtering"));
    }
    procrustes(&x, &y)
}

/// Rewrites every row `v` as `W·v`.
pub fn apply_alignment(map: &AlignmentMap, emb: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if map.dim() != emb.dim() || map.w.cols() != emb.dim() {
        return Err(Error::shape(
            "apply_alignment",
            format!("map {}x{} vs embeddings dim {}", map.w.rows(), map.w.cols(), emb.dim()),
        ));
    }
    let rotated = emb.vectors().matmul(&map.w.transpose())?;
    EmbeddingMatrix::new(emb.tokens().to_vec(), rotated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InductionMethod {
    Nn,
    Csls,
}

impl std::str::FromStr for InductionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(InductionMethod::Nn),
            "csls" => Ok(InductionMethod::Csls),
            other => Err(Error::Usage(format!("unknown induction method {other:?}"))),
        }
    }
}

pub const DEFAULT_CSLS_K: usize = 10;

/// Cross-language retrieval scores between aligned target rows and source rows.
struct Scores {
    /// `n_target × n_source`, row-major.
    sim: Vec<f64>,
    n_source: usize,
}

impl Scores {
    fn build(aligned_target: &EmbeddingMatrix, source: &EmbeddingMatrix, method: InductionMethod, k: usize) -> Self {
        let t = aligned_target.normalized();
        let s = source.normalized();
        let (nt, ns) = (t.rows(), s.rows());
        let mut sim = vec![0.0; nt * ns];
        for i in 0..nt {
            let ti = t.row(i);
            for j in 0..ns {
                sim[i * ns + j] = dot(ti, s.row(j));
            }
        }
        if method == InductionMethod::Csls {
            let k = k.max(1);
            // Mean similarity of each target row to its k nearest sources, and vice versa.
            let r_target: Vec<f64> = (0..nt)
                .map(|i| mean_top_k(sim[i * ns..(i + 1) * ns].iter().copied(), k))
                .collect();
            let r_source: Vec<f64> = (0..ns)
                .map(|j| mean_top_k((0..nt).map(|i| sim[i * ns + j]), k))
                .collect();
            for i in 0..nt {
                for j in 0..ns {
                    let c = &mut sim[i * ns + j];
                    *c = 2.0 * *c - r_target[i] - r_source[j];
                }
            }
        }
        Scores { sim, n_source: ns }
    }

    fn n_target(&self) -> usize {
        self.sim.len().checked_div(self.n_source).unwrap_or(0)
    }

    /// Best source for a target row; lowest index wins ties.
    fn best_source(&self, i: usize) -> Option<usize> {
        argmax(self.sim[i * self.n_source..(i + 1) * self.n_source].iter().copied())
    }

    fn best_target(&self, j: usize) -> Option<usize> {
        argmax((0..self.n_target()).map(|i| self.sim[i * self.n_source + j]))
    }
}

fn mean_top_k(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(v.len());
    v[..k].iter().sum::<f64>() / k as f64
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0)
}

/// Mutual nearest-neighbour lexicon between aligned target and source vocabularies.
pub fn induce_dictionary(
    aligned_target: &EmbeddingMatrix,
    source: &EmbeddingMatrix,
    method: InductionMethod,
    k_csls: usize,
) -> Result<Lexicon> {
    if aligned_target.dim() != source.dim() {
        return Err(Error::shape(
            "induce_dictionary",
            format!("dims {} vs {}", aligned_target.dim(), source.dim()),
        ));
    }
    let scores = Scores::build(aligned_target, source, method, k_csls);
    let back: Vec<Option<usize>> = (0..source.len()).map(|j| scores.best_target(j)).collect();
    let mut pairs = Vec::new();
    for i in 0..aligned_target.len() {
        if let Some(j) = scores.best_source(i) {
            if back[j] == Some(i) {
                pairs.push((source.tokens()[j].clone(), aligned_target.tokens()[i].clone()));
            }
        }
    }
    Ok(Lexicon { pairs })
}

/// Fraction of in-vocabulary test pairs whose aligned target word retrieves a
/// gold source translation as its nearest neighbour.
pub fn translation_accuracy(
    aligned_target: &EmbeddingMatrix,
    source: &EmbeddingMatrix,
    test: &Lexicon,
    method: InductionMethod,
    k_csls: usize,
) -> f64 {
    let (kept, _) = test.filter_oov(source, aligned_target);
    if kept.is_empty() {
        return 0.0;
    }
    let mut gold: HashMap<&str, HashSet<&str>> = HashMap::new();
    for (s, t) in &kept.pairs {
        gold.entry(t.as_str()).or_default().insert(s.as_str());
    }
    let scores = Scores::build(aligned_target, source, method, k_csls);
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut targets: Vec<&&str> = gold.keys().collect();
    targets.sort();
    for t in targets {
        let i = aligned_target.index_of(t).expect("filtered");
        total += 1;
        if let Some(j) = scores.best_source(i) {
            if gold[*t].contains(source.tokens()[j].as_str()) {
                correct += 1;
            }
        }
    }
    correct as f64 / total as f64
}

#[derive(Debug, Clone)]
pub struct RefinementOptions {
    pub iters: usize,
    pub method: InductionMethod,
    pub k_csls: usize,
}

impl Default for RefinementOptions {
    fn default() -> Self {
        RefinementOptions {
            iters: 5,
            method: InductionMethod::Nn,
            k_csls: DEFAULT_CSLS_K,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementReport {
    /// Held-out accuracy per round (empty without a test lexicon).
    pub accuracy: Vec<f64>,
    /// Lexicon size used to solve each round.
    pub lexicon_sizes: Vec<usize>,
    /// 1-based round whose map was returned.
    pub selected_round: usize,
    pub dropped_oov: usize,
}

/// Alternates Procrustes and dictionary induction, starting from `seed`.
pub fn iterative_procrustes(
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    seed: &Lexicon,
    test: Option<&Lexicon>,
    opts: &RefinementOptions,
) -> Result<(AlignmentMap, RefinementReport)> {
    if opts.iters == 0 {
        return Err(Error::Usage("refinement needs iters >= 1".into()));
    }
    let (seed_kept, dropped) = seed.filter_oov(source, target);
    if seed_kept.is_empty() {
        return Err(Error::data("seed lexicon is empty after OOV filtering"));
    }
    let mut lexicon = seed_kept;
    let mut maps = Vec::with_capacity(opts.iters);
    let mut report = RefinementReport {
        accuracy: Vec::new(),
        lexicon_sizes: Vec::new(),
        selected_round: opts.iters,
        dropped_oov: dropped,
    };
    for round in 1..=opts.iters {
        let w = align_with_lexicon(source, target, &lexicon)?;
        report.lexicon_sizes.push(lexicon.len());
        let map = AlignmentMap {
            w,
            source_lang: String::new(),
            target_lang: String::new(),
        };
        let aligned = apply_alignment(&map, target)?;
        if let Some(test) = test {
            let acc = translation_accuracy(&aligned, source, test, opts.method, opts.k_csls);
            log::info!("align round={round} lexicon={} accuracy={acc:.4}", lexicon.len());
            report.accuracy.push(acc);
        }
        maps.push(map);
        if round < opts.iters {
            let induced = induce_dictionary(&aligned, source, opts.method, opts.k_csls)?;
            if induced.is_empty() {
                log::warn!("round {round}: induced lexicon empty; reusing previous lexicon");
            } else {
                lexicon = induced;
            }
        }
    }
    if !report.accuracy.is_empty() {
        // earliest round among the best
        let mut best = 0;
        for (i, &a) in report.accuracy.iter().enumerate() {
            if a > report.accuracy[best] {
                best = i;
            }
        }
        report.selected_round = best + 1;
    }
    let map = maps.swap_remove(report.selected_round - 1);
    Ok((map, report))
}
