//! Term-interaction rankers (POSIT-DRMM, PACRR, PACRR-DRMM) and the
//! four-component bilingual scorer with linear feature fusion.
//!
//! Queries are in the source language (`Q`) with a target-language
//! translation (`Q̂`); documents are in the target language (`D`) with a
//! source-language translation (`D̂`). Source-language terms look up source
//! embeddings and target-language terms look up target embeddings already
//! aligned into the source space.

mod pacrr;
mod posit;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::corpus::{side_stats, BilingualRecord, CollectionStats, Corpus, Side, Token};
use crate::embeddings::EmbeddingMatrix;
use crate::features::NUM_FEATURES;
use crate::{Error, Result};

pub use pacrr::{feature_matrix, idf_column, pacrr_drmm_term_scores, score_pacrr, score_pacrr_drmm};
pub use posit::{encode_posit, score_posit_drmm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    PositDrmm,
    Pacrr,
    PacrrDrmm,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::PositDrmm, Arch::Pacrr, Arch::PacrrDrmm];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::PositDrmm => "posit-drmm",
            Arch::Pacrr => "pacrr",
            Arch::PacrrDrmm => "pacrr-drmm",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown architecture {s:?} (posit-drmm|pacrr|pacrr-drmm)")))
    }
}

/// One query-side/document-side pairing of the bilingual scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    /// `Q` against `D`.
    QD,
    /// `Q` against `D̂`.
    QDh,
    /// `Q̂` against `D̂`.
    QhDh,
    /// `Q̂` against `D`.
    QhD,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::QD, Component::QDh, Component::QhDh, Component::QhD];

    pub fn name(self) -> &'static str {
        match self {
            Component::QD => "q-d",
            Component::QDh => "q-dh",
            Component::QhDh => "qh-dh",
            Component::QhD => "qh-d",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn query_side(self) -> Side {
        match self {
            Component::QD | Component::QDh => Side::Original,
            Component::QhDh | Component::QhD => Side::Translated,
        }
    }

    pub fn doc_side(self) -> Side {
        match self {
            Component::QD | Component::QhD => Side::Original,
            Component::QDh | Component::QhDh => Side::Translated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub arch: Arch,
    pub embed_dim: usize,
    /// Per-direction BiLSTM width; POSIT-DRMM requires `2 · lstm_hidden = embed_dim`.
    pub lstm_hidden: usize,
    pub k_pool: usize,
    pub filter_sizes: Vec<usize>,
    pub filters_per_size: usize,
    pub l_q: usize,
    pub l_d: usize,
    pub dropout: f64,
    /// Width of the POSIT term MLP and the PACRR-DRMM row MLP.
    pub term_hidden: usize,
    /// Width of the PACRR whole-matrix MLP.
    pub mlp_hidden: usize,
    /// All four components when set, otherwise only `Q`–`D̂`.
    pub bilingual: bool,
    pub share_components: bool,
    pub use_features: bool,
}

impl RankerConfig {
    pub fn new(arch: Arch) -> Self {
        RankerConfig {
            arch,
            embed_dim: 50,
            lstm_hidden: 25,
            k_pool: if arch == Arch::PositDrmm { 5 } else { 2 },
            filter_sizes: vec![1, 2, 3],
            filters_per_size: 32,
            l_q: 8,
            l_d: 300,
            dropout: 0.3,
            term_hidden: 8,
            mlp_hidden: 32,
            bilingual: true,
            share_components: false,
            use_features: true,
        }
    }

    /// Sets `embed_dim` and the matching BiLSTM width.
    pub fn with_dim(mut self, d: usize) -> Self {
        self.embed_dim = d;
        self.lstm_hidden = d / 2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(format!("ranker config: {m}")));
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if self.k_pool == 0 {
            return bad("k_pool must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.term_hidden == 0 || self.mlp_hidden == 0 {
            return bad("hidden widths must be positive".into());
        }
        match self.arch {
            Arch::PositDrmm => {
                if !self.embed_dim.is_multiple_of(2) {
                    return bad(format!("embed_dim {} is odd; the BiLSTM splits it across directions", self.embed_dim));
                }
                if 2 * self.lstm_hidden != self.embed_dim {
                    return bad(format!("lstm_hidden {} must be embed_dim / 2", self.lstm_hidden));
                }
            }
            Arch::Pacrr | Arch::PacrrDrmm => {
                if self.filter_sizes.is_empty() || self.filter_sizes.contains(&0) {
                    return bad("filter sizes must be positive".into());
                }
                if self.filters_per_size == 0 {
                    return bad("filters_per_size must be positive".into());
                }
                let widest = *self.filter_sizes.iter().max().unwrap();
                if self.l_q < widest || self.l_d < widest {
                    return bad(format!("l_q/l_d must be >= the largest filter size {widest}"));
                }
            }
        }
        Ok(())
    }

    pub fn active_components(&self) -> Vec<Component> {
        if self.bilingual {
            Component::ALL.to_vec()
        } else {
            vec![Component::QDh]
        }
    }

    pub fn param_prefix(&self, c: Component) -> &'static str {
        if self.share_components {
            "shared"
        } else {
            c.name()
        }
    }
}

/// Cosine similarities between query-term and document-term vectors,
/// truncated and zero-padded to a fixed shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// `q` and `d` are row-major `len × dim`; zero vectors yield zero entries.
pub fn build_sim_matrix(q: &[f64], d: &[f64], dim: usize, l_q: usize, l_d: usize) -> Result<SimilarityMatrix> {
    if dim == 0 || !q.len().is_multiple_of(dim) || !d.len().is_multiple_of(dim) {
        return Err(Error::shape("build_sim_matrix", format!("buffers of {} and {} for dim {dim}", q.len(), d.len())));
    }
    let rows_of = |v: &[f64], limit: usize| -> Vec<(Vec<f64>, f64)> {
        v.chunks(dim)
            .take(limit)
            .map(|r| (r.to_vec(), r.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect()
    };
    let qs = rows_of(q, l_q);
    let ds = rows_of(d, l_d);
    let mut data = vec![0.0; l_q * l_d];
    for (i, (qv, qn)) in qs.iter().enumerate() {
        if *qn == 0.0 {
            continue;
        }
        for (j, (dv, dn)) in ds.iter().enumerate() {
            if *dn == 0.0 {
                continue;
            }
            let dot: f64 = qv.iter().zip(dv).map(|(a, b)| a * b).sum();
            data[i * l_d + j] = dot / (qn * dn);
        }
    }
    Ok(SimilarityMatrix { rows: l_q, cols: l_d, data })
}

/// An embedded token sequence (`len × dim`, row-major), with per-term IDF for
/// query sides.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInput {
    pub len: usize,
    pub vectors: Vec<f64>,
    pub idf: Vec<f64>,
}

impl SideInput {
    pub fn empty() -> Self {
        SideInput {
            len: 0,
            vectors: Vec::new(),
            idf: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    pub q: SideInput,
    pub q_hat: SideInput,
}

impl QueryInput {
    pub fn side(&self, s: Side) -> &SideInput {
        match s {
            Side::Original => &self.q,
            Side::Translated => &self.q_hat,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocInput {
    pub d: SideInput,
    pub d_hat: SideInput,
}

impl DocInput {
    pub fn side(&self, s: Side) -> &SideInput {
        match s {
            Side::Original => &self.d,
            Side::Translated => &self.d_hat,
        }
    }
}

/// Embeddings and IDF statistics for both languages.
#[derive(Debug, Clone)]
pub struct TextResources {
    pub source_embeddings: EmbeddingMatrix,
    /// Target-language vectors mapped into the source space.
    pub target_embeddings: EmbeddingMatrix,
    pub source_stats: CollectionStats,
    pub target_stats: CollectionStats,
}

impl TextResources {
    /// Source statistics come from the documents' translations, target
    /// statistics from their original text.
    pub fn new(docs: &Corpus, source_embeddings: EmbeddingMatrix, target_embeddings: EmbeddingMatrix) -> Result<Self> {
        if source_embeddings.dim() != target_embeddings.dim() {
            return Err(Error::shape(
                "resources",
                format!("source dim {} vs target dim {}", source_embeddings.dim(), target_embeddings.dim()),
            ));
        }
        Ok(TextResources {
            source_embeddings,
            target_embeddings,
            source_stats: side_stats(docs, Side::Translated)?,
            target_stats: side_stats(docs, Side::Original)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.source_embeddings.dim()
    }

    fn embed(&self, terms: &[Token], source_lang: bool, with_idf: bool) -> SideInput {
        let (emb, stats) = if source_lang {
            (&self.source_embeddings, &self.source_stats)
        } else {
            (&self.target_embeddings, &self.target_stats)
        };
        SideInput {
            len: terms.len(),
            vectors: emb.embed_sequence(terms),
            idf: if with_idf { terms.iter().map(|t| stats.idf(t)).collect() } else { Vec::new() },
        }
    }

    pub fn query_input(&self, query: &BilingualRecord) -> QueryInput {
        QueryInput {
            q: self.embed(&query.terms, true, true),
            q_hat: self.embed(&query.translated_terms, false, true),
        }
    }

    pub fn doc_input(&self, doc: &BilingualRecord) -> DocInput {
        DocInput {
            d: self.embed(&doc.terms, false, false),
            d_hat: self.embed(&doc.translated_terms, true, false),
        }
    }
}

/// A side ready for scoring: raw vectors, or POSIT encodings computed once
/// under frozen parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSide {
    pub len: usize,
    pub values: Vec<f64>,
    pub encoded: bool,
}

/// Per-component prepared sides (`None` for inactive components).
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    sides: [Option<PreparedSide>; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBreakdown {
    /// Component scores; `None` when masked.
    pub components: [Option<f64>; 4],
    pub model_score: f64,
    pub final_score: f64,
}

/// Parameters for the (up to) four component rankers plus fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BilingualScorer {
    pub config: RankerConfig,
    pub params: ParamStore,
}

pub const FUSION_MODEL: &str = "fusion.w_m";
pub const FUSION_FEATURES: &str = "fusion.w_feat";
pub const FUSION_BIAS: &str = "fusion.bias";

impl BilingualScorer {
    /// Weights uniform in ±0.1, biases zero; the fusion layer starts at
    /// `w_ql = 1` with everything else zero (or `w_m = 1` without features).
    pub fn new<R: Rng + ?Sized>(config: RankerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut prefixes: Vec<&str> = config.active_components().iter().map(|&c| config.param_prefix(c)).collect();
        prefixes.dedup();
        for prefix in prefixes {
            match config.arch {
                Arch::PositDrmm => posit::init(&mut params, prefix, &config, rng),
                Arch::Pacrr | Arch::PacrrDrmm => pacrr::init(&mut params, prefix, &config, rng),
            }
        }
        params.zeros(FUSION_MODEL, &[1, 1]);
        params.zeros(FUSION_BIAS, &[1, 1]);
        if config.use_features {
            params.zeros(FUSION_FEATURES, &[NUM_FEATURES, 1]);
            params.get_mut(FUSION_FEATURES).unwrap().values[0] = 1.0;
        } else {
            params.get_mut(FUSION_MODEL).unwrap().values[0] = 1.0;
        }
        Ok(BilingualScorer { config, params })
    }

    pub fn from_params(config: RankerConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let template = BilingualScorer::new(config.clone(), &mut rng)?;
        for (name, t) in template.params.iter() {
            match params.get(name) {
                Some(p) if p.shape == t.shape => {}
                Some(p) => {
                    return Err(Error::data(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        p.shape, t.shape
                    )))
                }
                None => return Err(Error::data(format!("missing parameter {name}"))),
            }
        }
        if params.len() != template.params.len() {
            let extra = params.names().find(|n| template.params.get(n).is_none()).unwrap_or("?");
            return Err(Error::data(format!("unexpected parameter {extra}")));
        }
        Ok(BilingualScorer { config, params })
    }

    fn check_dim(&self, s: &SideInput, what: &str) -> Result<()> {
        let d = self.config.embed_dim;
        if s.vectors.len() != s.len * d {
            return Err(Error::shape(
                "score_bilingual",
                format!("{what}: {} values for {} terms of dim {d}", s.vectors.len(), s.len),
            ));
        }
        Ok(())
    }

    fn component_score(
        &self,
        g: &mut Graph,
        c: Component,
        q: &PreparedSide,
        idf: &[f64],
        d: &PreparedSide,
    ) -> Result<Var> {
        let cfg = &self.config;
        let prefix = cfg.param_prefix(c);
        let dim = cfg.embed_dim;
        match cfg.arch {
            Arch::PositDrmm => {
                let side = |g: &mut Graph, s: &PreparedSide| -> Result<Var> {
                    let x = g.constant(&[s.len, dim], s.values.clone())?;
                    if s.encoded {
                        Ok(x)
                    } else {
                        encode_posit(g, &self.params, prefix, cfg, x)
                    }
                };
                let qv = side(g, q)?;
                let dv = side(g, d)?;
                score_posit_drmm(g, &self.params, prefix, cfg, qv, dv, idf)
            }
            Arch::Pacrr | Arch::PacrrDrmm => {
                let sim = build_sim_matrix(&q.values, &d.values, dim, cfg.l_q, cfg.l_d)?;
                let sim = g.constant(&[cfg.l_q, cfg.l_d], sim.data)?;
                if cfg.arch == Arch::Pacrr {
                    score_pacrr(g, &self.params, prefix, cfg, sim, idf)
                } else {
                    score_pacrr_drmm(g, &self.params, prefix, cfg, sim, idf)
                }
            }
        }
    }

    fn raw(s: &SideInput) -> PreparedSide {
        PreparedSide {
            len: s.len,
            values: s.vectors.clone(),
            encoded: false,
        }
    }

    fn prepare_side(&self, c: Component, s: &SideInput) -> Result<PreparedSide> {
        if self.config.arch != Arch::PositDrmm || s.is_empty() {
            return Ok(Self::raw(s));
        }
        let mut g = Graph::new();
        let x = g.constant(&[s.len, self.config.embed_dim], s.vectors.clone())?;
        let enc = encode_posit(&mut g, &self.params, self.config.param_prefix(c), &self.config, x)?;
        Ok(PreparedSide {
            len: s.len,
            values: g.value(enc).to_vec(),
            encoded: true,
        })
    }

    /// Encodes a document once for inference under the current parameters.
    pub fn prepare_doc(&self, doc: &DocInput) -> Result<Prepared> {
        self.check_dim(&doc.d, "D")?;
        self.check_dim(&doc.d_hat, "D̂")?;
        let mut sides: [Option<PreparedSide>; 4] = Default::default();
        for c in self.config.active_components() {
            sides[c.index()] = Some(self.prepare_side(c, doc.side(c.doc_side()))?);
        }
        Ok(Prepared { sides })
    }

    pub fn prepare_query(&self, query: &QueryInput) -> Result<Prepared> {
        self.check_dim(&query.q, "Q")?;
        self.check_dim(&query.q_hat, "Q̂")?;
        let mut sides: [Option<PreparedSide>; 4] = Default::default();
        for c in self.config.active_components() {
            sides[c.index()] = Some(self.prepare_side(c, query.side(c.query_side()))?);
        }
        Ok(Prepared { sides })
    }

    fn fuse(&self, g: &mut Graph, comps: &[Var], features: &[f64; NUM_FEATURES]) -> Result<Var> {
        let mut model = comps[0];
        for &c in &comps[1..] {
            model = g.add(model, c)?;
        }
        let wm = g.param(&self.params, FUSION_MODEL)?;
        let mut out = g.mul(wm, model)?;
        if self.config.use_features {
            let f = g.constant(&[1, NUM_FEATURES], features.to_vec())?;
            let wf = g.param(&self.params, FUSION_FEATURES)?;
            let fv = g.matmul(f, wf)?;
            out = g.add(out, fv)?;
        }
        let b = g.param(&self.params, FUSION_BIAS)?;
        g.add(out, b)
    }

    fn build(
        &self,
        g: &mut Graph,
        query: &QueryInput,
        q_sides: &[Option<PreparedSide>; 4],
        d_sides: &[Option<PreparedSide>; 4],
        features: &[f64; NUM_FEATURES],
        mask: [bool; 4],
    ) -> Result<(Var, [Option<Var>; 4])> {
        let mut comps: [Option<Var>; 4] = [None; 4];
        for c in Component::ALL {
            let (Some(qs), Some(ds)) = (&q_sides[c.index()], &d_sides[c.index()]) else {
                continue;
            };
            if !mask[c.index()] || qs.len == 0 || ds.len == 0 {
                continue;
            }
            let idf = &query.side(c.query_side()).idf;
            comps[c.index()] = Some(self.component_score(g, c, qs, idf, ds)?);
        }
        let live: Vec<Var> = comps.iter().flatten().copied().collect();
        if live.is_empty() {
            return Err(Error::data("every scorer component is empty or masked"));
        }
        Ok((self.fuse(g, &live, features)?, comps))
    }

    /// Final score as a graph node (training path).
    pub fn score_graph(
        &self,
        g: &mut Graph,
        query: &QueryInput,
        doc: &DocInput,
        features: &[f64; NUM_FEATURES],
    ) -> Result<Var> {
        let q = self.raw_sides(query.side(Side::Original), query.side(Side::Translated), true)?;
        let d = self.raw_sides(doc.side(Side::Original), doc.side(Side::Translated), false)?;
        Ok(self.build(g, query, &q, &d, features, [true; 4])?.0)
    }

    fn raw_sides(&self, orig: &SideInput, trans: &SideInput, query: bool) -> Result<[Option<PreparedSide>; 4]> {
        self.check_dim(orig, "original side")?;
        self.check_dim(trans, "translated side")?;
        let mut sides: [Option<PreparedSide>; 4] = Default::default();
        for c in self.config.active_components() {
            let side = if query { c.query_side() } else { c.doc_side() };
            sides[c.index()] = Some(Self::raw(if side == Side::Original { orig } else { trans }));
        }
        Ok(sides)
    }

    /// Inference score with optional component masking.
    pub fn score_masked(
        &self,
        query: &QueryInput,
        doc: &DocInput,
        features: &[f64; NUM_FEATURES],
        mask: [bool; 4],
    ) -> Result<ScoreBreakdown> {
        let q = self.raw_sides(&query.q, &query.q_hat, true)?;
        let d = self.raw_sides(&doc.d, &doc.d_hat, false)?;
        self.breakdown(query, &q, &d, features, mask)
    }

    pub fn score(&self, query: &QueryInput, doc: &DocInput, features: &[f64; NUM_FEATURES]) -> Result<f64> {
        Ok(self.score_masked(query, doc, features, [true; 4])?.final_score)
    }

    /// Inference score from prepared (cached) query and document sides.
    pub fn score_prepared(
        &self,
        query: &QueryInput,
        prepared_query: &Prepared,
        prepared_doc: &Prepared,
        features: &[f64; NUM_FEATURES],
    ) -> Result<f64> {
        Ok(self
            .breakdown(query, &prepared_query.sides, &prepared_doc.sides, features, [true; 4])?
            .final_score)
    }

    fn breakdown(
        &self,
        query: &QueryInput,
        q: &[Option<PreparedSide>; 4],
        d: &[Option<PreparedSide>; 4],
        features: &[f64; NUM_FEATURES],
        mask: [bool; 4],
    ) -> Result<ScoreBreakdown> {
        let mut g = Graph::new();
        let (out, comps) = self.build(&mut g, query, q, d, features, mask)?;
        let components = comps.map(|c| c.map(|v| g.scalar(v)));
        Ok(ScoreBreakdown {
            components,
            model_score: components.iter().flatten().sum(),
            final_score: g.scalar(out),
        })
    }
}
