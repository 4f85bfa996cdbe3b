//! Synthetic cipher-language datasets with analytic ground truth.
//!
//! A source vocabulary is grouped into topics whose word vectors cluster around
//! topic centroids. Documents and queries are sampled topic-wise in the source
//! language. The target language renames every source token through a random
//! bijection, and its embeddings are the source embeddings under a random
//! orthogonal transform, so `W·x_target = x_source` holds exactly for the gold
//! transform `W`.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BilingualRecord, Corpus, RelevanceJudgments, Token};
use crate::embeddings::{random_orthogonal, EmbeddingMatrix, Lexicon, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub n_queries: usize,
    pub vocab_size: usize,
    /// Inclusive document length range.
    pub doc_len_range: (usize, usize),
    pub embed_dim: usize,
    pub n_topics: usize,
    /// Inclusive query length range.
    pub query_len_range: (usize, usize),
    /// Inclusive number of relevant documents per query.
    pub relevant_range: (usize, usize),
    /// Query split sizes (train, dev, test); must sum to `n_queries`.
    pub split: (usize, usize, usize),
    /// Fraction of translated tokens replaced by random vocabulary words.
    pub translation_noise: f64,
    pub source_lang: String,
    pub target_lang: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 7,
            n_docs: 500,
            n_queries: 100,
            vocab_size: 2000,
            doc_len_range: (20, 60),
            embed_dim: 50,
            n_topics: 25,
            query_len_range: (2, 4),
            relevant_range: (1, 4),
            split: (50, 25, 25),
            translation_noise: 0.0,
            source_lang: "en".into(),
            target_lang: "xa".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Everything the generator produces.
#[derive(Debug, Clone)]
pub struct CipherDataset {
    pub config: GenConfig,
    /// Source-language documents; `translated_terms` hold the cipher text.
    pub source_docs: Corpus,
    /// Target-language documents; `translated_terms` hold the (possibly noisy)
    /// source-language translation.
    pub target_docs: Corpus,
    /// Source-language queries; `translated_terms` hold the cipher translation.
    pub queries: Corpus,
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub qrels: RelevanceJudgments,
    pub source_embeddings: EmbeddingMatrix,
    pub target_embeddings: EmbeddingMatrix,
    /// Gold bijection `(source, target)`, one pair per vocabulary entry.
    pub lexicon: Lexicon,
    /// Gold orthogonal map taking target vectors to source vectors.
    pub transform: Matrix,
    /// Source-language material shared by every cipher of this dataset.
    plain: PlainLanguage,
}

#[derive(Debug, Clone)]
struct PlainLanguage {
    vocab: Vec<String>,
    vectors: Matrix,
    docs: Vec<(String, Vec<usize>)>,
    /// Noisy source-language translation of each document, as vocab indices.
    doc_translations: Vec<Vec<usize>>,
    queries: Vec<(String, Vec<usize>)>,
    /// Noisy words of each query translation (mapped through the cipher later).
    query_translations: Vec<Vec<usize>>,
}

/// Generates a dataset; identical configurations give identical datasets.
pub fn gen_cipher_dataset(cfg: &GenConfig) -> Result<CipherDataset> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (plain, qrels) = generate_plain(cfg, &mut rng)?;
    let cipher_seed = rng.random::<u64>();
    let (n_train, n_dev, _) = cfg.split;
    let ids: Vec<String> = plain.queries.iter().map(|q| q.0.clone()).collect();
    let train_ids = ids[..n_train].to_vec();
    let dev_ids = ids[n_train..n_train + n_dev].to_vec();
    let test_ids = ids[n_train + n_dev..].to_vec();
    assemble(cfg.clone(), plain, qrels, train_ids, dev_ids, test_ids, cipher_seed, &cfg.target_lang)
}

impl CipherDataset {
    /// Same source-language collection under a fresh cipher and rotation; every
    /// record keeps its id, so twins line up across the two datasets.
    pub fn recipher(&self, cipher_seed: u64, target_lang: &str) -> Result<CipherDataset> {
        let mut cfg = self.config.clone();
        cfg.target_lang = target_lang.to_string();
        assemble(
            cfg,
            self.plain.clone(),
            self.qrels.clone(),
            self.train_ids.clone(),
            self.dev_ids.clone(),
            self.test_ids.clone(),
            cipher_seed,
            target_lang,
        )
    }

    pub fn split_queries(&self, split: Split) -> Corpus {
        let ids = match split {
            Split::Train => &self.train_ids,
            Split::Dev => &self.dev_ids,
            Split::Test => &self.test_ids,
        };
        self.queries
            .subset(ids.iter().map(String::as_str))
            .expect("split ids come from the query set")
    }

    /// Target token for a source token under the gold cipher.
    pub fn cipher_of(&self, source: &str) -> Option<&Token> {
        self.lexicon
            .pairs
            .iter()
            .find(|(s, _)| s.as_str() == source)
            .map(|(_, t)| t)
    }
}

fn validate(cfg: &GenConfig) -> Result<()> {
    let positive = [
        cfg.n_docs,
        cfg.n_queries,
        cfg.vocab_size,
        cfg.embed_dim,
        cfg.n_topics,
        cfg.doc_len_range.0,
        cfg.query_len_range.0,
        cfg.relevant_range.0,
    ];
    if positive.contains(&0) {
        return Err(Error::Usage("generator counts must be positive".into()));
    }
    if cfg.doc_len_range.0 > cfg.doc_len_range.1
        || cfg.query_len_range.0 > cfg.query_len_range.1
        || cfg.relevant_range.0 > cfg.relevant_range.1
    {
        return Err(Error::Usage("generator ranges must satisfy min <= max".into()));
    }
    if cfg.split.0 + cfg.split.1 + cfg.split.2 != cfg.n_queries {
        return Err(Error::Usage(format!(
            "query split {:?} does not sum to n_queries={}",
            cfg.split, cfg.n_queries
        )));
    }
    if !(0.0..=1.0).contains(&cfg.translation_noise) {
        return Err(Error::Usage("translation_noise must lie in [0, 1]".into()));
    }
    let (_, topic_size) = topic_layout(cfg);
    let demand = 2 * cfg.query_len_range.1;
    if topic_size < demand {
        return Err(Error::Data(format!(
            "vocab_size {} too small: {} topics need at least {} words each ({} total plus background)",
            cfg.vocab_size,
            cfg.n_topics,
            demand,
            demand * cfg.n_topics
        )));
    }
    let min_docs = cfg.n_queries * cfg.relevant_range.1;
    if cfg.n_docs < min_docs {
        return Err(Error::Data(format!(
            "n_docs {} cannot hold up to {} relevant documents per query",
            cfg.n_docs, cfg.relevant_range.1
        )));
    }
    Ok(())
}

/// (number of background words, words per topic).
fn topic_layout(cfg: &GenConfig) -> (usize, usize) {
    let background = cfg.vocab_size / 5;
    (background, (cfg.vocab_size - background) / cfg.n_topics)
}

const P_QUERY_TERM: f64 = 0.12;
const P_TOPIC_TERM: f64 = 0.40;
const P_DISTRACTOR: f64 = 0.3;

fn generate_plain(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<(PlainLanguage, RelevanceJudgments)> {
    let (background, topic_size) = topic_layout(cfg);
    let d = cfg.embed_dim;
    let vocab: Vec<String> = (0..cfg.vocab_size).map(|i| format!("w{i:05}")).collect();
    let topic_of = |w: usize| -> Option<usize> {
        (w >= background && w < background + topic_size * cfg.n_topics)
            .then(|| (w - background) / topic_size)
    };
    let topic_words: Vec<Vec<usize>> = (0..cfg.n_topics)
        .map(|t| (background + t * topic_size..background + (t + 1) * topic_size).collect())
        .collect();
    let background_words: Vec<usize> = (0..background)
        .chain(background + topic_size * cfg.n_topics..cfg.vocab_size)
        .collect();

    // Unit vectors; topic words cluster around their centroid.
    let centroids = Matrix::random_normal(cfg.n_topics, d, rng);
    let mut vectors = Matrix::random_normal(cfg.vocab_size, d, rng);
    for w in 0..cfg.vocab_size {
        let row = vectors.row_mut(w);
        normalize(row);
        if let Some(t) = topic_of(w) {
            let mut c = centroids.row(t).to_vec();
            normalize(&mut c);
            row.iter_mut().zip(&c).for_each(|(x, ci)| *x = 0.55 * *x + 0.85 * ci);
            normalize(row);
        }
    }

    let mut queries = Vec::with_capacity(cfg.n_queries);
    let mut query_topics = Vec::with_capacity(cfg.n_queries);
    for q in 0..cfg.n_queries {
        let topic = rng.random_range(0..cfg.n_topics);
        let len = rng.random_range(cfg.query_len_range.0..=cfg.query_len_range.1);
        let terms: Vec<usize> = topic_words[topic].choose_multiple(rng, len).copied().collect();
        queries.push((format!("q{q:03}"), terms));
        query_topics.push(topic);
    }

    let sample_len = |rng: &mut ChaCha8Rng| rng.random_range(cfg.doc_len_range.0..=cfg.doc_len_range.1);
    let topic_token = |rng: &mut ChaCha8Rng, topic: usize| -> usize {
        if rng.random_bool(P_TOPIC_TERM) {
            *topic_words[topic].choose(rng).expect("topic words")
        } else {
            *background_words.choose(rng).expect("background words")
        }
    };

    // (tokens, relevant-for query, grade)
    let mut docs: Vec<(Vec<usize>, Option<(usize, u32)>)> = Vec::with_capacity(cfg.n_docs);
    for (qi, (_, qterms)) in queries.iter().enumerate() {
        let n_rel = rng.random_range(cfg.relevant_range.0..=cfg.relevant_range.1);
        for _ in 0..n_rel {
            let len = sample_len(rng);
            // Some relevant documents paraphrase the query with topic words only.
            let p_query = if rng.random_bool(0.3) { P_QUERY_TERM * 0.25 } else { P_QUERY_TERM };
            let mut toks: Vec<usize> = (0..len)
                .map(|_| {
                    if rng.random_bool(p_query) {
                        *qterms.choose(rng).expect("query terms")
                    } else {
                        topic_token(rng, query_topics[qi])
                    }
                })
                .collect();
            let mut grade = 1;
            if qterms.len() >= 2 && rng.random_bool(0.5) {
                let i = rng.random_range(0..qterms.len() - 1);
                let at = rng.random_range(0..len.saturating_sub(1).max(1));
                toks.splice(at..(at + 2).min(len), [qterms[i], qterms[i + 1]]);
                grade = 2;
            }
            docs.push((toks, Some((qi, grade))));
        }
    }
    while docs.len() < cfg.n_docs {
        let topic = rng.random_range(0..cfg.n_topics);
        let len = sample_len(rng);
        let mut toks: Vec<usize> = (0..len).map(|_| topic_token(rng, topic)).collect();
        // Distractors share exact query words without being about the query.
        if rng.random_bool(P_DISTRACTOR) {
            let (_, qterms) = queries.choose(rng).expect("queries");
            for _ in 0..rng.random_range(1..=3) {
                let at = rng.random_range(0..len);
                toks[at] = *qterms.choose(rng).expect("query terms");
            }
        }
        docs.push((toks, None));
    }
    docs.shuffle(rng);

    let mut qrels = RelevanceJudgments::new();
    let mut plain_docs = Vec::with_capacity(docs.len());
    for (i, (toks, rel)) in docs.into_iter().enumerate() {
        let id = format!("d{i:04}");
        if let Some((qi, grade)) = rel {
            qrels.insert(&queries[qi].0, &id, grade);
        }
        plain_docs.push((id, toks));
    }
    // Judged non-relevant: documents sharing an exact query word but relevant elsewhere.
    for (qid, qterms) in &queries {
        let qset: HashSet<usize> = qterms.iter().copied().collect();
        for (id, toks) in &plain_docs {
            if qrels.grade(qid, id).is_none() && toks.iter().any(|t| qset.contains(t)) && rng.random_bool(0.5) {
                qrels.insert(qid, id, 0);
            }
        }
    }

    let noise = cfg.translation_noise;
    let noisy = |toks: &[usize], rng: &mut ChaCha8Rng| -> Vec<usize> {
        toks.iter()
            .map(|&t| {
                if noise > 0.0 && rng.random_bool(noise) {
                    rng.random_range(0..cfg.vocab_size)
                } else {
                    t
                }
            })
            .collect()
    };
    let doc_translations = plain_docs.iter().map(|(_, t)| noisy(t, rng)).collect();
    let query_translations = queries.iter().map(|(_, t)| noisy(t, rng)).collect();

    Ok((
        PlainLanguage {
            vocab,
            vectors,
            docs: plain_docs,
            doc_translations,
            queries,
            query_translations,
        },
        qrels,
    ))
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    config: GenConfig,
    plain: PlainLanguage,
    qrels: RelevanceJudgments,
    train_ids: Vec<String>,
    dev_ids: Vec<String>,
    test_ids: Vec<String>,
    cipher_seed: u64,
    target_lang: &str,
) -> Result<CipherDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cipher_seed);
    let n = plain.vocab.len();
    let d = plain.vectors.cols();
    let prefix: String = target_lang
        .chars()
        .filter(char::is_ascii_alphabetic)
        .map(|c| c.to_ascii_lowercase())
        .collect();
    let prefix = if prefix.is_empty() { "t".to_string() } else { prefix };
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let cipher: Vec<Token> = perm
        .iter()
        .map(|&p| Token::from_normalized(format!("{prefix}{p:05}")))
        .collect();
    let src_tok: Vec<Token> = plain.vocab.iter().map(|w| Token::from_normalized(w.clone())).collect();

    let transform = random_orthogonal(d, &mut rng);
    // Target rows ordered by cipher token; x_t = Wᵀ·x_s.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cipher[a].cmp(&cipher[b]));
    let mut tvecs = Matrix::zeros(n, d);
    let rotated = plain.vectors.matmul(&transform)?;
    for (row, &w) in order.iter().enumerate() {
        tvecs.row_mut(row).copy_from_slice(rotated.row(w));
    }
    let target_embeddings =
        EmbeddingMatrix::new(order.iter().map(|&w| cipher[w].clone()).collect(), tvecs)?;
    let source_embeddings = EmbeddingMatrix::new(src_tok.clone(), plain.vectors.clone())?;

    let src = |ids: &[usize]| ids.iter().map(|&w| src_tok[w].clone()).collect::<Vec<_>>();
    let tgt = |ids: &[usize]| ids.iter().map(|&w| cipher[w].clone()).collect::<Vec<_>>();

    let mut source_docs = Vec::with_capacity(plain.docs.len());
    let mut target_docs = Vec::with_capacity(plain.docs.len());
    for ((id, toks), trans) in plain.docs.iter().zip(&plain.doc_translations) {
        source_docs.push(BilingualRecord {
            id: id.clone(),
            lang: config.source_lang.clone(),
            terms: src(toks),
            translated_terms: tgt(toks),
        });
        target_docs.push(BilingualRecord {
            id: id.clone(),
            lang: target_lang.to_string(),
            terms: tgt(toks),
            translated_terms: src(trans),
        });
    }
    let queries = plain
        .queries
        .iter()
        .zip(&plain.query_translations)
        .map(|((id, toks), trans)| BilingualRecord {
            id: id.clone(),
            lang: config.source_lang.clone(),
            terms: src(toks),
            translated_terms: tgt(trans),
        })
        .collect();
    let lexicon = Lexicon::new(
        (0..n)
            .map(|w| (src_tok[w].clone(), cipher[w].clone()))
            .collect(),
    );

    Ok(CipherDataset {
        config,
        source_docs: Corpus::new(source_docs)?,
        target_docs: Corpus::new(target_docs)?,
        queries: Corpus::new(queries)?,
        train_ids,
        dev_ids,
        test_ids,
        qrels,
        source_embeddings,
        target_embeddings,
        lexicon,
        transform,
        plain,
    })
}
