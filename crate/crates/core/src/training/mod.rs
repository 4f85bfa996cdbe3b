//! Pairwise training data, BCE training with Adam and dev-MAP model
//! selection, checkpointing, reranking and score-mean ensembles.

mod checkpoint;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_logit, AdamConfig, AdamState, Graph};
use crate::corpus::{BilingualRecord, CollectionStats, Corpus, RelevanceJudgments, Side};
use crate::evaluation::mean_average_precision;
use crate::features::{extract_features, FeatureStats, FeatureVector, NUM_FEATURES};
use crate::rankers::{BilingualScorer, DocInput, Prepared, QueryInput, RankerConfig, TextResources};
use crate::run::{RankedList, RankedRun};
use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, space_fingerprint, Checkpoint, CheckpointMeta, FeatureStatsRecord, TensorRecord, FORMAT_VERSION};

/// Which same-language pairing the hand-crafted features are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FeatureChannel {
    /// Source query against translated document.
    #[default]
    #[serde(rename = "q-dh")]
    QueryTranslatedDoc,
    /// Translated query against original document.
    #[serde(rename = "qh-d")]
    TranslatedQueryDoc,
}

impl FeatureChannel {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureChannel::QueryTranslatedDoc => "q-dh",
            FeatureChannel::TranslatedQueryDoc => "qh-d",
        }
    }

    fn sides(self) -> (Side, Side) {
        match self {
            FeatureChannel::QueryTranslatedDoc => (Side::Original, Side::Translated),
            FeatureChannel::TranslatedQueryDoc => (Side::Translated, Side::Original),
        }
    }

    fn stats(self, res: &TextResources) -> &CollectionStats {
        match self {
            FeatureChannel::QueryTranslatedDoc => &res.source_stats,
            FeatureChannel::TranslatedQueryDoc => &res.target_stats,
        }
    }

    pub fn features(self, res: &TextResources, query: &BilingualRecord, doc: &BilingualRecord, ql: f64) -> FeatureVector {
        let (qs, ds) = self.sides();
        extract_features(query.side(qs), doc.side(ds), self.stats(res), ql)
    }
}

impl fmt::Display for FeatureChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q-dh" => Ok(FeatureChannel::QueryTranslatedDoc),
            "qh-d" => Ok(FeatureChannel::TranslatedQueryDoc),
            _ => Err(Error::Usage(format!("unknown feature channel {s:?} (q-dh|qh-d)"))),
        }
    }
}

/// Seeded generator on a dedicated stream, so each consumer of randomness is
/// independent of the others.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

const STREAM_PAIRS: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query_id: String,
    pub positive: String,
    pub negative: String,
}

/// One pair per relevant document in each first-stage list, with a negative
/// (grade 0 or unjudged) drawn uniformly from the same list.
pub fn build_training_pairs(run: &RankedRun, qrels: &RelevanceJudgments, seed: u64) -> Result<Vec<TrainingPair>> {
    let mut rng = stream(seed, STREAM_PAIRS);
    let mut pairs = Vec::new();
    for list in run.iter() {
        let (pos, neg): (Vec<&str>, Vec<&str>) = list
            .doc_ids()
            .partition(|d| qrels.grade(&list.query_id, d).is_some_and(|g| g >= 1));
        if pos.is_empty() {
            continue;
        }
        if neg.is_empty() {
            warn!("query {}: no negative candidates, skipping {} positives", list.query_id, pos.len());
            continue;
        }
        for p in pos {
            let n = neg[rng.random_range(0..neg.len())];
            pairs.push(TrainingPair {
                query_id: list.query_id.clone(),
                positive: p.to_string(),
                negative: n.to_string(),
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::data("no training pairs: no first-stage list has both a relevant and a non-relevant document"));
    }
    Ok(pairs)
}

/// `−[y ln σ(s) + (1−y) ln(1−σ(s))]` in log-space.
pub fn bce_loss(score: f64, label: f64) -> f64 {
    bce_logit(score, label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 7,
        }
    }
}

/// Documents, queries and embedding resources shared by training and reranking.
#[derive(Clone, Copy)]
pub struct RerankInputs<'a> {
    pub docs: &'a Corpus,
    pub queries: &'a Corpus,
    pub resources: &'a TextResources,
    pub channel: FeatureChannel,
}

impl<'a> RerankInputs<'a> {
    fn doc(&self, id: &str) -> Result<&'a BilingualRecord> {
        self.docs
            .get(id)
            .ok_or_else(|| Error::data(format!("document {id} is not in the collection")))
    }

    fn query(&self, id: &str) -> Result<&'a BilingualRecord> {
        self.queries
            .get(id)
            .ok_or_else(|| Error::data(format!("query {id} is not in the query set")))
    }

    fn raw_features(&self, list: &RankedList) -> Result<Vec<FeatureVector>> {
        let q = self.query(&list.query_id)?;
        list.entries()
            .iter()
            .map(|(d, s)| Ok(self.channel.features(self.resources, q, self.doc(d)?, *s)))
            .collect()
    }
}

/// Embedded documents, filled lazily.
#[derive(Default)]
struct DocCache {
    inputs: HashMap<String, DocInput>,
}

impl DocCache {
    fn get(&mut self, inputs: &RerankInputs, id: &str) -> Result<&DocInput> {
        if !self.inputs.contains_key(id) {
            let d = inputs.resources.doc_input(inputs.doc(id)?);
            self.inputs.insert(id.to_string(), d);
        }
        Ok(&self.inputs[id])
    }
}

fn rerank_with(
    scorer: &BilingualScorer,
    stats: &FeatureStats,
    run: &RankedRun,
    inputs: &RerankInputs,
    docs: &mut DocCache,
) -> Result<RankedRun> {
    let mut prepared: HashMap<String, Prepared> = HashMap::new();
    let mut out = RankedRun::new();
    for list in run.iter() {
        let q = inputs.query(&list.query_id)?;
        let qi = inputs.resources.query_input(q);
        let pq = scorer.prepare_query(&qi)?;
        let feats = inputs.raw_features(list)?;
        let mut entries = Vec::with_capacity(list.len());
        for ((d, _), f) in list.entries().iter().zip(&feats) {
            if !prepared.contains_key(d) {
                let p = scorer.prepare_doc(docs.get(inputs, d)?)?;
                prepared.insert(d.clone(), p);
            }
            let s = scorer.score_prepared(&qi, &pq, &prepared[d], &stats.transform(f))?;
            entries.push((d.clone(), s));
        }
        out.insert(RankedList::new(list.query_id.clone(), entries)?);
    }
    Ok(out)
}

/// Replaces every candidate's score with the checkpoint's final score; the
/// candidate sets are unchanged.
pub fn rerank(checkpoint: &Checkpoint, run: &RankedRun, inputs: &RerankInputs) -> Result<RankedRun> {
    let scorer = checkpoint.scorer()?;
    if scorer.config.embed_dim != inputs.resources.dim() {
        return Err(Error::shape(
            "rerank",
            format!("checkpoint dim {} vs embeddings dim {}", scorer.config.embed_dim, inputs.resources.dim()),
        ));
    }
    let fp = space_fingerprint(&inputs.resources.source_embeddings);
    if fp != checkpoint.meta.source_space {
        warn!("source embeddings differ from the ones the checkpoint was trained with");
    }
    let inputs = RerankInputs {
        channel: checkpoint.feature_stats.channel,
        ..*inputs
    };
    rerank_with(&scorer, &checkpoint.feature_stats.stats, run, &inputs, &mut DocCache::default())
}

/// Mean score per candidate across runs over identical candidate sets.
pub fn mean_runs(runs: &[RankedRun]) -> Result<RankedRun> {
    let first = runs.first().ok_or_else(|| Error::data("ensemble needs at least one run"))?;
    let mut out = RankedRun::new();
    for list in first.iter() {
        let mut sums: BTreeMap<&str, f64> = list.entries().iter().map(|(d, s)| (d.as_str(), *s)).collect();
        for other in &runs[1..] {
            let ol = other
                .get(&list.query_id)
                .filter(|o| o.len() == list.len())
                .ok_or_else(|| Error::data(format!("ensemble runs disagree on query {}", list.query_id)))?;
            for (d, s) in ol.entries() {
                *sums
                    .get_mut(d.as_str())
                    .ok_or_else(|| Error::data(format!("ensemble runs disagree on query {}", list.query_id)))? += s;
            }
        }
        let n = runs.len() as f64;
        let entries = sums.into_iter().map(|(d, s)| (d.to_string(), s / n)).collect();
        out.insert(RankedList::new(list.query_id.clone(), entries)?);
    }
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(Error::data("ensemble runs cover different queries"));
    }
    Ok(out)
}

/// Reranks with each checkpoint and averages the final scores.
pub fn ensemble(checkpoints: &[Checkpoint], run: &RankedRun, inputs: &RerankInputs) -> Result<RankedRun> {
    let runs = checkpoints.iter().map(|c| rerank(c, run, inputs)).collect::<Result<Vec<_>>>()?;
    mean_runs(&runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch loss while training (dropout on).
    pub batch_loss: f64,
    /// Loss over all training examples after the epoch (dropout off).
    pub train_loss: f64,
    pub dev_map: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Training-set loss of the initial model (dropout off).
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
}

struct Example {
    query: usize,
    doc: String,
    features: [f64; NUM_FEATURES],
    label: f64,
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ ((epoch as u64) << 40) ^ (batch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains on pairs sampled from `train_run`, reranks `dev_run` after every
/// epoch and returns the checkpoint with the best dev MAP (earliest on ties).
pub fn train(
    ranker: &RankerConfig,
    cfg: &TrainConfig,
    inputs: &RerankInputs,
    train_run: &RankedRun,
    dev_run: &RankedRun,
    qrels: &RelevanceJudgments,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Usage("epochs and batch_size must be positive".into()));
    }
    if ranker.embed_dim != inputs.resources.dim() {
        return Err(Error::shape(
            "train",
            format!("ranker dim {} vs embeddings dim {}", ranker.embed_dim, inputs.resources.dim()),
        ));
    }
    let dev_qrels = qrels.subset(dev_run.query_ids());
    if dev_qrels.queries().all(|q| dev_qrels.num_relevant(q) == 0) {
        return Err(Error::data("dev queries have no relevance judgments"));
    }
    let pairs = build_training_pairs(train_run, qrels, cfg.seed)?;

    let mut all_feats = Vec::new();
    let mut feats_by_pair: HashMap<(&str, &str), FeatureVector> = HashMap::new();
    for list in train_run.iter() {
        for ((d, _), f) in list.entries().iter().zip(inputs.raw_features(list)?) {
            all_feats.push(f);
            feats_by_pair.insert((list.query_id.as_str(), d.as_str()), f);
        }
    }
    let stats = FeatureStats::fit(&all_feats)?;

    let mut query_ids: Vec<&str> = pairs.iter().map(|p| p.query_id.as_str()).collect();
    query_ids.dedup();
    let query_inputs: Vec<QueryInput> = query_ids
        .iter()
        .map(|q| Ok(inputs.resources.query_input(inputs.query(q)?)))
        .collect::<Result<_>>()?;
    let qindex: HashMap<&str, usize> = query_ids.iter().enumerate().map(|(i, q)| (*q, i)).collect();
    let example = |qid: &str, doc: &str, label: f64| Example {
        query: qindex[qid],
        doc: doc.to_string(),
        features: stats.transform(&feats_by_pair[&(qid, doc)]),
        label,
    };
    let pair_examples: Vec<[Example; 2]> = pairs
        .iter()
        .map(|p| [example(&p.query_id, &p.positive, 1.0), example(&p.query_id, &p.negative, 0.0)])
        .collect();

    let mut docs = DocCache::default();
    for p in &pairs {
        docs.get(inputs, &p.positive)?;
        docs.get(inputs, &p.negative)?;
    }

    let mut scorer = BilingualScorer::new(ranker.clone(), &mut stream(cfg.seed, STREAM_INIT))?;
    let mut adam = AdamState::new(cfg.adam);
    let full_loss = |scorer: &BilingualScorer, docs: &DocCache| -> Result<f64> {
        let mut total = 0.0;
        for ex in pair_examples.iter().flatten() {
            let s = scorer.score(&query_inputs[ex.query], &docs.inputs[&ex.doc], &ex.features)?;
            total += bce_loss(s, ex.label);
        }
        Ok(total / (2 * pair_examples.len()) as f64)
    };
    let initial_loss = full_loss(&scorer, &docs)?;
    info!("pairs={} initial_loss={initial_loss:.6}", pairs.len());

    let mut order: Vec<usize> = (0..pair_examples.len()).collect();
    let mut best: Option<(usize, f64, BilingualScorer)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, STREAM_SHUFFLE + epoch as u64));
        let flat: Vec<&Example> = order.iter().flat_map(|&i| pair_examples[i].iter()).collect();
        let mut batch_losses = Vec::new();
        for (b, batch) in flat.chunks(cfg.batch_size).enumerate() {
            let diverged = |e: Error| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, batch: b },
                other => other,
            };
            let mut g = Graph::with_mode(true, batch_seed(cfg.seed, epoch, b));
            let mut logits = Vec::with_capacity(batch.len());
            for ex in batch {
                let s = scorer
                    .score_graph(&mut g, &query_inputs[ex.query], &docs.inputs[&ex.doc], &ex.features)
                    .map_err(diverged)?;
                logits.push(s);
            }
            let labels: Vec<f64> = batch.iter().map(|e| e.label).collect();
            let logits = g.concat(&logits, 1).map_err(diverged)?;
            let loss = g.bce_with_logits(logits, &labels).map_err(diverged)?;
            let grads = g.backward(loss).map_err(diverged)?;
            let grads = grads.into_params();
            if grads.values().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            adam.step(&mut scorer.params, &grads);
            batch_losses.push(g.scalar(loss));
        }
        let batch_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        let train_loss = full_loss(&scorer, &docs)?;
        let dev = rerank_with(&scorer, &stats, dev_run, inputs, &mut docs)?;
        let dev_map = mean_average_precision(&dev, &dev_qrels);
        info!("epoch {epoch} batch_loss={batch_loss:.6} train_loss={train_loss:.6} dev_map={dev_map:.6}");
        epochs.push(EpochLog {
            epoch,
            batch_loss,
            train_loss,
            dev_map,
        });
        if best.as_ref().is_none_or(|(_, m, _)| dev_map > *m) {
            best = Some((epoch, dev_map, scorer.clone()));
        }
    }
    let (epoch, dev_map, best_scorer) = best.expect("at least one epoch");
    let meta = CheckpointMeta {
        seed: cfg.seed,
        epoch,
        dev_map,
        dev_map_history: epochs.iter().map(|e| e.dev_map).collect(),
        source_space: space_fingerprint(&inputs.resources.source_embeddings),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(&best_scorer, stats, inputs.channel, meta),
        initial_loss,
        epochs,
    })
}

/// Index of the best value, earliest on ties (1-based epochs map to index + 1).
pub fn select_best_epoch(dev_maps: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &m) in dev_maps.iter().enumerate() {
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| i + 1)
}
