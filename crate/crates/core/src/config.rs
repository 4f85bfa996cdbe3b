//! Flat `section.key = value` experiment configuration.
//!
//! Every key has a default (possibly empty, meaning unset); files and
//! `--set key=value` overrides may only name known keys. The effective
//! configuration is echoed next to every artifact a command writes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autodiff::AdamConfig;
use crate::corpus::{read_file, GenConfig, Side};
use crate::embeddings::{InductionMethod, RefinementOptions};
use crate::evaluation::EvalConfig;
use crate::rankers::{Arch, RankerConfig};
use crate::training::{FeatureChannel, TrainConfig};
use crate::{Error, Result};

/// `(key, default)`; an empty default means unset.
const KEYS: &[(&str, &str)] = &[
    ("seed", ""),
    ("paths.docs", ""),
    ("paths.queries", ""),
    ("paths.qrels", ""),
    ("paths.source_embeddings", ""),
    ("paths.target_embeddings", ""),
    ("paths.alignment", ""),
    ("paths.lexicon", ""),
    ("paths.test_lexicon", ""),
    ("paths.translation_table", ""),
    ("paths.index", ""),
    ("paths.run", ""),
    ("paths.train_run", ""),
    ("paths.dev_run", ""),
    ("paths.tune_run", ""),
    ("paths.checkpoint", ""),
    ("paths.checkpoints", ""),
    ("paths.out", ""),
    ("retrieval.mu", "1000"),
    ("retrieval.k", "100"),
    ("retrieval.mode", "ql"),
    ("retrieval.side", "translated"),
    ("ranker.arch", "posit-drmm"),
    ("ranker.embed_dim", "50"),
    ("ranker.k_pool", ""),
    ("ranker.filter_sizes", "1,2,3"),
    ("ranker.filters_per_size", "32"),
    ("ranker.l_q", "8"),
    ("ranker.l_d", "300"),
    ("ranker.dropout", "0.3"),
    ("ranker.term_hidden", "8"),
    ("ranker.mlp_hidden", "32"),
    ("ranker.bilingual", "true"),
    ("ranker.share_components", "false"),
    ("ranker.features", "true"),
    ("ranker.feature_channel", "q-dh"),
    ("train.epochs", "20"),
    ("train.batch_size", "32"),
    ("train.lr", "0.001"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.eps", "1e-8"),
    ("eval.k", "20"),
    ("eval.beta", "40"),
    ("eval.threshold", ""),
    ("align.iters", "5"),
    ("align.method", "nn"),
    ("align.csls_k", "10"),
    ("align.source_lang", ""),
    ("align.target_lang", ""),
    ("synth.n_docs", "500"),
    ("synth.n_queries", "100"),
    ("synth.vocab_size", "2000"),
    ("synth.doc_len", "20,60"),
    ("synth.query_len", "2,4"),
    ("synth.relevant", "1,4"),
    ("synth.embed_dim", "50"),
    ("synth.n_topics", "25"),
    ("synth.split", "50,25,25"),
    ("synth.noise", "0"),
    ("synth.source_lang", "en"),
    ("synth.target_lang", "xa"),
    ("synth.cipher_seed", ""),
    ("synth.seed_lexicon_fraction", "0.5"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            values: KEYS.iter().map(|(k, v)| (*k, v.to_string())).collect(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Usage(format!("{key}: cannot parse {raw:?}")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Usage(format!("{key}: expected a boolean, got {raw:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(|s| parse_value(key, s.trim())).collect()
}

fn parse_range(key: &str, raw: &str) -> Result<(usize, usize)> {
    match parse_list::<usize>(key, raw)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Usage(format!("{key}: expected \"min,max\", got {raw:?}"))),
    }
}

impl ExperimentConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _)| *k)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (k, _) = KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| Error::Usage(format!("unknown config key {key:?}")))?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override {spec:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeMap::new();
        for (i, line) in src.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected \"key = value\", got {line:?}")))?;
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), i + 1) {
                return Err(err(format!("{k} already set on line {prev}")));
            }
            cfg.set(k, v).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_file(path)?, &path.display().to_string())
    }

    /// Every key in sorted order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            if v.is_empty() {
                let _ = writeln!(out, "{k} =");
            } else {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Raw value; `None` when unset.
    pub fn get(&self, key: &str) -> Option<&str> {
        match self.values.get(key) {
            Some(v) if !v.is_empty() => Some(v.as_str()),
            Some(_) => None,
            None => panic!("unregistered config key {key}"),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Usage(format!("{key} is required for this command")))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        parse_value(key, self.require(key)?)
    }

    pub fn parsed_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        parse_bool(key, self.require(key)?)
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require(key).map(PathBuf::from)
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// An input path that must already exist.
    pub fn input(&self, key: &str) -> Result<PathBuf> {
        let p = self.path(key)?;
        check_exists(&p)?;
        Ok(p)
    }

    pub fn opt_input(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.opt_path(key) {
            Some(p) => {
                check_exists(&p)?;
                Ok(Some(p))
            }
            None => Ok(None),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
            .ok_or_else(|| Error::Usage("seed is required (--seed N or seed = N)".into()))
            .and_then(|v| parse_value("seed", v))
    }

    pub fn side(&self) -> Result<Side> {
        self.parsed("retrieval.side")
    }

    pub fn ranker(&self) -> Result<RankerConfig> {
        let arch: Arch = self.parsed("ranker.arch")?;
        let dim: usize = self.parsed("ranker.embed_dim")?;
        let mut cfg = RankerConfig::new(arch).with_dim(dim);
        if let Some(k) = self.parsed_opt("ranker.k_pool")? {
            cfg.k_pool = k;
        }
        cfg.filter_sizes = parse_list("ranker.filter_sizes", self.require("ranker.filter_sizes")?)?;
        cfg.filters_per_size = self.parsed("ranker.filters_per_size")?;
        cfg.l_q = self.parsed("ranker.l_q")?;
        cfg.l_d = self.parsed("ranker.l_d")?;
        cfg.dropout = self.parsed("ranker.dropout")?;
        cfg.term_hidden = self.parsed("ranker.term_hidden")?;
        cfg.mlp_hidden = self.parsed("ranker.mlp_hidden")?;
        cfg.bilingual = self.flag("ranker.bilingual")?;
        cfg.share_components = self.flag("ranker.share_components")?;
        cfg.use_features = self.flag("ranker.features")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn feature_channel(&self) -> Result<FeatureChannel> {
        self.parsed("ranker.feature_channel")
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.parsed("train.epochs")?,
            batch_size: self.parsed("train.batch_size")?,
            adam: AdamConfig {
                lr: self.parsed("train.lr")?,
                beta1: self.parsed("train.beta1")?,
                beta2: self.parsed("train.beta2")?,
                eps: self.parsed("train.eps")?,
            },
            seed: self.seed()?,
        })
    }

    pub fn eval(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            cutoff_k: self.parsed("eval.k")?,
            beta: self.parsed("eval.beta")?,
            aqwv_threshold: self.parsed_opt("eval.threshold")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn refinement(&self) -> Result<RefinementOptions> {
        Ok(RefinementOptions {
            iters: self.parsed("align.iters")?,
            method: self.parsed::<InductionMethod>("align.method")?,
            k_csls: self.parsed("align.csls_k")?,
        })
    }

    pub fn synth(&self) -> Result<GenConfig> {
        let split = parse_list::<usize>("synth.split", self.require("synth.split")?)?;
        let [a, b, c] = split[..] else {
            return Err(Error::Usage("synth.split: expected \"train,dev,test\"".into()));
        };
        Ok(GenConfig {
            seed: self.seed()?,
            n_docs: self.parsed("synth.n_docs")?,
            n_queries: self.parsed("synth.n_queries")?,
            vocab_size: self.parsed("synth.vocab_size")?,
            doc_len_range: parse_range("synth.doc_len", self.require("synth.doc_len")?)?,
            embed_dim: self.parsed("synth.embed_dim")?,
            n_topics: self.parsed("synth.n_topics")?,
            query_len_range: parse_range("synth.query_len", self.require("synth.query_len")?)?,
            relevant_range: parse_range("synth.relevant", self.require("synth.relevant")?)?,
            split: (a, b, c),
            translation_noise: self.parsed("synth.noise")?,
            source_lang: self.require("synth.source_lang")?.to_string(),
            target_lang: self.require("synth.target_lang")?.to_string(),
        })
    }

    /// Parses every typed section so bad values fail before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.ranker()?;
        self.feature_channel()?;
        self.eval()?;
        self.refinement()?;
        self.side()?;
        let _: f64 = self.parsed("retrieval.mu")?;
        let _: usize = self.parsed("retrieval.k")?;
        let _: f64 = self.parsed("synth.seed_lexicon_fraction")?;
        let _: Option<u64> = self.parsed_opt("synth.cipher_seed")?;
        if self.get("seed").is_some() {
            self.train()?;
            self.synth()?;
        }
        Ok(())
    }
}

fn check_exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Io {
            path: p.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        })
    }
}
