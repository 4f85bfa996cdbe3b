use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, ParamTensor};
use crate::corpus::read_file;
use crate::embeddings::EmbeddingMatrix;
use crate::features::FeatureStats;
use crate::rankers::{Arch, BilingualScorer, RankerConfig};
use crate::{Error, Result};

use super::FeatureChannel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStatsRecord {
    pub channel: FeatureChannel,
    #[serde(flatten)]
    pub stats: FeatureStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Selected epoch (1-based).
    pub epoch: usize,
    pub dev_map: f64,
    pub dev_map_history: Vec<f64>,
    /// Fingerprint of the source embedding space the model was trained in.
    pub source_space: String,
}

/// A trained scorer. Deliberately carries no language identifiers: any
/// language pair aligned into the same source space can reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: Arch,
    pub config: RankerConfig,
    pub feature_stats: FeatureStatsRecord,
    pub tensors: Vec<TensorRecord>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(scorer: &BilingualScorer, stats: FeatureStats, channel: FeatureChannel, meta: CheckpointMeta) -> Self {
        let tensors = scorer
            .params
            .iter()
            .map(|(name, t)| TensorRecord {
                name: name.clone(),
                shape: t.shape.clone(),
                values: t.values.clone(),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            arch: scorer.config.arch,
            config: scorer.config.clone(),
            feature_stats: FeatureStatsRecord { channel, stats },
            tensors,
            meta,
        }
    }

    pub fn scorer(&self) -> Result<BilingualScorer> {
        if self.arch != self.config.arch {
            return Err(Error::data(format!(
                "checkpoint arch {} disagrees with config arch {}",
                self.arch, self.config.arch
            )));
        }
        let mut store = ParamStore::new();
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(Error::data(format!("tensor {} has {} values for shape {:?}", t.name, t.values.len(), t.shape)));
            }
            store.insert(
                t.name.clone(),
                ParamTensor {
                    shape: t.shape.clone(),
                    values: t.values.clone(),
                },
            )?;
        }
        BilingualScorer::from_params(self.config.clone(), store)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(src: &str, origin: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(src).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "{origin}: unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        if ck.tensors.iter().flat_map(|t| &t.values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint"));
        }
        Ok(ck)
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::from_json(&read_file(path)?, &path.display().to_string())
}

/// FNV-1a over tokens and vector bits; stable across platforms and builds.
pub fn space_fingerprint(emb: &EmbeddingMatrix) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (i, t) in emb.tokens().iter().enumerate() {
        eat(t.as_bytes());
        eat(&[0]);
        for v in emb.vectors().row(i) {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    format!("{h:016x}")
}
