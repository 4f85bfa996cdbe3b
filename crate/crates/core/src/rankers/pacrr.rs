//! PACRR and PACRR-DRMM over a fixed-size similarity matrix.

use rand::Rng;

use crate::autodiff::{Graph, Padding, ParamStore, Var};
use crate::Result;

use super::{Arch, RankerConfig};

pub(super) fn feature_width(cfg: &RankerConfig) -> usize {
    cfg.k_pool * cfg.filter_sizes.len() + 1
}

pub(super) fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &RankerConfig, rng: &mut R) {
    for &n in &cfg.filter_sizes {
        store.uniform(format!("{prefix}.conv{n}.w"), &[cfg.filters_per_size, n, n], 0.1, rng);
        store.zeros(format!("{prefix}.conv{n}.b"), &[cfg.filters_per_size]);
    }
    let width = feature_width(cfg);
    match cfg.arch {
        Arch::Pacrr => {
            store.uniform(format!("{prefix}.mlp.w1"), &[width * cfg.l_q, cfg.mlp_hidden], 0.1, rng);
            store.zeros(format!("{prefix}.mlp.b1"), &[1, cfg.mlp_hidden]);
            store.uniform(format!("{prefix}.mlp.w2"), &[cfg.mlp_hidden, 1], 0.1, rng);
            store.zeros(format!("{prefix}.mlp.b2"), &[1, 1]);
        }
        Arch::PacrrDrmm => {
            store.uniform(format!("{prefix}.row.w1"), &[width, cfg.term_hidden], 0.1, rng);
            store.zeros(format!("{prefix}.row.b1"), &[1, cfg.term_hidden]);
            store.uniform(format!("{prefix}.row.w2"), &[cfg.term_hidden, 1], 0.1, rng);
            store.zeros(format!("{prefix}.row.b2"), &[1, 1]);
            store.uniform(format!("{prefix}.comb.w"), &[cfg.l_q, 1], 0.1, rng);
            store.zeros(format!("{prefix}.comb.b"), &[1, 1]);
        }
        Arch::PositDrmm => unreachable!("posit parameters are initialized elsewhere"),
    }
}

/// Softmax of the IDF values over the real query terms; padded rows get 0.
pub fn idf_column(idf: &[f64], l_q: usize) -> Vec<f64> {
    let live = &idf[..idf.len().min(l_q)];
    let mut out = vec![0.0; l_q];
    if live.is_empty() {
        return out;
    }
    let mx = live.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = live.iter().map(|x| (x - mx).exp()).sum();
    for (o, x) in out.iter_mut().zip(live) {
        *o = (x - mx).exp() / z;
    }
    out
}

/// The `[L_q, k·|sizes| + 1]` feature matrix: per filter size, max over
/// channels then row k-max; plus the normalized IDF column.
pub fn feature_matrix(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    cfg: &RankerConfig,
    sim: Var,
    idf: &[f64],
) -> Result<Var> {
    let mut parts = Vec::with_capacity(cfg.filter_sizes.len() + 1);
    for &n in &cfg.filter_sizes {
        let w = g.param(store, &format!("{prefix}.conv{n}.w"))?;
        let b = g.param(store, &format!("{prefix}.conv{n}.b"))?;
        let conv = g.conv2d(sim, w, b, Padding::Same)?;
        let best = g.max_channels(conv)?;
        parts.push(g.kmax_pool_row(best, cfg.k_pool)?);
    }
    parts.push(g.constant(&[cfg.l_q, 1], idf_column(idf, cfg.l_q))?);
    g.concat(&parts, 1)
}

pub fn score_pacrr(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    cfg: &RankerConfig,
    sim: Var,
    idf: &[f64],
) -> Result<Var> {
    let feats = feature_matrix(g, store, prefix, cfg, sim, idf)?;
    let flat = g.reshape(feats, &[1, cfg.l_q * feature_width(cfg)])?;
    let w1 = g.param(store, &format!("{prefix}.mlp.w1"))?;
    let b1 = g.param(store, &format!("{prefix}.mlp.b1"))?;
    let w2 = g.param(store, &format!("{prefix}.mlp.w2"))?;
    let b2 = g.param(store, &format!("{prefix}.mlp.b2"))?;
    let hidden = g.matmul(flat, w1)?;
    let hidden = g.add_row(hidden, b1)?;
    let hidden = g.relu(hidden)?;
    let out = g.matmul(hidden, w2)?;
    g.add_row(out, b2)
}

/// Shared row-MLP term scores `[L_q, 1]`.
pub fn pacrr_drmm_term_scores(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    cfg: &RankerConfig,
    sim: Var,
    idf: &[f64],
) -> Result<Var> {
    let feats = feature_matrix(g, store, prefix, cfg, sim, idf)?;
    let w1 = g.param(store, &format!("{prefix}.row.w1"))?;
    let b1 = g.param(store, &format!("{prefix}.row.b1"))?;
    let w2 = g.param(store, &format!("{prefix}.row.w2"))?;
    let b2 = g.param(store, &format!("{prefix}.row.b2"))?;
    let hidden = g.matmul(feats, w1)?;
    let hidden = g.add_row(hidden, b1)?;
    let hidden = g.relu(hidden)?;
    let terms = g.matmul(hidden, w2)?;
    g.add_row(terms, b2)
}

pub fn score_pacrr_drmm(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    cfg: &RankerConfig,
    sim: Var,
    idf: &[f64],
) -> Result<Var> {
    let terms = pacrr_drmm_term_scores(g, store, prefix, cfg, sim, idf)?;
    let row = g.transpose(terms)?;
    let w = g.param(store, &format!("{prefix}.comb.w"))?;
    let b = g.param(store, &format!("{prefix}.comb.b"))?;
    let out = g.matmul(row, w)?;
    g.add_row(out, b)
}
