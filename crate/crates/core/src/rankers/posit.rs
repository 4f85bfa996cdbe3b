//! POSIT-DRMM: BiLSTM context encodings, pooled similarity features, term
//! gating.

use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::{Error, Result};

use super::RankerConfig;

pub(super) fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &RankerConfig, rng: &mut R) {
    let (d, h, t) = (cfg.embed_dim, cfg.lstm_hidden, cfg.term_hidden);
    for dir in ["fw", "bw"] {
        store.uniform(format!("{prefix}.lstm.{dir}.wx"), &[d, 4 * h], 0.1, rng);
        store.uniform(format!("{prefix}.lstm.{dir}.wh"), &[h, 4 * h], 0.1, rng);
        store.zeros(format!("{prefix}.lstm.{dir}.b"), &[1, 4 * h]);
    }
    store.uniform(format!("{prefix}.term.w1"), &[2, t], 0.1, rng);
    store.zeros(format!("{prefix}.term.b1"), &[1, t]);
    store.uniform(format!("{prefix}.term.w2"), &[t, 1], 0.1, rng);
    store.zeros(format!("{prefix}.term.b2"), &[1, 1]);
    store.uniform(format!("{prefix}.gate.w"), &[d + 1, 1], 0.1, rng);
}

fn lstm_direction(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    dir: &str,
    x: Var,
    n: usize,
    h: usize,
) -> Result<Vec<Var>> {
    let wx = g.param(store, &format!("{prefix}.lstm.{dir}.wx"))?;
    let wh = g.param(store, &format!("{prefix}.lstm.{dir}.wh"))?;
    let b = g.param(store, &format!("{prefix}.lstm.{dir}.b"))?;
    let xw = g.matmul(x, wx)?;
    let xw = g.add_row(xw, b)?;
    let mut state = g.constant(&[1, h], vec![0.0; h])?;
    let mut cell = g.constant(&[1, h], vec![0.0; h])?;
    let mut out = vec![state; n];
    let steps: Vec<usize> = if dir == "fw" { (0..n).collect() } else { (0..n).rev().collect() };
    for t in steps {
        let xt = g.slice(xw, 0, t, t + 1)?;
        let hw = g.matmul(state, wh)?;
        let pre = g.add(xt, hw)?;
        let i = g.slice(pre, 1, 0, h)?;
        let i = g.sigmoid(i)?;
        let f = g.slice(pre, 1, h, 2 * h)?;
        let f = g.sigmoid(f)?;
        let c_hat = g.slice(pre, 1, 2 * h, 3 * h)?;
        let c_hat = g.tanh(c_hat)?;
        let o = g.slice(pre, 1, 3 * h, 4 * h)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, cell)?;
        let write = g.mul(i, c_hat)?;
        cell = g.add(keep, write)?;
        let squashed = g.tanh(cell)?;
        state = g.mul(o, squashed)?;
        out[t] = state;
    }
    Ok(out)
}

/// Context-sensitive encodings `x + BiLSTM(x)` of an `[n, d]` sequence, with
/// dropout on the output while training.
pub fn encode_posit(g: &mut Graph, store: &ParamStore, prefix: &str, cfg: &RankerConfig, x: Var) -> Result<Var> {
    let (n, d) = match g.shape(x) {
        [n, d] => (*n, *d),
        s => return Err(Error::shape("encode_posit", format!("input shape {s:?}"))),
    };
    if d % 2 != 0 {
        return Err(Error::shape("encode_posit", format!("embedding dimension {d} is odd")));
    }
    if d != cfg.embed_dim {
        return Err(Error::shape("encode_posit", format!("dimension {d}, expected {}", cfg.embed_dim)));
    }
    if n == 0 {
        return Ok(x);
    }
    let h = d / 2;
    let fw = lstm_direction(g, store, prefix, "fw", x, n, h)?;
    let bw = lstm_direction(g, store, prefix, "bw", x, n, h)?;
    let fw = g.concat(&fw, 0)?;
    let bw = g.concat(&bw, 0)?;
    let states = g.concat(&[fw, bw], 1)?;
    let out = g.add(x, states)?;
    g.dropout(out, cfg.dropout)
}

/// Per-query-term features `[max_j S_ij, mean(top-k_j S_ij)]`, zero for an
/// empty document.
pub(super) fn pooled_features(g: &mut Graph, q: Var, d: Var, k: usize) -> Result<Var> {
    let m = g.shape(q)[0];
    if g.shape(d)[0] == 0 {
        return g.constant(&[m, 2], vec![0.0; 2 * m]);
    }
    let sim = g.cosine_sim_matrix(q, d)?;
    let mx = g.max_pool_row(sim)?;
    let top = g.kmax_pool_row(sim, k)?;
    let avg = g.mean_rows(top)?;
    g.concat(&[mx, avg], 1)
}

/// Softmax gates over query terms from `[enc_i ; idf_i]`, shape `[1, m]`.
pub(super) fn gates(g: &mut Graph, store: &ParamStore, prefix: &str, q: Var, idf: &[f64]) -> Result<Var> {
    let m = g.shape(q)[0];
    if idf.len() != m {
        return Err(Error::shape("posit_gate", format!("{} idf values for {m} query terms", idf.len())));
    }
    let idf = g.constant(&[m, 1], idf.to_vec())?;
    let inp = g.concat(&[q, idf], 1)?;
    let wg = g.param(store, &format!("{prefix}.gate.w"))?;
    let logits = g.matmul(inp, wg)?;
    let logits = g.transpose(logits)?;
    g.softmax_rows(logits)
}

/// Gated sum of MLP term scores over encoded query `[m, d]` and document
/// `[n, d]`.
pub fn score_posit_drmm(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    cfg: &RankerConfig,
    q: Var,
    d: Var,
    idf: &[f64],
) -> Result<Var> {
    if g.shape(q)[0] == 0 {
        return Err(Error::shape("score_posit_drmm", "empty query"));
    }
    let feats = pooled_features(g, q, d, cfg.k_pool)?;
    let w1 = g.param(store, &format!("{prefix}.term.w1"))?;
    let b1 = g.param(store, &format!("{prefix}.term.b1"))?;
    let w2 = g.param(store, &format!("{prefix}.term.w2"))?;
    let b2 = g.param(store, &format!("{prefix}.term.b2"))?;
    let hidden = g.matmul(feats, w1)?;
    let hidden = g.add_row(hidden, b1)?;
    let hidden = g.tanh(hidden)?;
    let terms = g.matmul(hidden, w2)?;
    let terms = g.add_row(terms, b2)?;
    let gate = gates(g, store, prefix, q, idf)?;
    g.matmul(gate, terms)
}
