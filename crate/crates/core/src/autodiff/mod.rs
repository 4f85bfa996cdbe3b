//! Minimal dense reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and enough saved state to run its backward rule. [`Graph::backward`]
//! walks the tape once in reverse. Parameters live in a [`ParamStore`] and are
//! copied into the tape on first use through [`Graph::param`].

mod adam;
pub mod gradcheck;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use params::{ParamStore, ParamTensor};

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input size; the input is zero-padded by `(n-1)/2`
    /// before and the remainder after.
    Same,
    Valid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>, usize),
    Slice { a: Var, axis: usize, start: usize },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Dropout(Var, Vec<f64>),
    MaxPoolRow(Var, Vec<Option<usize>>),
    KmaxPoolRow(Var, Vec<Option<usize>>),
    MeanRows(Var),
    Cosine { a: Var, b: Var, a_norm: Vec<f64>, b_norm: Vec<f64> },
    Conv2d { input: Var, weight: Var, bias: Var, pad: usize },
    MaxChannels(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Reshape(Var),
    BceWithLogits(Var, Vec<f64>),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Computation tape.
pub struct Graph {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
    bound: HashMap<String, Var>,
    bound_order: Vec<(String, Var)>,
    kinks: DefaultHasher,
}

impl Graph {
    /// Inference tape: dropout is the identity.
    pub fn new() -> Self {
        Graph::with_mode(false, 0)
    }

    /// `train` enables dropout, whose masks are drawn from a generator seeded
    /// with `seed`.
    pub fn with_mode(train: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bound: HashMap::new(),
            bound_order: Vec::new(),
            kinks: DefaultHasher::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Digest of every discrete branch taken so far (relu signs, pooling
    /// argmaxes). Two forward passes with equal digests traverse the same
    /// piecewise-smooth region.
    pub fn kink_signature(&self) -> u64 {
        self.kinks.finish()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, name: &'static str) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            other => parents(other).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape(
                "leaf",
                format!("{} values for shape {shape:?}", values.len()),
            ));
        }
        let v = self.push(shape.to_vec(), values, Op::Leaf, "leaf")?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    /// Input whose gradient is tracked.
    pub fn variable(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, true)
    }

    /// Binds a named parameter, copying it in on first use.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| Error::data(format!("missing parameter {name}")))?;
        let v = self.variable(&p.shape, p.values.clone())?;
        self.bound.insert(name.to_string(), v);
        self.bound_order.push((name.to_string(), v));
        Ok(v)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &x) in av[i * k..(i + 1) * k].iter().enumerate() {
                if x != 0.0 {
                    for (o, &y) in orow.iter_mut().zip(&bv[kk * n..(kk + 1) * n]) {
                        *o += x * y;
                    }
                }
            }
        }
        self.push(vec![m, n], out, Op::MatMul(a, b), "matmul")
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(self.shape(a).to_vec(), out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `a [m, n] + row [1, n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.value(row).len() != n {
            return Err(Error::shape(
                "add_row",
                format!("[{m}, {n}] + {:?}", self.shape(row)),
            ));
        }
        let rv = self.value(row);
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rv[i % n])
            .collect();
        self.push(vec![m, n], out, Op::AddRow(a, row), "add_row")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x * c).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c), "scale")
    }

    /// Concatenates matrices along `axis` (0: stack rows, 1: stack columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::shape("concat", "needs >= 1 part and axis 0 or 1"));
        }
        let dims = parts
            .iter()
            .map(|&p| self.dims2(p, "concat"))
            .collect::<Result<Vec<_>>>()?;
        let (m0, n0) = dims[0];
        if axis == 0 {
            if dims.iter().any(|d| d.1 != n0) {
                return Err(Error::shape("concat", format!("row concat of {dims:?}")));
            }
            let m = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(m * n0);
            for &p in parts {
                out.extend_from_slice(self.value(p));
            }
            self.push(vec![m, n0], out, Op::Concat(parts.to_vec(), 0), "concat")
        } else {
            if dims.iter().any(|d| d.0 != m0) {
                return Err(Error::shape("concat", format!("column concat of {dims:?}")));
            }
            let n: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(m0 * n);
            for i in 0..m0 {
                for (&p, &(_, np)) in parts.iter().zip(&dims) {
                    out.extend_from_slice(&self.value(p)[i * np..(i + 1) * np]);
                }
            }
            self.push(vec![m0, n], out, Op::Concat(parts.to_vec(), 1), "concat")
        }
    }

    /// Rows (`axis` 0) or columns (`axis` 1) `start..end` of a matrix.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "slice")?;
        let limit = if axis == 0 { m } else { n };
        if axis > 1 || start > end || end > limit {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {end}) on axis {axis} of [{m}, {n}]"),
            ));
        }
        let av = self.value(a);
        let (shape, out) = if axis == 0 {
            (vec![end - start, n], av[start * n..end * n].to_vec())
        } else {
            let mut out = Vec::with_capacity(m * (end - start));
            for i in 0..m {
                out.extend_from_slice(&av[i * n + start..i * n + end]);
            }
            (vec![m, end - start], out)
        };
        self.push(shape, out, Op::Slice { a, axis, start }, "slice")
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(self.shape(a).to_vec(), out, op, name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        for &x in self.nodes[a.0].value.iter() {
            self.kinks.write_u8((x > 0.0) as u8);
        }
        self.map(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    /// Softmax along the last axis of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "softmax_rows")?;
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &x) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (x - mx).exp();
                z += *o;
            }
            out[i * n..(i + 1) * n].iter_mut().for_each(|o| *o /= z);
        }
        self.push(vec![m, n], out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Inverted dropout: identity unless the graph is training; survivors are
    /// scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Usage(format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.push(self.shape(a).to_vec(), out, Op::Dropout(a, mask), "dropout")
    }

    /// Row-wise maximum `[m, n] -> [m, 1]`; empty rows give 0.
    pub fn max_pool_row(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "max_pool_row")?;
        let av = self.value(a);
        let mut idx = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let sel = top_k_indices(&av[i * n..(i + 1) * n], 1);
            match sel.first() {
                Some(&j) => {
                    out.push(av[i * n + j]);
                    idx.push(Some(j));
                }
                None => {
                    out.push(0.0);
                    idx.push(None);
                }
            }
        }
        for j in &idx {
            self.kinks.write_usize(j.map_or(usize::MAX, |j| j));
        }
        self.push(vec![m, 1], out, Op::MaxPoolRow(a, idx), "max_pool_row")
    }

    /// Row-wise k largest values in descending order, zero-padded when a row
    /// has fewer than `k` entries: `[m, n] -> [m, k]`.
    pub fn kmax_pool_row(&mut self, a: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::shape("kmax_pool_row", "k must be >= 1"));
        }
        let (m, n) = self.dims2(a, "kmax_pool_row")?;
        let av = self.value(a);
        let mut idx = Vec::with_capacity(m * k);
        let mut out = Vec::with_capacity(m * k);
        for i in 0..m {
            let sel = top_k_indices(&av[i * n..(i + 1) * n], k);
            for slot in 0..k {
                match sel.get(slot) {
                    Some(&j) => {
                        out.push(av[i * n + j]);
                        idx.push(Some(j));
                    }
                    None => {
                        out.push(0.0);
                        idx.push(None);
                    }
                }
            }
        }
        for j in &idx {
            self.kinks.write_usize(j.map_or(usize::MAX, |j| j));
        }
        self.push(vec![m, k], out, Op::KmaxPoolRow(a, idx), "kmax_pool_row")
    }

    /// Row means `[m, n] -> [m, 1]` (0 for empty rows).
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mean_rows")?;
        let av = self.value(a);
        let out = (0..m)
            .map(|i| {
                if n == 0 {
                    0.0
                } else {
                    av[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64
                }
            })
            .collect();
        self.push(vec![m, 1], out, Op::MeanRows(a), "mean_rows")
    }

    /// Cosine similarities between the rows of `a [m, d]` and `b [n, d]`.
    /// Rows with zero norm produce zero similarities.
    pub fn cosine_sim_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, d) = self.dims2(a, "cosine_sim_matrix")?;
        let (n, d2) = self.dims2(b, "cosine_sim_matrix")?;
        if d != d2 {
            return Err(Error::shape("cosine_sim_matrix", format!("[{m}, {d}] vs [{n}, {d2}]")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let row_norms = |v: &[f64], r: usize| -> Vec<f64> {
            (0..r)
                .map(|i| v[i * d..(i + 1) * d].iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect()
        };
        let (an, bn) = (row_norms(av, m), row_norms(bv, n));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            if an[i] == 0.0 {
                continue;
            }
            let ai = &av[i * d..(i + 1) * d];
            for j in 0..n {
                if bn[j] == 0.0 {
                    continue;
                }
                let dot: f64 = ai.iter().zip(&bv[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum();
                out[i * n + j] = dot / (an[i] * bn[j]);
            }
        }
        self.push(
            vec![m, n],
            out,
            Op::Cosine {
                a,
                b,
                a_norm: an,
                b_norm: bn,
            },
            "cosine_sim_matrix",
        )
    }

    /// Single-input-channel 2-D convolution.
    ///
    /// `input [H, W]`, `weight [C, n, n]`, `bias [C]` (or `[C, 1]`/`[1, C]`)
    /// → `[C, H', W']` where `H' = H` under [`Padding::Same`] and `H - n + 1`
    /// under [`Padding::Valid`].
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: Padding) -> Result<Var> {
        let (h, w) = self.dims2(input, "conv2d")?;
        let (c, kh, kw) = match self.shape(weight) {
            [c, kh, kw] => (*c, *kh, *kw),
            s => return Err(Error::shape("conv2d", format!("weight shape {s:?}"))),
        };
        if kh != kw || kh == 0 {
            return Err(Error::shape("conv2d", format!("non-square filter {kh}x{kw}")));
        }
        if self.value(bias).len() != c {
            return Err(Error::shape("conv2d", format!("bias {:?} for {c} filters", self.shape(bias))));
        }
        let n = kh;
        let (pad, ho, wo) = match padding {
            Padding::Same => ((n - 1) / 2, h, w),
            Padding::Valid => {
                if h < n || w < n {
                    return Err(Error::shape("conv2d", format!("input [{h}, {w}] smaller than {n}x{n} filter")));
                }
                (0, h - n + 1, w - n + 1)
            }
        };
        let (iv, wv, bv) = (self.value(input), self.value(weight), self.value(bias));
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            let filt = &wv[ch * n * n..(ch + 1) * n * n];
            let plane = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
            plane.iter_mut().for_each(|o| *o = bv[ch]);
            for u in 0..n {
                for v in 0..n {
                    let wt = filt[u * n + v];
                    if wt == 0.0 {
                        continue;
                    }
                    for i in 0..ho {
                        let ii = i + u;
                        if ii < pad || ii - pad >= h {
                            continue;
                        }
                        let in_row = &iv[(ii - pad) * w..(ii - pad + 1) * w];
                        let out_row = &mut plane[i * wo..(i + 1) * wo];
                        for (j, o) in out_row.iter_mut().enumerate() {
                            let jj = j + v;
                            if jj >= pad && jj - pad < w {
                                *o += wt * in_row[jj - pad];
                            }
                        }
                    }
                }
            }
        }
        self.push(
            vec![c, ho, wo],
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            },
            "conv2d",
        )
    }

    /// Maximum over the leading channel axis `[C, H, W] -> [H, W]`.
    pub fn max_channels(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = match self.shape(a) {
            [c, h, w] if *c > 0 => (*c, *h, *w),
            s => return Err(Error::shape("max_channels", format!("shape {s:?}"))),
        };
        let av = self.value(a);
        let plane = h * w;
        let mut out = Vec::with_capacity(plane);
        let mut arg = Vec::with_capacity(plane);
        for cell in 0..plane {
            let mut best = 0;
            for ch in 1..c {
                if av[ch * plane + cell] > av[best * plane + cell] {
                    best = ch;
                }
            }
            out.push(av[best * plane + cell]);
            arg.push(best);
        }
        for &b in &arg {
            self.kinks.write_usize(b);
        }
        self.push(vec![h, w], out, Op::MaxChannels(a, arg), "max_channels")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push(vec![1, 1], vec![s], Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.value(a).iter().sum::<f64>() / n as f64;
        self.push(vec![1, 1], vec![s], Op::Mean(a), "mean")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        self.push(vec![n, m], out, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        let out = self.value(a).to_vec();
        self.push(shape.to_vec(), out, Op::Reshape(a), "reshape")
    }

    /// Mean binary cross-entropy of logits against 0/1 labels, evaluated in
    /// log-space: `max(s, 0) − s·y + ln(1 + e^{−|s|})`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != labels.len() || lv.is_empty() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} logits vs {} labels", lv.len(), labels.len()),
            ));
        }
        let loss = lv
            .iter()
            .zip(labels)
            .map(|(&s, &y)| bce_logit(s, y))
            .sum::<f64>()
            / lv.len() as f64;
        self.push(vec![1, 1], vec![loss], Op::BceWithLogits(logits, labels.to_vec()), "bce_with_logits")
    }

    /// Reverse-mode gradients of a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got shape {:?}", self.shape(output)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backprop(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let params = self
            .bound_order
            .iter()
            .map(|(name, v)| {
                let g = grads[v.0]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; self.value(*v).len()]);
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for kk in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[kk * n + j];
                            }
                            ga[i * k + kk] += s;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        for kk in 0..k {
                            let x = av[i * k + kk];
                            if x != 0.0 {
                                for j in 0..n {
                                    gb[kk * n + j] += x * g[i * n + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let n = nodes[row.0].value.len();
                acc(*row, &mut |gr| {
                    for (i, x) in g.iter().enumerate() {
                        gr[i % n] += x;
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += c * x)),
            Op::Concat(parts, axis) => {
                let total_cols = node.shape[1];
                let mut offset = 0;
                for p in parts {
                    let (pm, pn) = (nodes[p.0].shape[0], nodes[p.0].shape[1]);
                    if *axis == 0 {
                        acc(*p, &mut |gp| add_into(gp, &g[offset * pn..(offset + pm) * pn]));
                        offset += pm;
                    } else {
                        acc(*p, &mut |gp| {
                            for i in 0..pm {
                                add_into(
                                    &mut gp[i * pn..(i + 1) * pn],
                                    &g[i * total_cols + offset..i * total_cols + offset + pn],
                                );
                            }
                        });
                        offset += pn;
                    }
                }
            }
            Op::Slice { a, axis, start } => {
                let n = nodes[a.0].shape[1];
                let (om, on) = (node.shape[0], node.shape[1]);
                acc(*a, &mut |ga| {
                    if *axis == 0 {
                        add_into(&mut ga[start * n..(start + om) * n], g);
                    } else {
                        for i in 0..om {
                            add_into(&mut ga[i * n + start..i * n + start + on], &g[i * on..(i + 1) * on]);
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = &nodes[a.0].value;
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        let dot: f64 = g[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                        for j in r {
                            ga[j] += y[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * mask[i];
                }
            }),
            Op::MaxPoolRow(a, idx) => {
                let n = nodes[a.0].shape[1];
                acc(*a, &mut |ga| {
                    for (i, j) in idx.iter().enumerate() {
                        if let Some(j) = j {
                            ga[i * n + j] += g[i];
                        }
                    }
                });
            }
            Op::KmaxPoolRow(a, idx) => {
                let n = nodes[a.0].shape[1];
                let k = node.shape[1];
                acc(*a, &mut |ga| {
                    for (s, j) in idx.iter().enumerate() {
                        if let Some(j) = j {
                            ga[(s / k) * n + j] += g[s];
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let n = nodes[a.0].shape[1];
                acc(*a, &mut |ga| {
                    for (i, gi) in g.iter().enumerate() {
                        for x in &mut ga[i * n..(i + 1) * n] {
                            *x += gi / n as f64;
                        }
                    }
                });
            }
            Op::Cosine { a, b, a_norm, b_norm } => {
                let (m, d) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[0];
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let c = &node.value;
                // dc_ij/da_i = b_j/(|a_i||b_j|) − c_ij·a_i/|a_i|²
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        if a_norm[i] == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 || b_norm[j] == 0.0 {
                                continue;
                            }
                            let s1 = gij / (a_norm[i] * b_norm[j]);
                            let s2 = gij * c[i * n + j] / (a_norm[i] * a_norm[i]);
                            for t in 0..d {
                                ga[i * d + t] += s1 * bv[j * d + t] - s2 * av[i * d + t];
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..n {
                        if b_norm[j] == 0.0 {
                            continue;
                        }
                        for i in 0..m {
                            let gij = g[i * n + j];
                            if gij == 0.0 || a_norm[i] == 0.0 {
                                continue;
                            }
                            let s1 = gij / (a_norm[i] * b_norm[j]);
                            let s2 = gij * c[i * n + j] / (b_norm[j] * b_norm[j]);
                            for t in 0..d {
                                gb[j * d + t] += s1 * av[i * d + t] - s2 * bv[j * d + t];
                            }
                        }
                    }
                });
            }
            Op::Conv2d { input, weight, bias, pad } => {
                let (h, w) = (nodes[input.0].shape[0], nodes[input.0].shape[1]);
                let (c, n) = (nodes[weight.0].shape[0], nodes[weight.0].shape[1]);
                let (ho, wo) = (node.shape[1], node.shape[2]);
                let (iv, wv) = (&nodes[input.0].value, &nodes[weight.0].value);
                let pad = *pad;
                // Visits every (channel, tap, output cell) whose input lies inside the image.
                let for_each_tap = |f: &mut dyn FnMut(usize, usize, usize, usize)| {
                    for ch in 0..c {
                        for u in 0..n {
                            for v in 0..n {
                                for i in 0..ho {
                                    let ii = i + u;
                                    if ii < pad || ii - pad >= h {
                                        continue;
                                    }
                                    for j in 0..wo {
                                        let jj = j + v;
                                        if jj < pad || jj - pad >= w {
                                            continue;
                                        }
                                        f(ch, u * n + v, ch * ho * wo + i * wo + j, (ii - pad) * w + jj - pad);
                                    }
                                }
                            }
                        }
                    }
                };
                acc(*weight, &mut |gw| {
                    for_each_tap(&mut |ch, tap, o, x| gw[ch * n * n + tap] += g[o] * iv[x]);
                });
                acc(*input, &mut |gi| {
                    for_each_tap(&mut |ch, tap, o, x| gi[x] += g[o] * wv[ch * n * n + tap]);
                });
                acc(*bias, &mut |gb| {
                    for ch in 0..c {
                        gb[ch] += g[ch * ho * wo..(ch + 1) * ho * wo].iter().sum::<f64>();
                    }
                });
            }
            Op::MaxChannels(a, arg) => {
                let plane = node.value.len();
                acc(*a, &mut |ga| {
                    for (cell, &ch) in arg.iter().enumerate() {
                        ga[ch * plane + cell] += g[cell];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.0].value.len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::BceWithLogits(a, labels) => {
                let s = &nodes[a.0].value;
                let n = s.len() as f64;
                acc(*a, &mut |ga| {
                    for i in 0..s.len() {
                        ga[i] += g[0] * (sigmoid(s[i]) - labels[i]) / n;
                    }
                });
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Cosine { a, b, .. } => vec![*a, *b],
        Op::Concat(parts, _) => parts.clone(),
        Op::Conv2d { input, weight, bias, .. } => vec![*input, *weight, *bias],
        Op::Scale(a, _)
        | Op::Slice { a, .. }
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Relu(a)
        | Op::SoftmaxRows(a)
        | Op::Dropout(a, _)
        | Op::MaxPoolRow(a, _)
        | Op::KmaxPoolRow(a, _)
        | Op::MeanRows(a)
        | Op::MaxChannels(a, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::Transpose(a)
        | Op::Reshape(a)
        | Op::BceWithLogits(a, _) => vec![*a],
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of one logit, stable for large `|s|`.
pub fn bce_logit(s: f64, y: f64) -> f64 {
    s.max(0.0) - s * y + (-s.abs()).exp().ln_1p()
}

/// Indices of the `k` largest entries, by value descending then index ascending.
fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if k == 1 {
        let best = idx.iter().copied().reduce(|b, j| if row[j] > row[b] { j } else { b });
        return best.into_iter().collect();
    }
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The `k` largest values of `row` in descending order, padded with zeros.
pub fn kmax_with_padding(row: &[f64], k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = top_k_indices(row, k).into_iter().map(|j| row[j]).collect();
    out.resize(k, 0.0);
    out
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to any node (zeros when it did not contribute).
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter bound into the graph, by name.
    pub fn params(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Vec<f64>> {
        self.params
    }
}

#[cfg(test)]
mod tests;
