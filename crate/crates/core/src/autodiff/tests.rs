use super::gradcheck::{check_params, sample_coords};
use super::*;
use rand::Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.variable(&[1, 1], vec![0.0]).unwrap();
    let y = g.sigmoid(x).unwrap();
    assert_eq!(g.scalar(y), 0.5);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[0.25]);
}

#[test]
fn square_and_linear_gradients() {
    let mut g = Graph::new();
    let x = g.variable(&[1, 1], vec![3.0]).unwrap();
    let y = g.mul(x, x).unwrap();
    assert_eq!(g.backward(y).unwrap().wrt(x).unwrap(), &[6.0]);

    let mut g = Graph::new();
    let w = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let x = g.variable(&[2, 1], vec![1.0, 1.0]).unwrap();
    let wx = g.matmul(w, x).unwrap();
    let s = g.sum(wx).unwrap();
    assert_eq!(g.backward(s).unwrap().wrt(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn kmax_pool_example() {
    let mut g = Graph::new();
    let x = g.variable(&[1, 4], vec![0.1, 0.9, 0.5, 0.7]).unwrap();
    let k = g.kmax_pool_row(x, 2).unwrap();
    assert_eq!(g.value(k), &[0.9, 0.7]);
}

#[test]
fn cosine_examples() {
    let mut g = Graph::new();
    let a = g.constant(&[2, 2], vec![1.0, 2.0, 0.0, 0.0]).unwrap();
    let b = g.constant(&[2, 2], vec![1.0, 2.0, -2.0, 1.0]).unwrap();
    let c = g.cosine_sim_matrix(a, b).unwrap();
    let v = g.value(c);
    assert!((v[0] - 1.0).abs() < 1e-15);
    assert!(v[1].abs() < 1e-15);
    assert_eq!(&v[2..], &[0.0, 0.0]); // zero row
}

#[test]
fn kmax_padding_rule() {
    assert_eq!(kmax_with_padding(&[0.4], 3), vec![0.4, 0.0, 0.0]);
    assert_eq!(kmax_with_padding(&[0.2, 0.9, 0.5], 3), vec![0.9, 0.5, 0.2]);
    let mut r = rng(1);
    for _ in 0..1000 {
        let n = r.random_range(0..12);
        let k = r.random_range(1..8);
        let row: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut oracle = row.clone();
        oracle.sort_by(|a, b| b.partial_cmp(a).unwrap());
        oracle.truncate(k);
        oracle.resize(k, 0.0);
        assert_eq!(kmax_with_padding(&row, k), oracle);
    }
}

#[test]
fn pooling_routes_gradient_to_selected_entries() {
    let mut g = Graph::new();
    let x = g.variable(&[2, 4], vec![0.1, 0.9, 0.5, 0.7, 3.0, -1.0, 2.0, 0.0]).unwrap();
    let k = g.kmax_pool_row(x, 2).unwrap();
    let m = g.max_pool_row(x).unwrap();
    let w = g.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let weighted = g.mul(k, w).unwrap();
    let s1 = g.sum(weighted).unwrap();
    let s2 = g.sum(m).unwrap();
    let total = g.add(s1, s2).unwrap();
    let grads = g.backward(total).unwrap();
    let gx = grads.wrt(x).unwrap();
    assert_eq!(gx, &[0.0, 2.0, 0.0, 2.0, 4.0, 0.0, 4.0, 0.0]);
    // routed mass equals incoming mass: (1+2+3+4) + 2·1
    assert_eq!(gx.iter().sum::<f64>(), 12.0);
}

#[test]
fn dropout_behaviour() {
    let mut g = Graph::with_mode(false, 3);
    let x = g.constant(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let y = g.dropout(x, 0.3).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let n = 100_000;
    let mut g = Graph::with_mode(true, 3);
    let x = g.constant(&[1, n], vec![1.0; n]).unwrap();
    let y = g.dropout(x, 0.3).unwrap();
    let mean = g.value(y).iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    let zeros = g.value(y).iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
    assert!((zeros - 0.3).abs() < 0.01);

    let draw = |seed| {
        let mut g = Graph::with_mode(true, seed);
        let x = g.constant(&[1, 50], vec![1.0; 50]).unwrap();
        let y = g.dropout(x, 0.3).unwrap();
        g.value(y).to_vec()
    };
    assert_eq!(draw(9), draw(9));
    assert_ne!(draw(9), draw(10));
}

fn conv_reference(input: &[f64], h: usize, w: usize, weight: &[f64], bias: &[f64], n: usize, same: bool) -> Vec<f64> {
    let c = bias.len();
    let pad = if same { (n - 1) / 2 } else { 0 };
    let (ho, wo) = if same { (h, w) } else { (h - n + 1, w - n + 1) };
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut s = bias[ch];
                for u in 0..n {
                    for v in 0..n {
                        let (ii, jj) = (i as isize + u as isize - pad as isize, j as isize + v as isize - pad as isize);
                        if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                            s += weight[ch * n * n + u * n + v] * input[ii as usize * w + jj as usize];
                        }
                    }
                }
                out[ch * ho * wo + i * wo + j] = s;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loops() {
    let mut r = rng(4);
    for trial in 0..60 {
        let n = 1 + trial % 3;
        let (h, w) = (r.random_range(n..9), r.random_range(n..12));
        let c = r.random_range(1..5);
        let input: Vec<f64> = (0..h * w).map(|_| r.random_range(-1.0..1.0)).collect();
        let weight: Vec<f64> = (0..c * n * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        for same in [true, false] {
            let mut g = Graph::new();
            let x = g.constant(&[h, w], input.clone()).unwrap();
            let wt = g.constant(&[c, n, n], weight.clone()).unwrap();
            let b = g.constant(&[c], bias.clone()).unwrap();
            let y = g.conv2d(x, wt, b, if same { Padding::Same } else { Padding::Valid }).unwrap();
            let expected = conv_reference(&input, h, w, &weight, &bias, n, same);
            let err = g.value(y).iter().zip(&expected).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-10);
        }
    }
}

#[test]
fn errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let b = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("matmul"), "{err}");
    assert!(g.backward(a).is_err());
    assert!(matches!(g.constant(&[1], vec![f64::NAN]), Err(Error::NonFinite(_))));
    let big = g.constant(&[1, 1], vec![1e300]).unwrap();
    assert!(matches!(g.mul(big, big), Err(Error::NonFinite("mul"))));
}

#[test]
fn bce_is_stable() {
    assert!((bce_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
    assert!((bce_logit(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    assert!(bce_logit(50.0, 1.0) < 1e-20);
    assert!((bce_logit(-50.0, 1.0) - 50.0).abs() < 1e-12);
    assert!((bce_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
}

/// A composite graph touching every primitive.
fn composite(store: &ParamStore, g: &mut Graph) -> Result<Var> {
    let x = g.param(store, "x")?; // [3, 4]
    let y = g.param(store, "y")?; // [5, 4]
    let w = g.param(store, "w")?; // [4, 4]
    let b = g.param(store, "b")?; // [1, 4]
    let f = g.param(store, "f")?; // [2, 2, 2]
    let fb = g.param(store, "fb")?; // [2]
    let xw = g.matmul(x, w)?;
    let xw = g.add_row(xw, b)?;
    let t = g.tanh(xw)?;
    let s = g.sigmoid(xw)?;
    let ts = g.mul(t, s)?;
    let d = g.dropout(ts, 0.3)?;
    let sim = g.cosine_sim_matrix(d, y)?; // [3, 5]
    let conv = g.conv2d(sim, f, fb, Padding::Same)?; // [2, 3, 5]
    let mc = g.max_channels(conv)?;
    let km = g.kmax_pool_row(mc, 2)?;
    let mx = g.max_pool_row(sim)?;
    let mean = g.mean_rows(km)?;
    let feats = g.concat(&[km, mx, mean], 1)?; // [3, 4]
    let r = g.relu(feats)?;
    let rt = g.transpose(r)?;
    let sm = g.softmax_rows(rt)?; // [4, 3]
    let sl = g.slice(sm, 1, 0, 2)?;
    let top = g.slice(feats, 0, 1, 3)?; // [2, 4]
    let flat = g.reshape(top, &[1, 8])?;
    let tail = g.reshape(sl, &[1, 8])?;
    let diff = g.sub(flat, tail)?;
    let sc = g.scale(diff, 0.7)?;
    let stacked = g.concat(&[sc, flat], 0)?;
    let total = g.sum(stacked)?;
    let m = g.mean(sm)?;
    let both = g.concat(&[total, m], 1)?;
    g.bce_with_logits(both, &[1.0, 0.0])
}

#[test]
fn composite_graph_matches_finite_differences() {
    let mut r = rng(21);
    let mut store = ParamStore::new();
    for (name, shape) in [
        ("x", vec![3, 4]),
        ("y", vec![5, 4]),
        ("w", vec![4, 4]),
        ("b", vec![1, 4]),
        ("f", vec![2, 2, 2]),
        ("fb", vec![2]),
    ] {
        store.uniform(name, &shape, 1.0, &mut r);
    }
    let coords = sample_coords(&store, 200, &mut r);
    let report = check_params(&store, &coords, 1e-5, || Graph::with_mode(true, 5), composite).unwrap();
    assert!(report.checked >= 20, "{report:?}");
    assert!(report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn inference_graph_is_deterministic() {
    let mut r = rng(22);
    let mut store = ParamStore::new();
    for (name, shape) in [("x", vec![3, 4]), ("y", vec![5, 4]), ("w", vec![4, 4]), ("b", vec![1, 4]), ("f", vec![2, 2, 2]), ("fb", vec![2])] {
        store.uniform(name, &shape, 1.0, &mut r);
    }
    let run = || {
        let mut g = Graph::new();
        let out = composite(&store, &mut g).unwrap();
        g.scalar(out).to_bits()
    };
    assert_eq!(run(), run());
}
