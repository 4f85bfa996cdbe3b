//! Small dense row-major matrices and the one-sided Jacobi SVD used by the
//! Procrustes solver.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix",
                format!("{} values for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("matrix", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Matrix with i.i.d. standard normal entries.
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `M * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max |MᵀM − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.transpose().matmul(self).expect("square gram");
        gram.max_abs_diff(&Matrix::identity(self.cols))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Random orthogonal matrix: Gram-Schmidt orthonormalization of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    loop {
        let g = Matrix::random_normal(d, d, rng);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut ok = true;
        for j in 0..d {
            let mut v: Vec<f64> = (0..d).map(|i| g[(i, j)]).collect();
            for _ in 0..2 {
                for c in &cols {
                    let p = dot(&v, c);
                    v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
                }
            }
            let n = norm(&v);
            if n < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|x| *x /= n);
            cols.push(v);
        }
        if ok {
            let mut q = Matrix::zeros(d, d);
            for (j, c) in cols.iter().enumerate() {
                for i in 0..d {
                    q[(i, j)] = c[i];
                }
            }
            return q;
        }
    }
}

/// `M = U · diag(S) · Vᵀ` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.s.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.v.transpose()).expect("square factors")
    }
}

pub const MAX_SVD_DIM: usize = 1024;
const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// Singular value decomposition of a square matrix by one-sided (Hestenes)
/// Jacobi rotations.
pub fn svd_small(m: &Matrix) -> Result<Svd> {
    let d = m.rows();
    if m.cols() != d {
        return Err(Error::shape("svd_small", format!("{}x{} is not square", d, m.cols())));
    }
    if d > MAX_SVD_DIM {
        return Err(Error::shape("svd_small", format!("dimension {d} > {MAX_SVD_DIM}")));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svd_small"));
    }
    // Rows of `a` are the columns of M being orthogonalized; rows of `v` are
    // the columns of V.
    let mut a = m.transpose();
    let mut v = Matrix::identity(d);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let (alpha, beta, gamma) = {
                    let (ap, aq) = (a.row(p), a.row(q));
                    (dot(ap, ap), dot(aq, aq), dot(ap, aq))
                };
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut a, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("svd_small: Jacobi sweeps exhausted at d={d}");
    }

    let mut order: Vec<(usize, f64)> = (0..d).map(|j| (j, norm(a.row(j)))).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let s_max = order.first().map_or(0.0, |o| o.1);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut s = Vec::with_capacity(d);
    let mut v_sorted = Matrix::zeros(d, d);
    for (k, &(j, sj)) in order.iter().enumerate() {
        s.push(sj);
        for i in 0..d {
            v_sorted[(i, k)] = v[(j, i)];
        }
        let candidate = if sj > s_max * 1e-13 && sj > 0.0 {
            Some(a.row(j).iter().map(|x| x / sj).collect::<Vec<_>>())
        } else {
            None
        };
        u_cols.push(orthonormal_against(candidate, &u_cols, d));
    }
    let mut u = Matrix::zeros(d, d);
    for (k, c) in u_cols.iter().enumerate() {
        for i in 0..d {
            u[(i, k)] = c[i];
        }
    }
    Ok(Svd { u, s, v: v_sorted })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let (lo, hi) = m.data.split_at_mut(q * cols);
    let rp = &mut lo[p * cols..(p + 1) * cols];
    let rq = &mut hi[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Re-orthonormalizes `candidate` against `basis`; falls back to completing the
/// basis with a standard unit vector when the candidate is absent or degenerate.
fn orthonormal_against(candidate: Option<Vec<f64>>, basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    let project = |mut v: Vec<f64>| {
        for _ in 0..2 {
            for b in basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        (n, v)
    };
    if let Some(c) = candidate {
        let (n, v) = project(c);
        if n > 0.5 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..d {
        let mut unit = vec![0.0; d];
        unit[e] = 1.0;
        let (n, v) = project(unit);
        if best.as_ref().is_none_or(|b| n > b.0 + 1e-12) {
            best = Some((n, v));
        }
    }
    let (n, v) = best.expect("d >= 1");
    v.into_iter().map(|x| x / n).collect()
}
