//! Small dense linear algebra: row-major matrices, the matrix exponential
//! (with its reverse-mode derivative), spectral norms and seeded randomness.
//!
//! Everything here works on `f64` and on the tiny matrices used by the
//! network layers (dimensions in the tens), so the routines favour clarity
//! over blocking or SIMD.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Rng = ChaCha8Rng;

/// Deterministic generator used everywhere a seed is accepted.
pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal samples.
pub fn randn(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension { expected: rows * cols, found: data.len() });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn randn(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Self {
        let data = randn(rng, rows * cols).into_iter().map(|v| v * scale).collect();
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ * x`
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "tmatvec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_fro(&self) -> f64 {
        norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Accumulate `out += scale * u vᵀ` into a row-major `u.len() x v.len()` buffer.
pub fn add_outer(out: &mut [f64], scale: f64, u: &[f64], v: &[f64]) {
    debug_assert_eq!(out.len(), u.len() * v.len());
    for (i, &ui) in u.iter().enumerate() {
        let s = scale * ui;
        if s == 0.0 {
            continue;
        }
        for (o, &vj) in out[i * v.len()..(i + 1) * v.len()].iter_mut().zip(v) {
            *o += s * vj;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += s * x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += s * xi);
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn skew(w: &Mat) -> Result<Mat> {
    if !w.is_square() {
        return Err(Error::NotSquare { rows: w.rows, cols: w.cols });
    }
    Ok(w.sub(&w.transpose()))
}

const TAYLOR_DEGREE: usize = 18;
const SCALED_NORM: f64 = 0.5;

fn squarings(w: &Mat) -> u32 {
    let n1 = w.norm_1();
    let mut s = 0u32;
    while n1 / 2f64.powi(s as i32) > SCALED_NORM {
        s += 1;
    }
    s
}

/// Matrix exponential by scaling and squaring with a degree-18 Taylor
/// polynomial evaluated in Horner form; after scaling `‖W/2ˢ‖₁ ≤ 1/2`.
pub fn expm(w: &Mat) -> Result<Mat> {
    if !w.is_square() {
        return Err(Error::NotSquare { rows: w.rows, cols: w.cols });
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("expm input".into()));
    }
    let n = w.rows;
    let s = squarings(w);
    let x = w.scale(0.5f64.powi(s as i32));
    let eye = Mat::identity(n);
    let mut p = eye.clone();
    for k in (1..=TAYLOR_DEGREE).rev() {
        p = eye.add(&x.matmul(&p).scale(1.0 / k as f64));
    }
    for _ in 0..s {
        p = p.matmul(&p);
    }
    Ok(p)
}

/// Reverse-mode derivative of [`expm`]: given `G = ∂L/∂expm(W)` returns
/// `∂L/∂W`, differentiating the Horner recursion and squarings actually
/// performed (the number of squarings is treated as locally constant).
pub fn expm_vjp(w: &Mat, g: &Mat) -> Result<Mat> {
    if !w.is_square() {
        return Err(Error::NotSquare { rows: w.rows, cols: w.cols });
    }
    assert_eq!(w.shape(), g.shape());
    let n = w.rows;
    let s = squarings(w);
    let scale = 0.5f64.powi(s as i32);
    let x = w.scale(scale);
    let eye = Mat::identity(n);

    // P before each Horner update, indexed by k
    let mut horner_in = vec![Mat::zeros(0, 0); TAYLOR_DEGREE + 1];
    let mut p = eye.clone();
    for k in (1..=TAYLOR_DEGREE).rev() {
        horner_in[k] = p.clone();
        p = eye.add(&x.matmul(&p).scale(1.0 / k as f64));
    }
    let mut squares = Vec::with_capacity(s as usize);
    for _ in 0..s {
        squares.push(p.clone());
        p = p.matmul(&p);
    }

    let mut grad = g.clone();
    for q in squares.iter().rev() {
        let qt = q.transpose();
        grad = grad.matmul(&qt).add(&qt.matmul(&grad));
    }
    let xt = x.transpose();
    let mut dx = Mat::zeros(n, n);
    for (k, p_old) in horner_in.iter().enumerate().skip(1) {
        let inv_k = 1.0 / k as f64;
        dx.add_assign(&grad.matmul(&p_old.transpose()).scale(inv_k));
        grad = xt.matmul(&grad).scale(inv_k);
    }
    Ok(dx.scale(scale))
}

/// `expm(W − Wᵀ)`, an element of SO(n).
pub fn orthogonalize(w: &Mat) -> Result<Mat> {
    expm(&skew(w)?)
}

/// Pull back `G = ∂L/∂orthogonalize(W)` to `∂L/∂W`.
pub fn orthogonalize_vjp(w: &Mat, g: &Mat) -> Result<Mat> {
    let ds = expm_vjp(&skew(w)?, g)?;
    Ok(ds.sub(&ds.transpose()))
}

/// Largest singular value by power iteration on `WᵀW` from a seeded
/// Gaussian start vector. The returned value is `‖W v‖` for a unit `v`, so
/// it never exceeds the true spectral norm.
pub fn spectral_norm(w: &Mat, iters: usize, seed: u64) -> f64 {
    let iters = iters.max(1);
    if w.norm_max() == 0.0 || w.cols == 0 {
        return 0.0;
    }
    let mut r = rng(seed);
    let mut v = randn(&mut r, w.cols);
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut sigma = norm(&w.matvec(&v));
    for _ in 0..iters {
        let u = w.matvec(&v);
        let mut next = w.tmatvec(&u);
        let nn = norm(&next);
        if nn == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
        sigma = sigma.max(norm(&w.matvec(&v)));
    }
    sigma
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows, cols: a.cols });
    }
    let n = a.rows;
    let mut m = a.clone();
    let scale = m.norm_fro().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// Smallest and largest singular values, from the eigenvalues of `WᵀW`.
pub fn singular_value_range(w: &Mat) -> (f64, f64) {
    let gram = w.transpose().matmul(w);
    let ev = sym_eigenvalues(&gram).expect("gram matrix is square");
    let lo = ev.first().copied().unwrap_or(0.0).max(0.0).sqrt();
    let hi = ev.last().copied().unwrap_or(0.0).max(0.0).sqrt();
    // a rectangular tall W has n singular values; a wide one has zeros
    if w.rows < w.cols {
        (0.0, hi)
    } else {
        (lo, hi)
    }
}

struct Lu {
    lu: Mat,
    perm: Vec<usize>,
    sign: f64,
}

fn lu_factor(a: &Mat) -> Result<Lu> {
    if !a.is_square() {
        return Err(Error::NotSquare { rows: a.rows, cols: a.cols });
    }
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for k in 0..n {
        let (piv, pval) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pval == 0.0 {
            return Err(Error::Singular);
        }
        if piv != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            perm.swap(k, piv);
            sign = -sign;
        }
        for i in (k + 1)..n {
            let f = lu[(i, k)] / lu[(k, k)];
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                let v = lu[(k, j)];
                lu[(i, j)] -= f * v;
            }
        }
    }
    Ok(Lu { lu, perm, sign })
}

/// Solve `A x = b` by LU with partial pivoting.
pub fn lu_solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let f = lu_factor(a)?;
    let n = a.rows;
    if b.len() != n {
        return Err(Error::Dimension { expected: n, found: b.len() });
    }
    let mut y: Vec<f64> = f.perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            y[i] -= f.lu[(i, j)] * y[j];
        }
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            y[i] -= f.lu[(i, j)] * y[j];
        }
        y[i] /= f.lu[(i, i)];
    }
    Ok(y)
}

pub fn determinant(a: &Mat) -> Result<f64> {
    match lu_factor(a) {
        Ok(f) => Ok((0..a.rows).map(|i| f.lu[(i, i)]).product::<f64>() * f.sign),
        Err(Error::Singular) => Ok(0.0),
        Err(e) => Err(e),
    }
}
