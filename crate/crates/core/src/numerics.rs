//! Dense row-major matrices, a counter-based RNG, and the small set of
//! linear-algebra primitives the rest of the crate builds on. Eigenproblems
//! here are at most a few hundred rows, so cyclic Jacobi on the symmetric
//! Gram is used throughout: robust and dependency-free beats fast.

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
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
            return Err(Error::LengthMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested row slices; rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        if rows.iter().any(|v| v.len() != c) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        Ok(Matrix { rows: r, cols: c, data: rows.concat() })
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    /// self += s * other (shapes must match).
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let mut m = self.clone();
        m.add_scaled(other, -1.0);
        m
    }

    /// C = A * B.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut c = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let crow = c.row_mut(i);
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += a * bv;
                }
            }
        }
        c
    }

    /// C = A * B^T. When A is small (few rows), B is streamed once with all
    /// A rows held hot instead of once per A row; each entry is the same
    /// dot product either way.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt shape mismatch");
        let mut c = Matrix::zeros(self.rows, other.rows);
        if self.rows <= 32 && self.rows < other.rows {
            for j in 0..other.rows {
                let brow = other.row(j);
                for i in 0..self.rows {
                    c[(i, j)] = dot(self.row(i), brow);
                }
            }
        } else {
            for i in 0..self.rows {
                let arow = self.row(i);
                for j in 0..other.rows {
                    c[(i, j)] = dot(arow, other.row(j));
                }
            }
        }
        c
    }

    /// C = A^T * B. With few shared rows (the k dimension), each output row
    /// is accumulated in one pass over k so C is written exactly once;
    /// per-entry accumulation order over k is ascending in both forms.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn shape mismatch");
        let mut c = Matrix::zeros(self.cols, other.cols);
        if self.rows <= 32 {
            for i in 0..self.cols {
                let crow = &mut c.data[i * other.cols..(i + 1) * other.cols];
                for k in 0..self.rows {
                    let a = self.data[k * self.cols + i];
                    if a == 0.0 {
                        continue;
                    }
                    let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += a * bv;
                    }
                }
            }
        } else {
            for k in 0..self.rows {
                let arow = self.row(k);
                for i in 0..self.cols {
                    let a = arow[i];
                    if a == 0.0 {
                        continue;
                    }
                    let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                    let crow = &mut c.data[i * other.cols..(i + 1) * other.cols];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += a * bv;
                    }
                }
            }
        }
        c
    }

    /// y = A * x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// y = A^T * x.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (yv, av) in y.iter_mut().zip(self.row(i)) {
                *yv += xi * av;
            }
        }
        y
    }

    /// Gram matrix A A^T.
    pub fn gram_nt(&self) -> Matrix {
        self.matmul_nt(self)
    }

    /// Gram matrix A^T A.
    pub fn gram_tn(&self) -> Matrix {
        let mut c = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let crow = &mut c.data[a * self.cols..(a + 1) * self.cols];
                for (cv, &rb) in crow.iter_mut().zip(r) {
                    *cv += ra * rb;
                }
            }
        }
        c
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius inner product <A, B>.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        dot(&self.data, &other.data)
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

/// Dot product with four independent accumulators. The summation order is
/// fixed (lanes then remainder), so results are reproducible run to run.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = 4 * i;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut rest = 0.0;
    for j in 4 * chunks..a.len() {
        rest += a[j] * b[j];
    }
    (s0 + s1) + (s2 + s3) + rest
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

/// Counter-based generator: output k is a bit-mix of (seed, k), so the
/// sequence is identical on every platform for a given seed. Gaussians come
/// from Box-Muller on the uniform stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
    cached_normal: Option<f64>,
}

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0, cached_normal: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in the open interval (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box-Muller; the second value of each pair is cached.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * th.sin());
        r * th.cos()
    }

    /// Uniform integer in [0, n).
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection-free modulo is fine here: n is tiny relative to 2^64.
        (self.next_u64() % n as u64) as usize
    }

    /// Derives an independent stream; used to give sub-tasks their own seeds.
    pub fn derive(&self, label: u64) -> Rng {
        Rng::new(mix64(self.seed ^ label.wrapping_mul(GOLDEN)))
    }
}

/// i.i.d. N(0, std^2) entries, row-major fill order.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = std * rng.next_normal();
    }
    m
}

pub fn gaussian_vector(len: usize, std: f64, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| std * rng.next_normal()).collect()
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Max-subtracted softmax; entries land in (0,1) and sum to 1 within 1e-12.
pub fn stable_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidInput("softmax of empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("softmax input has non-finite entry".into()));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    for x in &mut e {
        *x /= s;
    }
    Ok(e)
}

/// Jacobian diag(p) - p p^T of softmax at output p. Rows sum to zero.
pub fn softmax_jacobian(p: &[f64]) -> Result<Matrix> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidInput("softmax_jacobian: input is off the simplex".into()));
    }
    let n = p.len();
    let mut j = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            j[(a, b)] = if a == b { p[a] - p[a] * p[b] } else { -p[a] * p[b] };
        }
    }
    Ok(j)
}

// ---------------------------------------------------------------------------
// Symmetric eigenproblems (cyclic Jacobi)
// ---------------------------------------------------------------------------

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order. Input is used as given
/// (callers symmetrize first when needed).
pub fn jacobi_eigenvalues(s: &Matrix) -> Result<Vec<f64>> {
    let (vals, _) = jacobi_eigen(s, false)?;
    Ok(vals)
}

/// Full symmetric eigendecomposition; `vectors` selects whether the rotation
/// product is accumulated. Eigenvalues ascend; column j of the returned
/// matrix is the eigenvector for eigenvalue j.
pub fn jacobi_eigen(s: &Matrix, vectors: bool) -> Result<(Vec<f64>, Option<Matrix>)> {
    if s.rows() != s.cols() {
        return Err(Error::InvalidInput("jacobi: matrix not square".into()));
    }
    if !s.is_finite() {
        return Err(Error::InvalidInput("jacobi: non-finite entries".into()));
    }
    let n = s.rows();
    let mut a = s.clone();
    let mut v = if vectors { Some(Matrix::identity(n)) } else { None };
    if n == 0 {
        return Ok((vec![], v));
    }

    let norm = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let tol = 1e-15 * norm;
    const MAX_SWEEPS: usize = 100;

    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                // Rotate rows/cols p and q.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                if let Some(vm) = v.as_mut() {
                    for k in 0..n {
                        let vkp = vm[(k, p)];
                        let vkq = vm[(k, q)];
                        vm[(k, p)] = c * vkp - sn * vkq;
                        vm[(k, q)] = sn * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let vecs = v.map(|vm| {
        let mut out = Matrix::zeros(n, n);
        for (newj, &oldj) in order.iter().enumerate() {
            for k in 0..n {
                out[(k, newj)] = vm[(k, oldj)];
            }
        }
        out
    });
    Ok((vals, vecs))
}

/// Smallest eigenvalue of the symmetrized (S + S^T)/2. Rejects matrices that
/// are asymmetric beyond 1e-9 (relative to their norm).
pub fn sym_min_eigen(s: &Matrix) -> Result<f64> {
    if s.rows() != s.cols() {
        return Err(Error::InvalidInput("sym_min_eigen: matrix not square".into()));
    }
    let scale = s.frobenius_norm().max(1.0);
    let mut sym = Matrix::zeros(s.rows(), s.cols());
    let mut asym: f64 = 0.0;
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
            sym[(i, j)] = 0.5 * (s[(i, j)] + s[(j, i)]);
        }
    }
    if asym > 1e-9 * scale {
        return Err(Error::InvalidInput(format!(
            "sym_min_eigen: asymmetry {asym:.3e} beyond tolerance"
        )));
    }
    let vals = jacobi_eigenvalues(&sym)?;
    Ok(*vals.first().unwrap())
}

/// Largest eigenvalue of a symmetric matrix (no symmetry check; internal).
pub fn sym_max_eigen(s: &Matrix) -> Result<f64> {
    let vals = jacobi_eigenvalues(s)?;
    Ok(*vals.last().unwrap())
}

/// sigma_min(M) = sqrt(lambda_min of the smaller-side Gram of M).
pub fn min_singular_value(m: &Matrix) -> Result<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidInput("min_singular_value: empty matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::InvalidInput("min_singular_value: non-finite entries".into()));
    }
    let gram = if m.rows() <= m.cols() { m.gram_nt() } else { m.gram_tn() };
    let (top, mut lam) = sym_max_and_min(&gram)?;
    // Eigenvalues below the Gram's roundoff floor are noise around an exact
    // zero; report them as zero instead of sqrt of noise.
    if lam < 1e-14 * top.max(0.0) {
        lam = 0.0;
    }
    Ok(lam.max(0.0).sqrt())
}

/// Spectral norm sigma_max(M) via the smaller-side Gram.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidInput("spectral_norm: empty matrix".into()));
    }
    let gram = if m.rows() <= m.cols() { m.gram_nt() } else { m.gram_tn() };
    let lam = sym_max_and_min(&gram)?.0;
    Ok(lam.max(0.0).sqrt())
}

fn sym_max_and_min(gram: &Matrix) -> Result<(f64, f64)> {
    let vals = jacobi_eigenvalues(gram)?;
    Ok((*vals.last().unwrap(), *vals.first().unwrap()))
}

// ---------------------------------------------------------------------------
// Power iteration
// ---------------------------------------------------------------------------

/// Largest absolute eigenvalue of a symmetric linear operator, by power
/// iteration on the squared operator (sign-proof). The start vector is a
/// fixed unit Gaussian drawn from seed `start_seed`; the library default is
/// seed 0, tol 1e-6, max_iter 10_000.
pub fn power_iter_spectral_norm<F>(
    apply: F,
    dim: usize,
    tol: f64,
    max_iter: usize,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    power_iter_inner(apply, dim, tol, max_iter, 0).map(|(v, _)| v)
}

/// As `power_iter_spectral_norm`, also reporting the iterations used.
pub fn power_iter_counted<F>(apply: F, dim: usize, tol: f64, max_iter: usize) -> Result<(f64, usize)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    power_iter_inner(apply, dim, tol, max_iter, 0)
}

pub fn power_iter_spectral_norm_seeded<F>(
    apply: F,
    dim: usize,
    tol: f64,
    max_iter: usize,
    start_seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    power_iter_inner(apply, dim, tol, max_iter, start_seed).map(|(v, _)| v)
}

fn power_iter_inner<F>(
    apply: F,
    dim: usize,
    tol: f64,
    max_iter: usize,
    start_seed: u64,
) -> Result<(f64, usize)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if dim == 0 {
        return Err(Error::InvalidInput("power iteration on empty operator".into()));
    }
    let mut rng = Rng::new(start_seed);
    let mut v = gaussian_vector(dim, 1.0, &mut rng);
    let nv = norm2(&v);
    for x in &mut v {
        *x /= nv;
    }

    let mut est = f64::NAN;
    for it in 0..max_iter {
        let av = apply(&v);
        let na = norm2(&av);
        if na == 0.0 || !na.is_finite() {
            if na == 0.0 {
                return Ok((0.0, it + 1));
            }
            return Err(Error::InvalidInput("power iteration: operator produced non-finite values".into()));
        }
        // One more application gives A^2 v; |lambda|_max of A is sqrt of the
        // Rayleigh quotient of A^2, immune to +/- lambda oscillation.
        let a2v = apply(&av);
        let rq = dot(&v, &a2v);
        let new_est = rq.max(0.0).sqrt();
        if it > 0 && (new_est - est).abs() <= tol * new_est.max(f64::MIN_POSITIVE) {
            return Ok((new_est, it + 1));
        }
        est = new_est;
        let n2 = norm2(&a2v);
        if n2 == 0.0 {
            return Ok((0.0, it + 1));
        }
        v = a2v;
        for x in &mut v {
            *x /= n2;
        }
    }
    Err(Error::NoConvergence { estimate: est, iterations: max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn softmax_symmetric_pair() {
        let p = stable_softmax(&[0.0, 0.0]).unwrap();
        assert_close(p[0], 0.5, 1e-15);
        assert_close(p[1], 0.5, 1e-15);
    }

    #[test]
    fn softmax_analytic_ln2() {
        let p = stable_softmax(&[std::f64::consts::LN_2, 0.0]).unwrap();
        assert_close(p[0], 2.0 / 3.0, 1e-15);
        assert_close(p[1], 1.0 / 3.0, 1e-15);
    }

    #[test]
    fn softmax_no_overflow_on_large_logits() {
        let p = stable_softmax(&[1000.0, 0.0]).unwrap();
        assert!(p[0] > 1.0 - 1e-12 && p[1] < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(stable_softmax(&[f64::NAN, 0.0]).is_err());
        assert!(stable_softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn softmax_jacobian_half_half() {
        let j = softmax_jacobian(&[0.5, 0.5]).unwrap();
        assert_close(j[(0, 0)], 0.25, 1e-15);
        assert_close(j[(0, 1)], -0.25, 1e-15);
        assert_close(j[(1, 0)], -0.25, 1e-15);
        assert_close(j[(1, 1)], 0.25, 1e-15);
    }

    #[test]
    fn softmax_jacobian_one_hot_is_zero() {
        let j = softmax_jacobian(&[1.0, 0.0, 0.0]).unwrap();
        assert!(j.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn softmax_jacobian_rejects_off_simplex() {
        assert!(softmax_jacobian(&[0.7, 0.7]).is_err());
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let v = gaussian_vector(6, 1.0, &mut rng);
        let p = stable_softmax(&v).unwrap();
        let j = softmax_jacobian(&p).unwrap();
        let h = 1e-6;
        for b in 0..6 {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[b] += h;
            vm[b] -= h;
            let pp = stable_softmax(&vp).unwrap();
            let pm = stable_softmax(&vm).unwrap();
            for a in 0..6 {
                let fd = (pp[a] - pm[a]) / (2.0 * h);
                let an = j[(a, b)];
                let denom = fd.abs().max(an.abs()).max(1e-10);
                assert!((fd - an).abs() / denom <= 1e-6, "fd {fd} vs {an}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn softmax_shift_invariance(seed in 0u64..500, c in -50.0f64..50.0) {
            let mut rng = Rng::new(seed);
            let v = gaussian_vector(5, 3.0, &mut rng);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let p = stable_softmax(&v).unwrap();
            let q = stable_softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                proptest::prop_assert!((a - b).abs() <= 1e-12);
            }
            let s: f64 = p.iter().sum();
            proptest::prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn softmax_jacobian_rows_sum_to_zero(seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let v = gaussian_vector(7, 2.0, &mut rng);
            let p = stable_softmax(&v).unwrap();
            let j = softmax_jacobian(&p).unwrap();
            for i in 0..7 {
                let s: f64 = j.row(i).iter().sum();
                proptest::prop_assert!(s.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn min_singular_identity_and_diag() {
        assert_close(min_singular_value(&Matrix::identity(3)).unwrap(), 1.0, 1e-12);
        let d = Matrix::diag(&[3.0, 2.0]);
        assert_close(min_singular_value(&d).unwrap(), 2.0, 1e-12);
    }

    #[test]
    fn min_singular_matches_gram_eig_oracle() {
        let mut rng = Rng::new(11);
        let m = gaussian_matrix(5, 8, 1.0, &mut rng);
        let got = min_singular_value(&m).unwrap();
        // Oracle: full symmetric eigendecomposition of M M^T.
        let vals = jacobi_eigenvalues(&m.gram_nt()).unwrap();
        let want = vals[0].max(0.0).sqrt();
        assert!((got - want).abs() <= 1e-8 * want.max(1.0));
        // And transposition invariance.
        let gt = min_singular_value(&m.transpose()).unwrap();
        assert!((got - gt).abs() <= 1e-10);
    }

    #[test]
    fn sym_min_eigen_diag_and_zero() {
        assert_close(sym_min_eigen(&Matrix::diag(&[1.0, 4.0])).unwrap(), 1.0, 1e-12);
        assert_close(sym_min_eigen(&Matrix::zeros(3, 3)).unwrap(), 0.0, 1e-15);
    }

    #[test]
    fn sym_min_eigen_gram_is_psd() {
        let mut rng = Rng::new(3);
        let a = gaussian_matrix(6, 4, 1.0, &mut rng);
        let g = a.gram_nt();
        let lam = sym_min_eigen(&g).unwrap();
        assert!(lam >= -1e-10, "PSD Gram produced {lam}");
    }

    #[test]
    fn sym_min_eigen_rejects_asymmetric() {
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(sym_min_eigen(&m).is_err());
    }

    #[test]
    fn power_iteration_diag() {
        let d = [2.0, -5.0];
        let apply = |v: &[f64]| vec![d[0] * v[0], d[1] * v[1]];
        let got = power_iter_spectral_norm(apply, 2, 1e-10, 10_000).unwrap();
        assert_close(got, 5.0, 1e-8);
        let id = |v: &[f64]| v.to_vec();
        assert_close(power_iter_spectral_norm(id, 4, 1e-10, 100).unwrap(), 1.0, 1e-12);
    }

    #[test]
    fn power_iteration_matches_jacobi_on_random_symmetric() {
        let mut rng = Rng::new(21);
        let a = gaussian_matrix(50, 50, 1.0, &mut rng);
        let mut s = Matrix::zeros(50, 50);
        for i in 0..50 {
            for j in 0..50 {
                s[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
            }
        }
        let vals = jacobi_eigenvalues(&s).unwrap();
        let want = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let apply = |v: &[f64]| s.matvec(v);
        let got = power_iter_spectral_norm(apply, 50, 1e-9, 10_000).unwrap();
        assert!((got - want).abs() <= 1e-6 * want, "{got} vs {want}");
    }

    #[test]
    fn power_iteration_start_seed_invariance() {
        let mut rng = Rng::new(4);
        let a = gaussian_matrix(12, 12, 1.0, &mut rng);
        let mut s = Matrix::zeros(12, 12);
        for i in 0..12 {
            for j in 0..12 {
                s[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
            }
        }
        let apply = |v: &[f64]| s.matvec(v);
        let a0 = power_iter_spectral_norm_seeded(&apply, 12, 1e-8, 10_000, 0).unwrap();
        let a1 = power_iter_spectral_norm_seeded(&apply, 12, 1e-8, 10_000, 99).unwrap();
        assert!((a0 - a1).abs() <= 1e-6 * a0.max(1.0));
    }

    #[test]
    fn gaussian_matrix_zero_std_and_determinism() {
        let mut r1 = Rng::new(42);
        let z = gaussian_matrix(3, 4, 0.0, &mut r1);
        assert!(z.data().iter().all(|&x| x == 0.0));
        let mut r2 = Rng::new(42);
        let mut r3 = Rng::new(42);
        let a = gaussian_matrix(5, 5, 2.0, &mut r2);
        let b = gaussian_matrix(5, 5, 2.0, &mut r3);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn gaussian_sample_variance() {
        // 1e5 samples at std=2: the variance estimator's 3-sigma interval
        // is well inside [3.9, 4.1].
        let mut rng = Rng::new(123);
        let n = 100_000;
        let xs = gaussian_vector(n, 2.0, &mut rng);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((3.9..=4.1).contains(&var), "sample variance {var}");
    }

    #[test]
    fn matmul_agrees_with_naive() {
        let mut rng = Rng::new(9);
        let a = gaussian_matrix(4, 6, 1.0, &mut rng);
        let b = gaussian_matrix(6, 3, 1.0, &mut rng);
        let c = a.matmul(&b);
        for i in 0..4 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..6 {
                    s += a[(i, k)] * b[(k, j)];
                }
                assert_close(c[(i, j)], s, 1e-12);
            }
        }
        let bt = b.transpose();
        let c2 = a.matmul_nt(&bt);
        for i in 0..4 {
            for j in 0..3 {
                assert_close(c2[(i, j)], c[(i, j)], 1e-12);
            }
        }
    }
}
