//! Dense arrays, seeded randomness, 2D DFT, and small dense decompositions.
//!
//! Everything here is row-major: `Matrix` stores rows contiguously and
//! `Array` flattens its last dimension fastest. This is the `Vec(·)`
//! convention the convolution linearization relies on.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(v: &mut [f64], alpha: f64) {
    v.iter_mut().for_each(|x| *x *= alpha);
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Normalizes in place and returns the original norm. A zero vector is left untouched.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm2(v);
    if n > 0.0 {
        scale(v, 1.0 / n);
    }
    n
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(invalid!("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * alpha).collect() }
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ * y`
    pub fn tr_matvec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, yr) in y.iter().enumerate() {
            if *yr != 0.0 {
                axpy(*yr, self.row(r), &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        gemm(self, false, other, false)
    }

    /// Rank-one matrix `alpha * u vᵀ`.
    pub fn outer(alpha: f64, u: &[f64], v: &[f64]) -> Matrix {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, ui) in u.iter().enumerate() {
            let s = alpha * ui;
            for (j, vj) in v.iter().enumerate() {
                m.data[i * v.len() + j] = s * vj;
            }
        }
        m
    }
}

/// `op(a) * op(b)` where `op` optionally transposes. Backed by `matrixmultiply`,
/// which is single-threaded and deterministic.
pub fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "gemm inner dimension mismatch");
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    #[allow(unsafe_code)]
    // SAFETY: strides and extents describe the owned buffers above exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// N-dimensional real array, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(invalid!("array data length {} does not match shape {:?}", data.len(), shape));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Row-major complex 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn from_real(rows: usize, cols: usize, real: &[f64]) -> Result<Self> {
        if real.len() != rows * cols {
            return Err(invalid!("grid data length {} does not match {}x{}", real.len(), rows, cols));
        }
        Ok(Self { rows, cols, data: real.iter().map(|&x| Complex64::new(x, 0.0)).collect() })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Forward unnormalized 2D DFT: `X[k,l] = Σ x[m,n] e^{-2πi(km/R + ln/C)}`.
pub fn fft2(grid: &ComplexGrid) -> Result<ComplexGrid> {
    transform2(grid, false)
}

/// Inverse of [`fft2`], including the `1/(R·C)` factor.
pub fn ifft2(grid: &ComplexGrid) -> Result<ComplexGrid> {
    let mut out = transform2(grid, true)?;
    let s = 1.0 / (grid.rows * grid.cols) as f64;
    out.data.iter_mut().for_each(|z| *z *= s);
    Ok(out)
}

fn transform2(grid: &ComplexGrid, inverse: bool) -> Result<ComplexGrid> {
    if grid.rows == 0 || grid.cols == 0 {
        return Err(invalid!("empty grid"));
    }
    if grid.data.len() != grid.rows * grid.cols {
        return Err(invalid!("grid data length mismatch"));
    }
    let mut out = grid.clone();
    for r in 0..grid.rows {
        fft_in_place(&mut out.data[r * grid.cols..(r + 1) * grid.cols], inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); grid.rows];
    for c in 0..grid.cols {
        for r in 0..grid.rows {
            col[r] = out.data[r * grid.cols + c];
        }
        fft_in_place(&mut col, inverse);
        for r in 0..grid.rows {
            out.data[r * grid.cols + c] = col[r];
        }
    }
    Ok(out)
}

/// Unnormalized 1D DFT of arbitrary length: iterative radix-2 for powers of
/// two, Bluestein's chirp-z otherwise.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, inverse);
    } else {
        bluestein(buf, inverse);
    }
}

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for k in 0..half {
            let angle = sign * 2.0 * PI * k as f64 / len as f64;
            let w = Complex64::new(libm::cos(angle), libm::sin(angle));
            let mut start = 0;
            while start < n {
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
                start += len;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // k² mod 2n keeps the chirp angle small for large k.
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
            let angle = sign * PI * k2 / n as f64;
            Complex64::new(libm::cos(angle), libm::sin(angle))
        })
        .collect();
    let zero = Complex64::new(0.0, 0.0);
    let mut a = vec![zero; m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![zero; m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, true);
    let s = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * s * chirp[k];
    }
}

/// Top singular triple of a dense matrix, plus the runner-up singular value.
#[derive(Debug, Clone, PartialEq)]
pub struct TopSvd {
    pub sigma: f64,
    /// Second-largest singular value, when the matrix has more than one.
    pub second: Option<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Exact top singular triple by one-sided (Hestenes) Jacobi.
pub fn svd_top(m: &Matrix) -> Result<TopSvd> {
    if m.rows == 0 || m.cols == 0 {
        return Err(invalid!("empty matrix"));
    }
    if !m.is_finite() {
        return Err(invalid!("matrix has non-finite entries"));
    }
    // Orthogonalize the shorter side's vectors.
    let (work, transposed) = if m.cols <= m.rows { (m.clone(), false) } else { (m.transpose(), true) };
    let (sigmas, cols, vmat) = jacobi_columns(&work);
    let mut order: Vec<usize> = (0..sigmas.len()).collect();
    order.sort_by(|&a, &b| sigmas[b].partial_cmp(&sigmas[a]).unwrap_or(core::cmp::Ordering::Equal));
    let top = order[0];
    let sigma = sigmas[top];
    let second = order.get(1).map(|&i| sigmas[i]);
    let n = work.cols;
    let mut left: Vec<f64> = cols[top].clone();
    let mut right: Vec<f64> = (0..n).map(|r| vmat[r * n + top]).collect();
    if sigma > 0.0 {
        scale(&mut left, 1.0 / sigma);
    } else {
        left.iter_mut().for_each(|x| *x = 0.0);
        left[0] = 1.0;
        right.iter_mut().for_each(|x| *x = 0.0);
        right[0] = 1.0;
    }
    normalize(&mut right);
    let (u, v) = if transposed { (right, left) } else { (left, right) };
    Ok(TopSvd { sigma, second, u, v })
}

/// All singular values, descending.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(invalid!("matrix has non-finite entries"));
    }
    let work = if m.cols <= m.rows { m.clone() } else { m.transpose() };
    let (mut s, _, _) = jacobi_columns(&work);
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    Ok(s)
}

/// Returns (column norms, rotated columns, V row-major n×n).
fn jacobi_columns(a: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let n = a.cols;
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| a.column(c)).collect();
    let mut v = Matrix::identity(n).data;
    const EPS: f64 = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || libm::fabs(gamma) <= EPS * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
                for r in 0..n {
                    let (vp, vq) = (v[r * n + p], v[r * n + q]);
                    v[r * n + p] = c * vp - s * vq;
                    v[r * n + q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigmas = cols.iter().map(|c| norm2(c)).collect();
    (sigmas, cols, v)
}

/// Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and the matching eigenvectors as columns.
pub fn symmetric_eigen(s: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if s.rows != s.cols {
        return Err(invalid!("symmetric_eigen needs a square matrix"));
    }
    if !s.is_finite() {
        return Err(invalid!("matrix has non-finite entries"));
    }
    let n = s.rows;
    let mut a = s.clone();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum();
        let scale_sq: f64 = a.data.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale_sq || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = libm::copysign(1.0, theta) / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let sn = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap_or(core::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            vecs.set(r, new, v.get(r, old));
        }
    }
    Ok((values, vecs))
}

/// Largest and second-largest eigenvalues of a Hermitian matrix given
/// row-major as `m×m` complex entries. Uses the real symmetric embedding
/// `[[Re, -Im], [Im, Re]]`, whose spectrum is the Hermitian one doubled.
pub fn hermitian_top2(m: usize, h: &[Complex64]) -> Result<(f64, Option<f64>)> {
    if h.len() != m * m || m == 0 {
        return Err(invalid!("hermitian_top2: bad dimensions"));
    }
    if m == 1 {
        return Ok((h[0].re, None));
    }
    let mut e = Matrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let z = h[i * m + j];
            e.set(i, j, z.re);
            e.set(i + m, j + m, z.re);
            e.set(i, j + m, -z.im);
            e.set(i + m, j, z.im);
        }
    }
    let (vals, _) = symmetric_eigen(&e)?;
    Ok((vals[0], Some(vals[2])))
}

/// Seed mixing for derived streams (SplitMix64 finalizer).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded generator: xoshiro256++ state expanded from the `u64` seed with
/// SplitMix64 (`rand_xoshiro`'s `seed_from_u64`). Normals use the ziggurat
/// sampler from `rand_distr`; both are platform independent.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: Xoshiro256PlusPlus::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a named sub-stream of this seed.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(mix_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher–Yates.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_vec(&mut self, n: usize, mean: f64, std: f64) -> Vec<f64> {
        (0..n).map(|_| mean + std * self.normal()).collect()
    }

    /// Uniform direction on the unit sphere in `ℝⁿ`.
    pub fn unit_vector(&mut self, n: usize) -> Vec<f64> {
        loop {
            let mut v = self.normal_vec(n, 0.0, 1.0);
            if normalize(&mut v) > 1e-12 {
                return v;
            }
        }
    }
}

/// I.i.d. normal draws with the given shape.
pub fn gaussian(rng: &mut Rng, shape: &[usize], mean: f64, std: f64) -> Result<Array> {
    if !(std >= 0.0) {
        return Err(invalid!("negative std {}", std));
    }
    let len: usize = shape.iter().product();
    let data = if std == 0.0 { vec![mean; len] } else { rng.normal_vec(len, mean, std) };
    Array::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(g: &ComplexGrid) -> ComplexGrid {
        let mut out = ComplexGrid::zeros(g.rows, g.cols);
        for k in 0..g.rows {
            for l in 0..g.cols {
                let mut acc = Complex64::new(0.0, 0.0);
                for m in 0..g.rows {
                    for n in 0..g.cols {
                        let ang = -2.0
                            * PI
                            * ((k * m) as f64 / g.rows as f64 + (l * n) as f64 / g.cols as f64);
                        acc += g.get(m, n) * Complex64::new(libm::cos(ang), libm::sin(ang));
                    }
                }
                out.data[k * g.cols + l] = acc;
            }
        }
        out
    }

    fn random_grid(rng: &mut Rng, r: usize, c: usize) -> ComplexGrid {
        let mut g = ComplexGrid::zeros(r, c);
        for z in g.data.iter_mut() {
            *z = Complex64::new(rng.normal(), rng.normal());
        }
        g
    }

    fn max_abs_diff(a: &ComplexGrid, b: &ComplexGrid) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn fft2_of_impulse_is_all_ones() {
        let mut g = ComplexGrid::zeros(4, 4);
        g.data[0] = Complex64::new(1.0, 0.0);
        let f = fft2(&g).unwrap();
        for z in &f.data {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn fft2_of_constant_concentrates_at_dc() {
        let n = 6;
        let c = 2.5;
        let g = ComplexGrid::from_real(n, n, &vec![c; n * n]).unwrap();
        let f = fft2(&g).unwrap();
        assert!((f.data[0].re - (n * n) as f64 * c).abs() < 1e-12);
        for z in &f.data[1..] {
            assert!(z.norm() < 1e-12);
        }
    }

    #[test]
    fn fft2_matches_naive_dft() {
        let mut rng = Rng::new(11);
        for &(r, c) in &[(4, 4), (3, 5), (6, 7), (8, 2), (1, 9)] {
            let g = random_grid(&mut rng, r, c);
            let fast = fft2(&g).unwrap();
            let slow = naive_dft(&g);
            let scale = slow.data.iter().map(|z| z.norm()).fold(1.0, f64::max);
            assert!(max_abs_diff(&fast, &slow) <= 1e-10 * scale, "{}x{}", r, c);
        }
    }

    #[test]
    fn fft2_rejects_empty() {
        assert!(fft2(&ComplexGrid::zeros(0, 3)).is_err());
    }

    #[test]
    fn svd_top_identity_and_diag() {
        let s = svd_top(&Matrix::identity(3)).unwrap();
        assert!((s.sigma - 1.0).abs() < 1e-14);
        let d = svd_top(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert!((d.sigma - 3.0).abs() < 1e-14);
        assert!((d.u[0].abs() - 1.0).abs() < 1e-14 && d.u[1].abs() < 1e-14);
        assert!((d.v[0].abs() - 1.0).abs() < 1e-14 && d.v[1].abs() < 1e-14);
    }

    #[test]
    fn svd_top_rejects_non_finite() {
        let m = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(svd_top(&m).is_err());
    }

    #[test]
    fn svd_top_residual_small() {
        let mut rng = Rng::new(3);
        for &(r, c) in &[(8, 5), (5, 8), (1, 4), (7, 7)] {
            let m = Matrix::from_vec(r, c, rng.normal_vec(r * c, 0.0, 1.0)).unwrap();
            let s = svd_top(&m).unwrap();
            let mv = m.matvec(&s.v);
            let res: Vec<f64> = mv.iter().zip(&s.u).map(|(a, b)| a - s.sigma * b).collect();
            assert!(norm2(&res) <= 1e-8 * s.sigma);
            assert!((norm2(&s.u) - 1.0).abs() < 1e-12);
            assert!((norm2(&s.v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_eigen_reconstructs() {
        let mut rng = Rng::new(5);
        let a = Matrix::from_vec(6, 6, rng.normal_vec(36, 0.0, 1.0)).unwrap();
        let s = gemm(&a, true, &a, false);
        let (vals, vecs) = symmetric_eigen(&s).unwrap();
        for (i, lam) in vals.iter().enumerate() {
            let v = vecs.column(i);
            let sv = s.matvec(&v);
            let res: Vec<f64> = sv.iter().zip(&v).map(|(x, y)| x - lam * y).collect();
            assert!(norm2(&res) < 1e-10 * vals[0]);
        }
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn gaussian_edge_cases() {
        let mut rng = Rng::new(1);
        let a = gaussian(&mut rng, &[3, 2], 1.5, 0.0).unwrap();
        assert!(a.data.iter().all(|&x| x == 1.5));
        assert!(gaussian(&mut rng, &[2], 0.0, -1.0).is_err());
        let x = gaussian(&mut Rng::new(9), &[100], 0.0, 1.0).unwrap();
        let y = gaussian(&mut Rng::new(9), &[100], 0.0, 1.0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(2024);
        let n = 1_000_000;
        let a = gaussian(&mut rng, &[n], 0.0, 1.0).unwrap();
        let mean = a.data.iter().sum::<f64>() / n as f64;
        let var = a.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 / 1e3);
        assert!((0.99..=1.01).contains(&var), "var {}", var);
    }

    #[test]
    fn gemm_transposes() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(a.matmul(&b), gemm(&b, true, &a, true).transpose());
        let ata = gemm(&a, true, &a, false);
        assert_eq!(ata, a.transpose().matmul(&a));
    }
}
