//! Top singular values of layer operators.
//!
//! Dense layers go through power iteration on the weight matrix. Periodic
//! convolutions are handled two ways: an exact route through the 2D DFT of
//! the stride-phase slices of the zero-padded kernel (one small complex
//! matrix per frequency bin), and an explicit linearization used as an
//! oracle on small instances.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, fft2, hermitian_top2, normalize, svd_top, ComplexGrid, Matrix, Rng};

/// Relative gap below which the top singular value counts as tied.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Anything with a forward and an adjoint application.
pub trait LinearOperator {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (**self).apply_adjoint(y)
    }
}

impl LinearOperator for Matrix {
    fn input_dim(&self) -> usize {
        self.cols
    }
    fn output_dim(&self) -> usize {
        self.rows
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.tr_matvec(y)
    }
}

/// Cached top singular triple of one operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularTriple {
    pub sigma2: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Parameter updates since the vectors were last refreshed.
    pub age: usize,
    pub degenerate: bool,
}

impl SingularTriple {
    pub fn sigma(&self) -> f64 {
        libm::sqrt(self.sigma2)
    }
}

/// Random unit start vector for [`power_iter_sigma2`].
pub fn random_start(rng: &mut Rng, dim: usize) -> Vec<f64> {
    rng.unit_vector(dim)
}

/// Power iteration for `σ²_max`: normalize `v`, then `iters` rounds of
/// `u = Mv/‖Mv‖, v = M*u/‖M*u‖`, finishing with `λ = ‖Mv‖²`.
///
/// A zero operator yields `λ = 0` with `u` set to the first basis vector.
pub fn power_iter_sigma2<M: LinearOperator + ?Sized>(
    op: &M,
    v0: &[f64],
    iters: usize,
) -> Result<SingularTriple> {
    if v0.len() != op.input_dim() {
        return Err(invalid!("start vector has length {}, operator expects {}", v0.len(), op.input_dim()));
    }
    if !v0.iter().all(|x| x.is_finite()) {
        return Err(invalid!("start vector is not finite"));
    }
    let mut v = v0.to_vec();
    if normalize(&mut v) == 0.0 {
        return Err(invalid!("start vector is zero"));
    }
    for _ in 0..iters {
        let mut u = op.apply(&v);
        if normalize(&mut u) == 0.0 {
            return Ok(zero_triple(op, v));
        }
        let mut next = op.apply_adjoint(&u);
        if normalize(&mut next) == 0.0 {
            return Ok(zero_triple(op, v));
        }
        v = next;
    }
    let mut u = op.apply(&v);
    let norm = normalize(&mut u);
    if norm == 0.0 {
        return Ok(zero_triple(op, v));
    }
    Ok(SingularTriple { sigma2: norm * norm, u, v, age: 0, degenerate: false })
}

fn zero_triple<M: LinearOperator + ?Sized>(op: &M, v: Vec<f64>) -> SingularTriple {
    let mut u = vec![0.0; op.output_dim()];
    if let Some(first) = u.first_mut() {
        *first = 1.0;
    }
    SingularTriple { sigma2: 0.0, u, v, age: 0, degenerate: false }
}

/// Exact triple of a dense matrix via Jacobi SVD, with the tie flag set
/// when the top two singular values are within [`DEGENERACY_TOL`].
pub fn exact_triple(w: &Matrix) -> Result<SingularTriple> {
    let s = svd_top(w)?;
    let sigma2 = s.sigma * s.sigma;
    let degenerate = match s.second {
        Some(second) => sigma2 - second * second <= DEGENERACY_TOL * sigma2,
        None => false,
    };
    Ok(SingularTriple { sigma2, u: s.u, v: s.v, age: 0, degenerate })
}

/// `∂σ²_max/∂W = 2 σ u vᵀ` for the triple's singular pair.
pub fn sigma2_grad(w: &Matrix, triple: &SingularTriple) -> Result<Matrix> {
    if triple.u.len() != w.rows || triple.v.len() != w.cols {
        return Err(invalid!("triple does not match a {}x{} matrix", w.rows, w.cols));
    }
    Ok(Matrix::outer(2.0 * triple.sigma(), &triple.u, &triple.v))
}

/// Shape of a periodic 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub stride: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvSpec {
    pub fn new(c_out: usize, c_in: usize, k: usize, stride: usize, h: usize, w: usize) -> Result<Self> {
        let spec = Self { c_out, c_in, k, stride, h, w };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_out == 0 || self.c_in == 0 || self.k == 0 {
            return Err(invalid!("conv channels and kernel size must be positive"));
        }
        if self.stride == 0 {
            return Err(invalid!("stride must be at least 1"));
        }
        if self.k > self.h || self.k > self.w {
            return Err(invalid!("kernel size {} exceeds image {}x{}", self.k, self.h, self.w));
        }
        Ok(())
    }

    /// `floor((n - 1)/s + 1)`
    pub fn out_h(&self) -> usize {
        (self.h - 1) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - 1) / self.stride + 1
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.out_h() * self.out_w()
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    #[inline]
    pub fn kernel_index(&self, o: usize, i: usize, a: usize, b: usize) -> usize {
        ((o * self.c_in + i) * self.k + a) * self.k + b
    }
}

/// Periodic (circular) multi-channel convolution, PyTorch cross-correlation
/// convention:
/// `Y[o,p,q] = Σ_{i,a,b} K[o,i,a,b] · X[i, (s·p + a) mod h, (s·q + b) mod w]`.
pub fn conv2d_periodic(x: &[f64], kernel: &[f64], spec: &ConvSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.len() != spec.input_len() {
        return Err(invalid!("conv input has length {}, expected {}", x.len(), spec.input_len()));
    }
    if kernel.len() != spec.kernel_len() {
        return Err(invalid!("kernel has length {}, expected {}", kernel.len(), spec.kernel_len()));
    }
    Ok(conv_forward_raw(x, kernel, spec))
}

pub(crate) fn conv_forward_raw(x: &[f64], kernel: &[f64], spec: &ConvSpec) -> Vec<f64> {
    let (h, w, s, k) = (spec.h, spec.w, spec.stride, spec.k);
    let (oh, ow) = (spec.out_h(), spec.out_w());
    let mut y = vec![0.0; spec.output_len()];
    for o in 0..spec.c_out {
        for i in 0..spec.c_in {
            let xi = &x[i * h * w..(i + 1) * h * w];
            for a in 0..k {
                for b in 0..k {
                    let kv = kernel[spec.kernel_index(o, i, a, b)];
                    if kv == 0.0 {
                        continue;
                    }
                    for p in 0..oh {
                        let row = (s * p + a) % h;
                        let yrow = &mut y[(o * oh + p) * ow..(o * oh + p + 1) * ow];
                        for (q, yv) in yrow.iter_mut().enumerate() {
                            *yv += kv * xi[row * w + (s * q + b) % w];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Adjoint of [`conv2d_periodic`] in its input.
pub fn conv2d_periodic_adjoint(y: &[f64], kernel: &[f64], spec: &ConvSpec) -> Vec<f64> {
    let (h, w, s, k) = (spec.h, spec.w, spec.stride, spec.k);
    let (oh, ow) = (spec.out_h(), spec.out_w());
    let mut x = vec![0.0; spec.input_len()];
    for o in 0..spec.c_out {
        for i in 0..spec.c_in {
            let xi = &mut x[i * h * w..(i + 1) * h * w];
            for a in 0..k {
                for b in 0..k {
                    let kv = kernel[spec.kernel_index(o, i, a, b)];
                    if kv == 0.0 {
                        continue;
                    }
                    for p in 0..oh {
                        let row = (s * p + a) % h;
                        let yrow = &y[(o * oh + p) * ow..(o * oh + p + 1) * ow];
                        for (q, yv) in yrow.iter().enumerate() {
                            xi[row * w + (s * q + b) % w] += kv * yv;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Derivative of `⟨dy, conv(x)⟩` with respect to the kernel:
/// `G[o,i,a,b] = Σ_{p,q} dy[o,p,q] · x[i, (s·p + a) mod h, (s·q + b) mod w]`.
pub fn conv2d_kernel_grad(x: &[f64], dy: &[f64], spec: &ConvSpec) -> Vec<f64> {
    let (h, w, s, k) = (spec.h, spec.w, spec.stride, spec.k);
    let (oh, ow) = (spec.out_h(), spec.out_w());
    let mut g = vec![0.0; spec.kernel_len()];
    for o in 0..spec.c_out {
        for i in 0..spec.c_in {
            let xi = &x[i * h * w..(i + 1) * h * w];
            for a in 0..k {
                for b in 0..k {
                    let mut acc = 0.0;
                    for p in 0..oh {
                        let row = (s * p + a) % h;
                        let yrow = &dy[(o * oh + p) * ow..(o * oh + p + 1) * ow];
                        for (q, yv) in yrow.iter().enumerate() {
                            acc += yv * xi[row * w + (s * q + b) % w];
                        }
                    }
                    g[spec.kernel_index(o, i, a, b)] = acc;
                }
            }
        }
    }
    g
}

/// Operator view of a periodic convolution (bias excluded).
#[derive(Debug, Clone, Copy)]
pub struct ConvOperator<'a> {
    pub kernel: &'a [f64],
    pub spec: ConvSpec,
}

impl LinearOperator for ConvOperator<'_> {
    fn input_dim(&self) -> usize {
        self.spec.input_len()
    }
    fn output_dim(&self) -> usize {
        self.spec.output_len()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        conv_forward_raw(x, self.kernel, &self.spec)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        conv2d_periodic_adjoint(y, self.kernel, &self.spec)
    }
}

/// Largest linearization this crate will materialize.
pub const LINEARIZE_MAX_ENTRIES: usize = 1_000_000;

/// The matrix `K̃` with `Vec(conv(X)) = K̃ Vec(X)`, built column by column
/// from basis images.
pub fn conv_linearize(kernel: &[f64], spec: &ConvSpec) -> Result<Matrix> {
    spec.validate()?;
    if kernel.len() != spec.kernel_len() {
        return Err(invalid!("kernel has length {}, expected {}", kernel.len(), spec.kernel_len()));
    }
    let rows = spec.output_len();
    let cols = spec.input_len();
    if rows.saturating_mul(cols) > LINEARIZE_MAX_ENTRIES {
        return Err(invalid!("linearization would have {}x{} entries", rows, cols));
    }
    let mut m = Matrix::zeros(rows, cols);
    let mut basis = vec![0.0; cols];
    for j in 0..cols {
        basis[j] = 1.0;
        let col = conv_forward_raw(&basis, kernel, spec);
        for (r, v) in col.iter().enumerate() {
            m.data[r * cols + j] = *v;
        }
        basis[j] = 0.0;
    }
    Ok(m)
}

/// Result of the frequency-domain spectrum scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvTop {
    pub sigma2: f64,
    /// Frequency bin (row, col) on the `(h/s) × (w/s)` grid that attains the max.
    pub bin: (usize, usize),
    /// Top two eigenvalues of that bin's Gram matrix are tied.
    pub degenerate: bool,
}

/// `σ²_max` of the linearized periodic convolution.
pub fn conv_top_sigma2(kernel: &[f64], spec: &ConvSpec) -> Result<f64> {
    Ok(conv_top(kernel, spec)?.sigma2)
}

/// Pads the kernel to `h × w`, splits it into `s²` stride-phase slices of
/// shape `(h/s, w/s)`, takes the 2D DFT of every slice, and for each
/// frequency bin forms the `c_out × (c_in·s²)` matrix `P`. The answer is the
/// max over bins of `λ_max(PP*)` or `λ_max(P*P)`, whichever Gram is smaller.
pub fn conv_top(kernel: &[f64], spec: &ConvSpec) -> Result<ConvTop> {
    spec.validate()?;
    if kernel.len() != spec.kernel_len() {
        return Err(invalid!("kernel has length {}, expected {}", kernel.len(), spec.kernel_len()));
    }
    let s = spec.stride;
    if s > 2 {
        return Err(Error::Unsupported(alloc::format!("stride {} (only 1 and 2)", s)));
    }
    if !spec.h.is_multiple_of(s) || !spec.w.is_multiple_of(s) {
        return Err(Error::Unsupported(alloc::format!(
            "image {}x{} is not divisible by stride {}",
            spec.h,
            spec.w,
            s
        )));
    }
    let (gh, gw) = (spec.h / s, spec.w / s);
    let phases = s * s;
    let cols = spec.c_in * phases;
    // transforms[o][i*phases + phase] is a gh×gw spectrum
    let mut transforms: Vec<ComplexGrid> = Vec::with_capacity(spec.c_out * cols);
    for o in 0..spec.c_out {
        for i in 0..spec.c_in {
            for pi in 0..s {
                for pj in 0..s {
                    let mut slice = vec![0.0; gh * gw];
                    for r in 0..gh {
                        for c in 0..gw {
                            let (a, b) = (r * s + pi, c * s + pj);
                            if a < spec.k && b < spec.k {
                                slice[r * gw + c] = kernel[spec.kernel_index(o, i, a, b)];
                            }
                        }
                    }
                    transforms.push(fft2(&ComplexGrid::from_real(gh, gw, &slice)?)?);
                }
            }
        }
    }
    let rows = spec.c_out;
    let small = rows.min(cols);
    let mut best = ConvTop { sigma2: -1.0, bin: (0, 0), degenerate: false };
    let mut p = vec![Complex64::new(0.0, 0.0); rows * cols];
    let mut gram = vec![Complex64::new(0.0, 0.0); small * small];
    for fr in 0..gh {
        for fc in 0..gw {
            for (idx, t) in transforms.iter().enumerate() {
                p[idx] = t.get(fr, fc);
            }
            if cols > rows {
                // P P*
                for a in 0..rows {
                    for b in 0..rows {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for j in 0..cols {
                            acc += p[a * cols + j] * p[b * cols + j].conj();
                        }
                        gram[a * rows + b] = acc;
                    }
                }
            } else {
                // P* P
                for a in 0..cols {
                    for b in 0..cols {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for r in 0..rows {
                            acc += p[r * cols + a].conj() * p[r * cols + b];
                        }
                        gram[a * cols + b] = acc;
                    }
                }
            }
            let (top, second) = hermitian_top2(small, &gram)?;
            if top > best.sigma2 {
                let degenerate = second.is_some_and(|s2| top - s2 <= DEGENERACY_TOL * top.abs());
                best = ConvTop { sigma2: top, bin: (fr, fc), degenerate };
            }
        }
    }
    best.sigma2 = best.sigma2.max(0.0);
    Ok(best)
}

/// Kernel gradient of `σ²_max` for a converged operator-space triple:
/// `2σ · ∂(uᵀK̃v)/∂K`, i.e. `u` correlated against patches of `v`.
pub fn conv_sigma2_grad(spec: &ConvSpec, triple: &SingularTriple) -> Result<Vec<f64>> {
    if triple.u.len() != spec.output_len() || triple.v.len() != spec.input_len() {
        return Err(invalid!("triple does not match conv operator shape"));
    }
    let mut g = conv2d_kernel_grad(&triple.v, &triple.u, spec);
    numerics::scale(&mut g, 2.0 * triple.sigma());
    Ok(g)
}

/// Relative difference helper used by several checks.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

/// Converged operator-form triple for a conv layer, starting from a random vector.
pub fn conv_power_triple(kernel: &[f64], spec: &ConvSpec, rng: &mut Rng, iters: usize) -> Result<SingularTriple> {
    let op = ConvOperator { kernel, spec: *spec };
    let v0 = random_start(rng, op.input_dim());
    power_iter_sigma2(&op, &v0, iters)
}

/// `‖M v‖` for a given unit `v`: the Alg.-style final step, exposed for callers
/// that keep their own cached direction.
pub fn sigma_from_direction<M: LinearOperator + ?Sized>(op: &M, v: &[f64]) -> (f64, Vec<f64>) {
    let mut u = op.apply(v);
    let s = normalize(&mut u);
    (s, u)
}
