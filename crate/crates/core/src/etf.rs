//! Simplex equiangular tight frames and gradient descent on a linear head
//! over frozen ETF representations.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::network::softmax;
use crate::numerics::{axpy, cosine, dot, norm2, Matrix, Rng};

/// `K` unit vectors in `ℝᵈ`, one per row, with pairwise inner product `−1/(K−1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtfFrame {
    pub z: Matrix,
}

impl EtfFrame {
    pub fn classes(&self) -> usize {
        self.z.rows
    }

    pub fn dim(&self) -> usize {
        self.z.cols
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        self.z.row(k)
    }
}

/// Centered simplex expressed in the Helmert basis of `1^⊥`, occupying the
/// first `K − 1` coordinates and zero-padded to `d`.
pub fn make_simplex_etf(k: usize, d: usize) -> Result<EtfFrame> {
    if k < 2 {
        return Err(invalid!("a simplex frame needs at least 2 classes"));
    }
    if d + 1 < k {
        return Err(invalid!("dimension {} is below K − 1 = {}", d, k - 1));
    }
    let scale = libm::sqrt(k as f64 / (k - 1) as f64);
    let mut z = Matrix::zeros(k, d);
    for j in 1..k {
        // h_j = (1, …, 1, −j, 0, …) / √(j(j+1)) with j leading ones
        let norm = libm::sqrt((j * (j + 1)) as f64);
        for i in 0..k {
            let h = if i < j {
                1.0
            } else if i == j {
                -(j as f64)
            } else {
                0.0
            };
            z.set(i, j - 1, scale * h / norm);
        }
    }
    Ok(EtfFrame { z })
}

fn check_shapes(w: &Matrix, frame: &EtfFrame) -> Result<()> {
    if w.rows != frame.classes() || w.cols != frame.dim() {
        return Err(invalid!("head is {}x{}, frame needs {}x{}", w.rows, w.cols, frame.classes(), frame.dim()));
    }
    Ok(())
}

/// Mean cross-entropy of the head `W` over one sample `z_k` per class `k`.
pub fn lastlayer_loss(w: &Matrix, frame: &EtfFrame) -> Result<f64> {
    check_shapes(w, frame)?;
    let kk = frame.classes();
    let mut total = 0.0;
    for k in 0..kk {
        let logits = w.matvec(frame.vector(k));
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + libm::log(logits.iter().map(|&z| libm::exp(z - mx)).sum::<f64>());
        total += lse - logits[k];
    }
    Ok(total / kk as f64)
}

/// `∂L/∂W` from `−∂L/∂W_k = (1/K)[(Σ_{l≠k} g_l(z_k)) z_k − Σ_{l≠k} g_k(z_l) z_l]`
/// with `g(z) = softmax(W z)`.
pub fn lastlayer_grad(w: &Matrix, frame: &EtfFrame) -> Result<Matrix> {
    check_shapes(w, frame)?;
    let kk = frame.classes();
    let probs: Vec<Vec<f64>> = (0..kk).map(|l| softmax(&w.matvec(frame.vector(l)))).collect();
    let mut grad = Matrix::zeros(kk, frame.dim());
    for k in 0..kk {
        let mut neg = vec![0.0; frame.dim()];
        let pull: f64 = (0..kk).filter(|&l| l != k).map(|l| probs[k][l]).sum();
        axpy(pull, frame.vector(k), &mut neg);
        for l in (0..kk).filter(|&l| l != k) {
            axpy(-probs[l][k], frame.vector(l), &mut neg);
        }
        for (g, v) in grad.row_mut(k).iter_mut().zip(&neg) {
            *g = -v / kk as f64;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtfTrajectory {
    pub w: Matrix,
    /// `cos(W_k, z_k)` per class, one row per step including step 0.
    pub cosines: Vec<Vec<f64>>,
    /// `‖W_k‖` per class, aligned with `cosines`.
    pub norms: Vec<Vec<f64>>,
    /// Mean alignment fell over the final tenth of the run.
    pub diverged: bool,
}

/// Full-batch gradient descent on the head from `N(0, init_std²)` weights.
pub fn lastlayer_gd(frame: &EtfFrame, init_std: f64, lr: f64, steps: usize, rng: &mut Rng) -> Result<EtfTrajectory> {
    if !(init_std >= 0.0) || !(lr >= 0.0) {
        return Err(invalid!("init std and learning rate must be non-negative"));
    }
    let kk = frame.classes();
    let d = frame.dim();
    let mut w = Matrix { rows: kk, cols: d, data: rng.normal_vec(kk * d, 0.0, init_std) };
    let snapshot = |w: &Matrix| -> (Vec<f64>, Vec<f64>) {
        let c = (0..kk).map(|k| cosine(w.row(k), frame.vector(k))).collect();
        let n = (0..kk).map(|k| norm2(w.row(k))).collect();
        (c, n)
    };
    let (c0, n0) = snapshot(&w);
    let mut cosines = vec![c0];
    let mut norms = vec![n0];
    for _ in 0..steps {
        let g = lastlayer_grad(&w, frame)?;
        axpy(-lr, &g.data, &mut w.data);
        let (c, n) = snapshot(&w);
        cosines.push(c);
        norms.push(n);
    }
    let mean = |row: &Vec<f64>| row.iter().sum::<f64>() / kk as f64;
    let tail = (steps / 10).max(1).min(cosines.len() - 1);
    let diverged = steps > 0 && mean(&cosines[cosines.len() - 1]) < mean(&cosines[cosines.len() - 1 - tail]) - 1e-9;
    Ok(EtfTrajectory { w, cosines, norms, diverged })
}

/// `(1 − z_kᵀ z_c) / ‖z_c − z_k‖₂`
pub fn theta_x_analytic(frame: &EtfFrame, c: usize, k: usize) -> Result<f64> {
    let kk = frame.classes();
    if c >= kk || k >= kk {
        return Err(invalid!("class index out of range for {} classes", kk));
    }
    if c == k {
        return Err(invalid!("comparison class must differ from the true class"));
    }
    let zc = frame.vector(c);
    let zk = frame.vector(k);
    let diff: Vec<f64> = zc.iter().zip(zk).map(|(a, b)| a - b).collect();
    Ok((1.0 - dot(zk, zc)) / norm2(&diff))
}
