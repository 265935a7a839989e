//! Pull-back metric of the feature map and adversarial-distance lower bounds.
//!
//! For a sample `x` classified as `c` and a competing class `k`, any
//! perturbation reaching the `c`/`k` boundary has length at least
//! `margin / (‖W_c − W_k‖ · L)`, where `margin = (W_c − W_k)Φ(x) + b_c − b_k`
//! and `L` bounds `‖∇Φ‖₂` on the region the perturbation can reach. The
//! local and ball variants estimate `L`; the certified variant uses the
//! global product of layer norms, which makes the bound a theorem.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{argmax, runner_up, Layer, Net};
use crate::numerics::{norm2, normalize, svd_top, symmetric_eigen, Matrix, Rng};
use crate::spectral::{conv_top_sigma2, power_iter_sigma2};

/// Negative eigenvalues of `g` above this are rounding noise and read as 0.
pub const PSD_CLAMP: f64 = -1e-12;

/// `g = ∇Φ(x)ᵀ ∇Φ(x)` at `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTensor {
    pub g: Matrix,
    pub x: Vec<f64>,
}

impl MetricTensor {
    /// Eigenvalues in descending order, near-zero negatives clamped.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let (vals, _) = symmetric_eigen(&self.g)?;
        vals.into_iter()
            .map(|v| {
                if v >= 0.0 {
                    Ok(v)
                } else if v >= PSD_CLAMP * self.scale() {
                    Ok(0.0)
                } else {
                    Err(Error::Numeric(alloc::format!("metric tensor has eigenvalue {}", v)))
                }
            })
            .collect()
    }

    fn scale(&self) -> f64 {
        self.g.data.iter().fold(1.0f64, |m, v| m.max(v.abs()))
    }

    pub fn lambda_max(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or(0.0))
    }

    pub fn det(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.iter().product())
    }

    /// `√det g`
    pub fn volume_element(&self) -> Result<f64> {
        Ok(libm::sqrt(self.det()?))
    }
}

pub fn metric_tensor(net: &Net, x: &[f64]) -> Result<MetricTensor> {
    let j = net.input_jacobian_feature(x)?;
    let mut g = crate::numerics::gemm(&j, true, &j, false);
    // exact symmetry
    for r in 0..g.rows {
        for c in 0..r {
            let v = 0.5 * (g.get(r, c) + g.get(c, r));
            g.set(r, c, v);
            g.set(c, r, v);
        }
    }
    Ok(MetricTensor { g, x: x.to_vec() })
}

/// `√det g` at cell centres of `[x0, x1] × [y0, y1]`; row `i` is the `i`-th `y` cell.
pub fn volume_element_grid(net: &Net, rect: [f64; 4], resolution: (usize, usize)) -> Result<Matrix> {
    if net.input_dim != 2 {
        return Err(Error::Unsupported(alloc::format!("volume grid needs 2D inputs, net has {}", net.input_dim)));
    }
    let (nx, ny) = resolution;
    if nx == 0 || ny == 0 {
        return Err(invalid!("grid resolution must be positive"));
    }
    let [x0, x1, y0, y1] = rect;
    let mut out = Matrix::zeros(ny, nx);
    for i in 0..ny {
        let y = y0 + (i as f64 + 0.5) * (y1 - y0) / ny as f64;
        for j in 0..nx {
            let x = x0 + (j as f64 + 0.5) * (x1 - x0) / nx as f64;
            out.set(i, j, metric_tensor(net, &[x, y])?.volume_element()?);
        }
    }
    Ok(out)
}

const EXACT_NORM_MAX_ENTRIES: usize = 1 << 16;

/// `‖M‖₂`, exact for small matrices and by converged power iteration otherwise.
pub fn operator_norm(m: &Matrix) -> Result<f64> {
    if m.rows * m.cols <= EXACT_NORM_MAX_ENTRIES {
        return Ok(svd_top(m)?.sigma);
    }
    let mut v: Vec<f64> = (0..m.cols).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    normalize(&mut v);
    let mut prev = 0.0;
    for _ in 0..2000 {
        let t = power_iter_sigma2(m, &v, 1)?;
        v = t.v;
        if (t.sigma2 - prev).abs() <= 1e-13 * t.sigma2 {
            return Ok(libm::sqrt(t.sigma2));
        }
        prev = t.sigma2;
    }
    Ok(libm::sqrt(prev))
}

/// `Π σ_max(W^(l)) · (max|φ'|)^(#activations)` over the feature map: a global
/// Lipschitz constant of `Φ`.
pub fn feature_lipschitz(net: &Net) -> Result<f64> {
    let mut prod = 1.0;
    for layer in &net.features {
        prod *= match layer {
            Layer::Dense(d) => operator_norm(&d.weight)?,
            Layer::Conv(c) => libm::sqrt(conv_top_sigma2(&c.kernel, &c.spec)?),
            Layer::Activation { .. } => 1.0,
        };
    }
    Ok(prod * libm::pow(net.max_activation_derivative(), net.activation_count() as f64))
}

/// `‖∇Φ(x)‖₂`
pub fn jacobian_norm(net: &Net, x: &[f64]) -> Result<f64> {
    operator_norm(&net.input_jacobian_feature(x)?)
}

fn check_classes(net: &Net, c: usize, k: usize) -> Result<()> {
    let kk = net.classes();
    if c >= kk || k >= kk {
        return Err(invalid!("class index out of range for {} classes", kk));
    }
    if c == k {
        return Err(invalid!("comparison class must differ from the true class"));
    }
    Ok(())
}

fn readout_difference(net: &Net, c: usize, k: usize) -> Vec<f64> {
    net.readout.weight.row(c).iter().zip(net.readout.weight.row(k)).map(|(a, b)| a - b).collect()
}

/// `(W_c − W_k)Φ(x) / (‖W_c − W_k‖ ‖Φ(x)‖)`, bias excluded.
pub fn theta_x(net: &Net, x: &[f64], c: usize, k: usize) -> Result<f64> {
    check_classes(net, c, k)?;
    let phi = net.feature_map(x)?;
    theta_from_features(net, &phi, c, k)
}

pub fn theta_from_features(net: &Net, phi: &[f64], c: usize, k: usize) -> Result<f64> {
    let diff = readout_difference(net, c, k);
    let pn = norm2(phi);
    let dn = norm2(&diff);
    if pn == 0.0 {
        return Err(Error::Numeric("feature vector is zero, angle undefined".into()));
    }
    if dn == 0.0 {
        return Err(Error::Numeric(alloc::format!("readout rows {} and {} coincide", c, k)));
    }
    Ok(crate::numerics::dot(&diff, phi) / (dn * pn))
}

/// `((W_c − W_k)Φ(x) + b_c − b_k) / ‖W_c − W_k‖`: feature-space distance to the c/k boundary.
pub fn feature_margin(net: &Net, phi: &[f64], c: usize, k: usize) -> Result<f64> {
    check_classes(net, c, k)?;
    let diff = readout_difference(net, c, k);
    let dn = norm2(&diff);
    if dn == 0.0 {
        return Err(Error::Numeric(alloc::format!("readout rows {} and {} coincide", c, k)));
    }
    let bias = net.readout.bias.as_ref().map_or(0.0, |b| b[c] - b[k]);
    Ok((crate::numerics::dot(&diff, phi) + bias) / dn)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundMode {
    /// `‖∇Φ(x)‖₂` at the sample only. An estimate.
    Local,
    /// Max of `‖∇Φ‖₂` over `x` and `samples` uniform draws in `B₂(x, radius)`. An estimate.
    Ball { radius: f64, samples: usize },
    /// Global Lipschitz product. A certificate.
    Certified,
}

/// Uniform draw from `B₂(center, radius)`.
pub fn uniform_in_ball(rng: &mut Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let dir = rng.unit_vector(center.len());
    let r = radius * libm::pow(rng.uniform(), 1.0 / center.len() as f64);
    center.iter().zip(&dir).map(|(c, d)| c + r * d).collect()
}

/// `max ‖∇Φ(y)‖₂` over `x` and `samples` draws from the ball.
pub fn ball_jacobian_norm(net: &Net, x: &[f64], radius: f64, samples: usize, rng: &mut Rng) -> Result<f64> {
    if !(radius >= 0.0) {
        return Err(invalid!("ball radius must be non-negative"));
    }
    let mut best = jacobian_norm(net, x)?;
    for _ in 0..samples {
        let y = uniform_in_ball(rng, x, radius);
        best = best.max(jacobian_norm(net, &y)?);
    }
    Ok(best)
}

fn correct_class(net: &Net, x: &[f64], c: usize) -> Result<Vec<f64>> {
    let (logits, cache) = net.forward(x)?;
    if argmax(&logits) != c {
        return Err(invalid!("sample is classified as {}, not {}", argmax(&logits), c));
    }
    Ok(cache.features.data)
}

fn bound_from(margin: f64, denom: f64) -> f64 {
    if margin <= 0.0 {
        0.0
    } else if denom == 0.0 {
        f64::INFINITY
    } else {
        margin / denom
    }
}

/// Lower bound on the distance from `x` (classified `c`) to the `c`/`k` boundary.
pub fn adv_lower_bound(net: &Net, x: &[f64], c: usize, k: usize, mode: BoundMode, rng: &mut Rng) -> Result<f64> {
    check_classes(net, c, k)?;
    let phi = correct_class(net, x, c)?;
    let margin = feature_margin(net, &phi, c, k)?;
    let denom = match mode {
        BoundMode::Local => jacobian_norm(net, x)?,
        BoundMode::Ball { radius, samples } => ball_jacobian_norm(net, x, radius, samples, rng)?,
        BoundMode::Certified => feature_lipschitz(net)?,
    };
    Ok(bound_from(margin, denom))
}

/// Certified distance to any other class: the minimum over `k ≠ c`.
/// `lipschitz` is [`feature_lipschitz`] of `net`, passed in so callers can reuse it.
pub fn certified_bound_all(net: &Net, x: &[f64], c: usize, lipschitz: f64) -> Result<f64> {
    let phi = correct_class(net, x, c)?;
    let mut best = f64::INFINITY;
    for k in (0..net.classes()).filter(|&k| k != c) {
        best = best.min(bound_from(feature_margin(net, &phi, c, k)?, lipschitz));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub class: usize,
    /// Comparison class, the runner-up logit.
    pub k: usize,
    pub theta_x: f64,
    pub feat_norm: f64,
    pub lambda_max_g: f64,
    /// Estimate.
    pub bound_local: f64,
    /// Estimate.
    pub bound_ball: Option<f64>,
    pub bound_certified: f64,
}

/// Full report for a correctly classified `x`; `ball` is `(radius, samples)`.
pub fn geometry_report(net: &Net, x: &[f64], c: usize, ball: Option<(f64, usize)>, rng: &mut Rng) -> Result<GeometryReport> {
    let (logits, cache) = net.forward(x)?;
    if argmax(&logits) != c {
        return Err(invalid!("sample is classified as {}, not {}", argmax(&logits), c));
    }
    let k = runner_up(&logits, c);
    let phi = cache.features.data;
    let margin = feature_margin(net, &phi, c, k)?;
    let jac = net.input_jacobian_feature(x)?;
    let local = operator_norm(&jac)?;
    let bound_ball = match ball {
        Some((radius, samples)) => Some(bound_from(margin, ball_jacobian_norm(net, x, radius, samples, rng)?)),
        None => None,
    };
    Ok(GeometryReport {
        class: c,
        k,
        theta_x: theta_from_features(net, &phi, c, k)?,
        feat_norm: norm2(&phi),
        lambda_max_g: local * local,
        bound_local: bound_from(margin, local),
        bound_ball,
        bound_certified: bound_from(margin, feature_lipschitz(net)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, DenseLayer, Init};
    use alloc::vec;

    fn linear_feature_net(w: Matrix, readout: Matrix, bias: Option<Vec<f64>>) -> Net {
        let d = w.cols;
        Net::new(d, vec![Layer::Dense(DenseLayer::new(w, None).unwrap())], DenseLayer::new(readout, bias).unwrap()).unwrap()
    }

    #[test]
    fn linear_metric_is_gram() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]]).unwrap();
        let net = linear_feature_net(w.clone(), Matrix::identity(3), None);
        let m = metric_tensor(&net, &[0.2, 0.1]).unwrap();
        assert_eq!(m.g, crate::numerics::gemm(&w, true, &w, false));
    }

    #[test]
    fn volume_grid_of_diag_map() {
        let net = linear_feature_net(Matrix::diag(&[2.0, 3.0]), Matrix::identity(2), None);
        let grid = volume_element_grid(&net, [-1.5, 1.5, -1.5, 1.5], (4, 3)).unwrap();
        assert!(grid.data.iter().all(|v| (v - 6.0).abs() < 1e-12));
        let id = Net::new(2, vec![], DenseLayer::new(Matrix::identity(2), None).unwrap()).unwrap();
        let grid = volume_element_grid(&id, [0.0, 1.0, 0.0, 1.0], (2, 2)).unwrap();
        assert!(grid.data.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let three = Net::new(3, vec![], DenseLayer::new(Matrix::identity(3), None).unwrap()).unwrap();
        assert!(matches!(volume_element_grid(&three, [0.0, 1.0, 0.0, 1.0], (2, 2)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn linear_certificate_is_hyperplane_distance() {
        let readout = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let net = Net::new(2, vec![], DenseLayer::new(readout, Some(vec![0.3, -0.2])).unwrap()).unwrap();
        let x = [1.0, 0.4];
        let exact = ((2.0 * 1.0 + 1.5 * 0.4) + 0.5) / (2.0f64 * 2.0 + 1.5 * 1.5).sqrt();
        let b = adv_lower_bound(&net, &x, 0, 1, BoundMode::Certified, &mut Rng::new(0)).unwrap();
        assert!((b - exact).abs() < 1e-12);
    }

    #[test]
    fn theta_extremes() {
        let readout = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let net = Net::new(2, vec![], DenseLayer::new(readout, None).unwrap()).unwrap();
        assert!((theta_x(&net, &[2.0, 0.0], 0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(theta_x(&net, &[0.0, 3.0], 0, 1).unwrap(), 0.0);
        assert!(theta_x(&net, &[0.0, 0.0], 0, 1).is_err());
        assert!(theta_x(&net, &[1.0, 0.0], 0, 0).is_err());
    }

    #[test]
    fn readout_scale_leaves_bounds_unchanged() {
        let mut rng = Rng::new(21);
        let net = Net::mlp(&[2, 6, 3], Activation::Tanh, Init::FanIn, &mut rng).unwrap();
        let x = [0.4, -0.3];
        let (logits, _) = net.forward(&x).unwrap();
        let c = argmax(&logits);
        let mut scaled = net.clone();
        scaled.readout.weight = scaled.readout.weight.scaled(2.5);
        scaled.readout.bias = scaled.readout.bias.map(|b| b.iter().map(|v| 2.5 * v).collect());
        let a = geometry_report(&net, &x, c, Some((0.1, 8)), &mut Rng::new(1)).unwrap();
        let b = geometry_report(&scaled, &x, c, Some((0.1, 8)), &mut Rng::new(1)).unwrap();
        assert!((a.bound_local - b.bound_local).abs() < 1e-12 * a.bound_local.max(1.0));
        assert!((a.bound_certified - b.bound_certified).abs() < 1e-12 * a.bound_certified.max(1.0));
        assert!((a.bound_ball.unwrap() - b.bound_ball.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn misclassified_sample_rejected() {
        let net = Net::new(2, vec![], DenseLayer::new(Matrix::identity(2), None).unwrap()).unwrap();
        assert!(adv_lower_bound(&net, &[0.0, 1.0], 0, 1, BoundMode::Local, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn lambda_max_matches_jacobian_norm() {
        let mut rng = Rng::new(2);
        let net = Net::mlp(&[4, 7, 5, 3], Activation::Gelu, Init::FanIn, &mut rng).unwrap();
        let x = [0.1, -0.5, 0.9, 0.2];
        let m = metric_tensor(&net, &x).unwrap();
        let s = jacobian_norm(&net, &x).unwrap();
        assert!((m.lambda_max().unwrap() - s * s).abs() <= 1e-8 * s * s);
    }

    #[test]
    fn ball_denominator_grows_with_radius() {
        let mut rng = Rng::new(3);
        let net = Net::mlp(&[2, 8, 2], Activation::Gelu, Init::FanIn, &mut rng).unwrap();
        let x = [0.3, 0.3];
        let small = ball_jacobian_norm(&net, &x, 0.0, 16, &mut Rng::new(5)).unwrap();
        let big = ball_jacobian_norm(&net, &x, 1.0, 16, &mut Rng::new(5)).unwrap();
        assert!(big >= small);
        assert!((small - jacobian_norm(&net, &x).unwrap()).abs() < 1e-15);
    }
}
