//! Mini-batch SGD with momentum and the spectral penalty, readout
//! retraining on frozen features, and per-epoch tracking of the
//! quantities the robustness bound depends on.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::geometry::theta_from_features;
use crate::network::{argmax, cross_entropy, runner_up, DenseLayer, Gradients, LayerRef, Net};
use crate::numerics::{dot, gemm, norm2, Matrix, Rng};
use crate::regularize::{add_penalty_grads, layer_sigma2, penalty_at, RegConfig, RegMode, SpectralState};

const SPECTRAL_STREAM: u64 = 0x05be_c7a1;
const SHUFFLE_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `0` means full batch.
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub reg: RegConfig,
    /// Training-set indices whose `(θ_x, ‖Φ(x)‖)` are logged each epoch.
    pub track_samples: Vec<usize>,
    /// Test accuracy is computed every this many epochs and at the end; `0` disables it.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 0,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            reg: RegConfig::default(),
            track_samples: Vec::new(),
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        self.reg.validate(self.epochs)
    }
}

/// Classical momentum: `v ← μ v + g + λ p`, `p ← p − η v`.
pub fn sgd_step(params: &mut [&mut [f64]], grads: &Gradients, velocity: &mut Gradients, lr: f64, momentum: f64, weight_decay: f64) {
    for ((p, g), v) in params.iter_mut().zip(&grads.0).zip(velocity.0.iter_mut()) {
        for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi + weight_decay * *pi;
            *pi -= lr * *vi;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tracked {
    /// `None` when `Φ(x) = 0`.
    pub theta: Option<f64>,
    pub feat_norm: f64,
    pub k: usize,
}

/// `(θ_x, ‖Φ(x)‖₂)` for each row against its true label, with the runner-up logit as `k`.
pub fn track_confidence(net: &Net, samples: &Matrix, labels: &[usize]) -> Result<Vec<Tracked>> {
    if labels.len() != samples.rows {
        return Err(invalid!("{} labels for {} samples", labels.len(), samples.rows));
    }
    if samples.rows == 0 {
        return Ok(Vec::new());
    }
    let cache = net.forward_batch(samples)?;
    let mut out = Vec::with_capacity(samples.rows);
    for (r, &c) in labels.iter().enumerate() {
        let k = runner_up(cache.logits.row(r), c);
        let phi = cache.features.row(r);
        out.push(Tracked { theta: theta_from_features(net, phi, c, k).ok(), feat_norm: norm2(phi), k });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean task loss over the epoch's samples.
    pub loss: f64,
    /// Mean penalty value over the epoch's updates (0 while inactive).
    pub penalty: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// `σ²_max` per weight layer at the end of the epoch.
    pub sigma2: Vec<f64>,
    pub tracked: Vec<Tracked>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub layers: Vec<LayerRef>,
    pub initial_sigma2: Vec<f64>,
    pub initial_tracked: Vec<Tracked>,
    pub records: Vec<EpochRecord>,
}

/// Accuracy of `net` on `ds` in `[0, 1]`.
pub fn accuracy(net: &Net, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(invalid!("empty dataset"));
    }
    let preds = net.predict_batch(&ds.inputs)?;
    let hits = preds.iter().zip(&ds.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Resumable training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: Net,
    pub velocity: Gradients,
    pub spectral: SpectralState,
    /// Warm-start directions for logging `σ²` of large layers.
    monitor: Vec<Option<Vec<f64>>>,
    pub log: TrainLog,
    /// Epochs completed.
    pub epoch: usize,
}

const MONITOR_FIRST_ITERS: usize = 200;
const MONITOR_ITERS: usize = 10;

impl Trainer {
    pub fn new(net: Net, cfg: TrainConfig, train: &Dataset) -> Result<Self> {
        cfg.validate()?;
        if train.dim() != net.input_dim {
            return Err(invalid!("dataset has {} features, net expects {}", train.dim(), net.input_dim));
        }
        if train.classes > net.classes() {
            return Err(invalid!("dataset has {} classes, net outputs {}", train.classes, net.classes()));
        }
        if let Some(&bad) = cfg.track_samples.iter().find(|&&i| i >= train.len()) {
            return Err(invalid!("tracked sample {} out of range", bad));
        }
        let mut rng = Rng::new(cfg.seed).fork(SPECTRAL_STREAM);
        let spectral = SpectralState::for_config(&net, &cfg.reg, &mut rng)?;
        let layers = net.weight_layers();
        let mut trainer = Self {
            velocity: Gradients::zeros_like(&net),
            spectral,
            monitor: vec![None; layers.len()],
            log: TrainLog { layers, ..TrainLog::default() },
            epoch: 0,
            net,
            cfg,
        };
        trainer.log.initial_sigma2 = trainer.layer_sigma2()?;
        trainer.log.initial_tracked = trainer.tracked(train)?;
        Ok(trainer)
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    fn tracked(&self, train: &Dataset) -> Result<Vec<Tracked>> {
        if self.cfg.track_samples.is_empty() {
            return Ok(Vec::new());
        }
        let sub = train.select(&self.cfg.track_samples)?;
        track_confidence(&self.net, &sub.inputs, &sub.labels)
    }

    fn layer_sigma2(&mut self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.log.layers.len());
        for (i, &layer) in self.log.layers.iter().enumerate() {
            let iters = if self.monitor[i].is_some() { MONITOR_ITERS } else { MONITOR_FIRST_ITERS };
            let t = layer_sigma2(&self.net, layer, self.monitor[i].as_deref(), iters)?;
            out.push(t.sigma2);
            self.monitor[i] = Some(t.v);
        }
        Ok(out)
    }

    /// One pass over `train`; returns the new log row.
    pub fn run_epoch(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<&EpochRecord> {
        if self.is_done() {
            return Err(invalid!("training already finished ({} epochs)", self.cfg.epochs));
        }
        let epoch = self.epoch;
        let m = train.len();
        let batch = if self.cfg.batch_size == 0 || self.cfg.batch_size >= m { m } else { self.cfg.batch_size };
        let mut order: Vec<usize> = (0..m).collect();
        if batch < m {
            Rng::new(self.cfg.seed).fork(SHUFFLE_STREAM + epoch as u64).shuffle(&mut order);
        }
        let reg = self.cfg.reg.clone();
        let gamma = reg.gamma_at(epoch);
        let refresh = reg.mode != RegMode::None && epoch >= reg.warmup_epoch();

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut penalty_sum = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let gathered;
            let (x, labels): (&Matrix, Vec<usize>) = if batch == m {
                (&train.inputs, train.labels.clone())
            } else {
                gathered = train.select(chunk)?;
                (&gathered.inputs, gathered.labels.clone())
            };
            let cache = self.net.forward_batch(x)?;
            let (loss, dlogits, hits) = cross_entropy(&cache.logits, &labels)?;
            if !loss.is_finite() {
                return Err(self.diagnostic(epoch, step, loss));
            }
            let mut grads = self.net.backward(&cache, &dlogits)?;
            if refresh {
                self.spectral.refresh(&self.net, reg.refresh_period, reg.iters_per_refresh)?;
            }
            if gamma > 0.0 {
                penalty_sum += penalty_at(&self.net, &reg, &self.spectral, gamma)?;
                add_penalty_grads(&self.net, &reg, &self.spectral, gamma, &mut grads)?;
            }
            if !grads.is_finite() {
                return Err(self.diagnostic(epoch, step, loss));
            }
            let mut params = self.net.params_mut();
            sgd_step(&mut params, &grads, &mut self.velocity, self.cfg.lr, self.cfg.momentum, self.cfg.weight_decay);
            loss_sum += loss * labels.len() as f64;
            correct += hits;
            steps += 1;
        }
        self.epoch += 1;
        let test_acc = match test {
            Some(t) if self.cfg.eval_every > 0 && (self.epoch.is_multiple_of(self.cfg.eval_every) || self.is_done()) => {
                Some(accuracy(&self.net, t)?)
            }
            _ => None,
        };
        let sigma2 = self.layer_sigma2()?;
        let tracked = self.tracked(train)?;
        self.log.records.push(EpochRecord {
            epoch,
            loss: loss_sum / m as f64,
            penalty: penalty_sum / steps.max(1) as f64,
            train_acc: correct as f64 / m as f64,
            test_acc,
            sigma2,
            tracked,
        });
        Ok(self.log.records.last().expect("record just pushed"))
    }

    fn diagnostic(&self, epoch: usize, step: usize, loss: f64) -> Error {
        let max_abs = self.net.params().iter().flat_map(|p| p.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        let finite = self.net.params().iter().all(|p| p.iter().all(|v| v.is_finite()));
        Error::Numeric(alloc::format!(
            "non-finite training signal at epoch {}, step {}: loss = {}, max |param| = {}, params finite = {}, lr = {}",
            epoch,
            step,
            loss,
            max_abs,
            finite,
            self.cfg.lr
        ))
    }

    /// Runs epochs until `until` (capped at the configured total).
    pub fn run_until(&mut self, train: &Dataset, test: Option<&Dataset>, until: usize) -> Result<()> {
        while self.epoch < until.min(self.cfg.epochs) {
            self.run_epoch(train, test)?;
        }
        Ok(())
    }
}

pub fn train_supervised(net: Net, train: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<(Net, TrainLog)> {
    let mut t = Trainer::new(net, cfg.clone(), train)?;
    t.run_until(train, test, cfg.epochs)?;
    Ok((t.net, t.log))
}

/// Result of fitting a multinomial logistic readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutFit {
    pub readout: DenseLayer,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutOptions {
    pub l2: f64,
    /// Stop when `‖∇f‖₂ / n_samples` falls to this.
    pub tol: f64,
    pub max_iters: usize,
    pub memory: usize,
}

impl Default for ReadoutOptions {
    fn default() -> Self {
        Self { l2: 1.0, tol: 1e-6, max_iters: 5_000, memory: 10 }
    }
}

/// Summed cross-entropy of `softmax(F Wᵀ + b)` plus `(l2/2)‖W‖²_F`, and its
/// gradient packed as `[W row-major, b]`.
pub fn readout_objective(features: &Matrix, labels: &[usize], classes: usize, l2: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let d = features.cols;
    let w = Matrix { rows: classes, cols: d, data: theta[..classes * d].to_vec() };
    let b = &theta[classes * d..];
    let mut logits = gemm(features, false, &w, true);
    let mut value = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row_mut(r);
        for (z, bi) in row.iter_mut().zip(b) {
            *z += bi;
        }
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|&z| libm::exp(z - mx)).sum();
        let lse = mx + libm::log(s);
        value += lse - row[y];
        for z in row.iter_mut() {
            *z = libm::exp(*z - lse);
        }
        row[y] -= 1.0;
    }
    let mut grad = gemm(&logits, true, features, false).data;
    for (g, wi) in grad.iter_mut().zip(&w.data) {
        *g += l2 * wi;
    }
    value += 0.5 * l2 * dot(&w.data, &w.data);
    let mut gb = vec![0.0; classes];
    for r in 0..logits.rows {
        for (acc, v) in gb.iter_mut().zip(logits.row(r)) {
            *acc += v;
        }
    }
    grad.extend_from_slice(&gb);
    (value, grad)
}

/// Multinomial logistic regression on frozen features by L-BFGS, starting
/// from zero weights. The bias is not penalized.
pub fn retrain_readout(features: &Matrix, labels: &[usize], classes: usize, opts: &ReadoutOptions) -> Result<ReadoutFit> {
    if labels.len() != features.rows || features.rows == 0 {
        return Err(invalid!("{} labels for {} feature rows", labels.len(), features.rows));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(invalid!("label {} outside [0, {})", bad, classes));
    }
    if !(opts.l2 >= 0.0) || !(opts.tol > 0.0) || opts.memory == 0 {
        return Err(invalid!("invalid readout options"));
    }
    if !features.is_finite() {
        return Err(invalid!("features are not finite"));
    }
    let d = features.cols;
    let n = classes * (d + 1);
    let m = features.rows as f64;
    let f = |t: &[f64]| {
        let (v, mut g) = readout_objective(features, labels, classes, opts.l2, t);
        crate::numerics::scale(&mut g, 1.0 / m);
        (v / m, g)
    };
    let (theta, value, gnorm, iterations, converged) = lbfgs(&f, vec![0.0; n], opts.tol, opts.max_iters, opts.memory);
    let (value, gnorm) = (value * m, gnorm * m);
    let weight = Matrix { rows: classes, cols: d, data: theta[..classes * d].to_vec() };
    let bias = theta[classes * d..].to_vec();
    Ok(ReadoutFit { readout: DenseLayer { weight, bias: Some(bias) }, objective: value, grad_norm: gnorm, iterations, converged })
}

/// Limited-memory BFGS with a backtracking Armijo line search.
/// Returns `(x, f(x), ‖∇f(x)‖, iterations, converged)`.
pub fn lbfgs(
    f: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    mut x: Vec<f64>,
    tol: f64,
    max_iters: usize,
    memory: usize,
) -> (Vec<f64>, f64, f64, usize, bool) {
    let (mut fx, mut g) = f(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut iters = 0;
    while iters < max_iters {
        let gnorm = norm2(&g);
        if gnorm <= tol {
            return (x, fx, gnorm, iters, true);
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alpha = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            alpha[i] = rho[i] * dot(&s_hist[i], &q);
            crate::numerics::axpy(-alpha[i], &y_hist[i], &mut q);
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / gnorm,
        };
        crate::numerics::scale(&mut q, gamma);
        for i in 0..s_hist.len() {
            let beta = rho[i] * dot(&y_hist[i], &q);
            crate::numerics::axpy(alpha[i] - beta, &s_hist[i], &mut q);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            dir = g.iter().map(|v| -v / gnorm).collect();
            slope = dot(&g, &dir);
        }
        let mut step = 1.0;
        let (x_new, f_new, g_new) = loop {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let (fc, gc) = f(&cand);
            if fc <= fx + 1e-4 * step * slope || step < 1e-20 {
                break (cand, fc, gc);
            }
            step *= 0.5;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if step < 1e-20 && f_new >= fx {
            return (x, fx, gnorm, iters, false);
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            if s_hist.len() == memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            rho.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        iters += 1;
    }
    let gnorm = norm2(&g);
    (x, fx, gnorm, iters, gnorm <= tol)
}

/// Replaces the readout with a logistic fit on `Φ` of the training set.
pub fn retrain_net_readout(net: &Net, train: &Dataset, opts: &ReadoutOptions) -> Result<(Net, ReadoutFit)> {
    let feats = net.features_batch(&train.inputs)?;
    let fit = retrain_readout(&feats, &train.labels, net.classes(), opts)?;
    let mut out = net.clone();
    out.readout = fit.readout.clone();
    Ok((out, fit))
}

pub fn describe_record(r: &EpochRecord) -> String {
    alloc::format!(
        "epoch {:>6}  loss {:.6}  penalty {:.3e}  train {:.4}{}",
        r.epoch,
        r.loss,
        r.penalty,
        r.train_acc,
        r.test_acc.map(|a| alloc::format!("  test {:.4}", a)).unwrap_or_default()
    )
}

/// Predictions of a fitted readout on raw features.
pub fn readout_predict(readout: &DenseLayer, features: &[f64]) -> usize {
    let mut z = readout.weight.matvec(features);
    if let Some(b) = &readout.bias {
        for (zi, bi) in z.iter_mut().zip(b) {
            *zi += bi;
        }
    }
    argmax(&z)
}
