//! Spectral penalties on layer weights with amortized power iteration.
//!
//! Each regularized layer keeps a cached right singular direction `v`. The
//! penalty term of a layer is `‖W v‖²`, which equals `σ²_max(W)` once `v` has
//! converged, and its gradient with `v` held fixed is `2 (W v) vᵀ = 2σ u vᵀ`.
//! `refresh` advances `v` by a few power-iteration rounds every
//! `refresh_period` parameter updates.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::network::{Gradients, Layer, LayerRef, Net};
use crate::numerics::{axpy, Matrix, Rng};
use crate::spectral::{
    conv2d_kernel_grad, conv_top_sigma2, exact_triple, power_iter_sigma2, random_start, sigma_from_direction,
    ConvOperator, LinearOperator, SingularTriple,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegMode {
    None,
    /// Every feature-map layer, readout excluded.
    RepSpectral,
    /// Every layer including the readout.
    LlSpectral,
}

impl RegMode {
    pub fn name(self) -> &'static str {
        match self {
            RegMode::None => "none",
            RegMode::RepSpectral => "rep-spectral",
            RegMode::LlSpectral => "ll-spectral",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegMode::None),
            "rep-spectral" | "rep" => Ok(RegMode::RepSpectral),
            "ll-spectral" | "ll" => Ok(RegMode::LlSpectral),
            other => Err(invalid!("unknown regularizer mode '{}'", other)),
        }
    }

    pub const ALL: [RegMode; 3] = [RegMode::None, RegMode::LlSpectral, RegMode::RepSpectral];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub mode: RegMode,
    pub gamma: f64,
    /// First epoch (0-based) at which the penalty is active.
    pub burn_in_epoch: usize,
    /// Parameter updates between refreshes.
    pub refresh_period: usize,
    pub iters_per_refresh: usize,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self { mode: RegMode::None, gamma: 0.0, burn_in_epoch: 0, refresh_period: 1, iters_per_refresh: 1 }
    }
}

impl RegConfig {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(invalid!("gamma must be finite and non-negative, got {}", self.gamma));
        }
        if self.refresh_period == 0 {
            return Err(invalid!("refresh period must be at least 1"));
        }
        if self.iters_per_refresh == 0 {
            return Err(invalid!("iterations per refresh must be at least 1"));
        }
        if self.burn_in_epoch > epochs {
            return Err(invalid!("burn-in epoch {} exceeds {} epochs", self.burn_in_epoch, epochs));
        }
        Ok(())
    }

    /// Layers this mode penalizes.
    pub fn layers(&self, net: &Net) -> Vec<LayerRef> {
        let all = net.weight_layers();
        match self.mode {
            RegMode::None => Vec::new(),
            RegMode::RepSpectral => all.into_iter().filter(|l| *l != LayerRef::Readout).collect(),
            RegMode::LlSpectral => all,
        }
    }

    /// Penalty strength in force during `epoch`.
    pub fn gamma_at(&self, epoch: usize) -> f64 {
        if self.mode == RegMode::None || epoch < self.burn_in_epoch {
            0.0
        } else {
            self.gamma
        }
    }

    /// First epoch in which the cached directions are refreshed: the last
    /// tenth of burn-in.
    pub fn warmup_epoch(&self) -> usize {
        self.burn_in_epoch - self.burn_in_epoch.div_ceil(10)
    }

    pub fn is_active(&self) -> bool {
        self.mode != RegMode::None && self.gamma > 0.0
    }
}

/// Operator view of a weight-bearing layer.
pub fn layer_operator(net: &Net, layer: LayerRef) -> Result<Box<dyn LinearOperator + '_>> {
    match layer {
        LayerRef::Readout => Ok(Box::new(&net.readout.weight)),
        LayerRef::Feature(i) => match net.features.get(i) {
            Some(Layer::Dense(d)) => Ok(Box::new(&d.weight)),
            Some(Layer::Conv(c)) => Ok(Box::new(ConvOperator { kernel: &c.kernel, spec: c.spec })),
            _ => Err(invalid!("feature layer {} has no weights", i)),
        },
    }
}

fn layer_matrix(net: &Net, layer: LayerRef) -> Option<&Matrix> {
    match layer {
        LayerRef::Readout => Some(&net.readout.weight),
        LayerRef::Feature(i) => match net.features.get(i) {
            Some(Layer::Dense(d)) => Some(&d.weight),
            _ => None,
        },
    }
}

/// Largest dense layer (in entries) whose `σ²` is taken from an exact SVD.
pub const EXACT_SVD_MAX_ENTRIES: usize = 4096;

/// `σ²_max` of one layer: exact SVD for small dense layers, the FFT route for
/// conv layers, and `iters` power-iteration rounds from `start` otherwise.
pub fn layer_sigma2(net: &Net, layer: LayerRef, start: Option<&[f64]>, iters: usize) -> Result<SingularTriple> {
    if let Some(w) = layer_matrix(net, layer) {
        if w.rows * w.cols <= EXACT_SVD_MAX_ENTRIES {
            return exact_triple(w);
        }
    }
    if let LayerRef::Feature(i) = layer {
        if let Some(Layer::Conv(c)) = net.features.get(i) {
            let sigma2 = conv_top_sigma2(&c.kernel, &c.spec)?;
            let op = ConvOperator { kernel: &c.kernel, spec: c.spec };
            let v = match start {
                Some(v) => v.to_vec(),
                None => {
                    let mut v = alloc::vec![0.0; op.input_dim()];
                    v[0] = 1.0;
                    v
                }
            };
            let (_, u) = sigma_from_direction(&op, &v);
            return Ok(SingularTriple { sigma2, u, v, age: 0, degenerate: false });
        }
    }
    let op = layer_operator(net, layer)?;
    let v0 = match start {
        Some(v) => v.to_vec(),
        None => Rng::new(0).unit_vector(op.input_dim()),
    };
    power_iter_sigma2(op.as_ref(), &v0, iters)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEntry {
    pub layer: LayerRef,
    pub triple: SingularTriple,
}

/// Cached singular directions, one per regularized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub entries: Vec<SpectralEntry>,
}

impl SpectralState {
    /// Random unit start directions for `layers`, with one power-iteration round each.
    pub fn init(net: &Net, layers: &[LayerRef], rng: &mut Rng) -> Result<Self> {
        let mut entries = Vec::with_capacity(layers.len());
        for &layer in layers {
            let op = layer_operator(net, layer)?;
            let v0 = random_start(rng, op.input_dim());
            let triple = power_iter_sigma2(op.as_ref(), &v0, 1)?;
            entries.push(SpectralEntry { layer, triple });
        }
        Ok(Self { entries })
    }

    pub fn for_config(net: &Net, cfg: &RegConfig, rng: &mut Rng) -> Result<Self> {
        Self::init(net, &cfg.layers(net), rng)
    }

    pub fn get(&self, layer: LayerRef) -> Option<&SingularTriple> {
        self.entries.iter().find(|e| e.layer == layer).map(|e| &e.triple)
    }

    /// Ages every entry by one update; entries reaching `period` get
    /// `iters` warm-started power-iteration rounds and their age reset.
    pub fn refresh(&mut self, net: &Net, period: usize, iters: usize) -> Result<()> {
        for entry in &mut self.entries {
            entry.triple.age += 1;
            if entry.triple.age >= period {
                let op = layer_operator(net, entry.layer)?;
                let mut t = power_iter_sigma2(op.as_ref(), &entry.triple.v, iters)?;
                t.degenerate = entry.triple.degenerate;
                entry.triple = t;
            }
        }
        Ok(())
    }

    /// Unconditional refresh of every entry.
    pub fn converge(&mut self, net: &Net, iters: usize) -> Result<()> {
        self.refresh(net, 1, iters)
    }

    /// Per-entry `‖W v‖` and `W v / ‖W v‖` for the current weights.
    fn current(&self, net: &Net) -> Result<Vec<(LayerRef, f64, Vec<f64>, &[f64])>> {
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let op = layer_operator(net, e.layer)?;
            if e.triple.v.len() != op.input_dim() {
                return Err(invalid!("cached direction does not match layer {:?}", e.layer));
            }
            let (sigma, u) = sigma_from_direction(op.as_ref(), &e.triple.v);
            out.push((e.layer, sigma, u, e.triple.v.as_slice()));
        }
        Ok(out)
    }
}

fn check_coverage(net: &Net, cfg: &RegConfig, state: &SpectralState) -> Result<()> {
    for layer in cfg.layers(net) {
        if state.get(layer).is_none() {
            return Err(invalid!("no cached direction for layer {:?}", layer));
        }
    }
    Ok(())
}

/// `(γ/2) Σ ‖W v‖²` over the penalized layers at strength `gamma`.
pub fn penalty_at(net: &Net, cfg: &RegConfig, state: &SpectralState, gamma: f64) -> Result<f64> {
    if cfg.mode == RegMode::None || gamma == 0.0 {
        return Ok(0.0);
    }
    check_coverage(net, cfg, state)?;
    let layers = cfg.layers(net);
    let sum: f64 = state
        .current(net)?
        .iter()
        .filter(|(l, ..)| layers.contains(l))
        .map(|(_, s, ..)| s * s)
        .sum();
    Ok(0.5 * gamma * sum)
}

pub fn penalty(net: &Net, cfg: &RegConfig, state: &SpectralState) -> Result<f64> {
    penalty_at(net, cfg, state, cfg.gamma)
}

/// Adds `γ σ u vᵀ` (dense) or its kernel-space image (conv) for every
/// penalized layer into `grads`.
pub fn add_penalty_grads(net: &Net, cfg: &RegConfig, state: &SpectralState, gamma: f64, grads: &mut Gradients) -> Result<()> {
    if cfg.mode == RegMode::None || gamma == 0.0 {
        return Ok(());
    }
    check_coverage(net, cfg, state)?;
    let layers = cfg.layers(net);
    for (layer, sigma, u, v) in state.current(net)? {
        if !layers.contains(&layer) {
            continue;
        }
        let slot = net.weight_slot(layer).ok_or_else(|| invalid!("layer {:?} has no weight slot", layer))?;
        let target = grads.0.get_mut(slot).ok_or_else(|| invalid!("gradient buffer too short"))?;
        match layer {
            LayerRef::Feature(i) if matches!(net.features[i], Layer::Conv(_)) => {
                let Layer::Conv(c) = &net.features[i] else { unreachable!() };
                let g = conv2d_kernel_grad(v, &u, &c.spec);
                axpy(gamma * sigma, &g, target);
            }
            _ => {
                let cols = v.len();
                for (r, ur) in u.iter().enumerate() {
                    axpy(gamma * sigma * ur, v, &mut target[r * cols..(r + 1) * cols]);
                }
            }
        }
    }
    Ok(())
}

pub fn penalty_grads(net: &Net, cfg: &RegConfig, state: &SpectralState) -> Result<Gradients> {
    let mut g = Gradients::zeros_like(net);
    add_penalty_grads(net, cfg, state, cfg.gamma, &mut g)?;
    Ok(g)
}

pub fn describe(cfg: &RegConfig) -> String {
    alloc::format!(
        "{} (gamma={}, burn-in epoch {}, refresh every {} update(s), {} iter(s))",
        cfg.mode.name(),
        cfg.gamma,
        cfg.burn_in_epoch,
        cfg.refresh_period,
        cfg.iters_per_refresh
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, DenseLayer, Init};
    use crate::numerics::svd_top;
    use alloc::vec;

    fn two_layer_diag() -> Net {
        Net::new(
            2,
            vec![
                Layer::Dense(DenseLayer::new(Matrix::diag(&[2.0, 1.0]), None).unwrap()),
                Layer::Activation { activation: Activation::Relu },
            ],
            DenseLayer::new(Matrix::diag(&[3.0, 1.0]), None).unwrap(),
        )
        .unwrap()
    }

    fn cfg(mode: RegMode, gamma: f64) -> RegConfig {
        RegConfig { mode, gamma, ..RegConfig::default() }
    }

    #[test]
    fn closed_form_penalties() {
        let net = two_layer_diag();
        let mut rng = Rng::new(3);
        for (mode, expected) in [(RegMode::RepSpectral, 4.0), (RegMode::LlSpectral, 13.0), (RegMode::None, 0.0)] {
            let c = cfg(mode, 2.0);
            let mut state = SpectralState::for_config(&net, &c, &mut rng).unwrap();
            state.converge(&net, 200).unwrap();
            assert!((penalty(&net, &c, &state).unwrap() - expected).abs() < 1e-9, "{:?}", mode);
        }
    }

    #[test]
    fn zero_gamma_is_zero() {
        let net = two_layer_diag();
        let c = cfg(RegMode::LlSpectral, 0.0);
        let state = SpectralState::for_config(&net, &c, &mut Rng::new(0)).unwrap();
        assert_eq!(penalty(&net, &c, &state).unwrap(), 0.0);
        assert!(penalty_grads(&net, &c, &state).unwrap().flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dense_gradient_closed_form() {
        let net = Net::new(2, vec![], DenseLayer::new(Matrix::diag(&[3.0, 1.0]), None).unwrap()).unwrap();
        let c = cfg(RegMode::LlSpectral, 1.0);
        let mut state = SpectralState::for_config(&net, &c, &mut Rng::new(1)).unwrap();
        state.converge(&net, 100).unwrap();
        let g = penalty_grads(&net, &c, &state).unwrap();
        let expected = [3.0, 0.0, 0.0, 0.0];
        for (a, b) in g.0[0].iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn one_by_one_conv_gradient() {
        let spec = crate::spectral::ConvSpec::new(1, 1, 1, 1, 4, 4).unwrap();
        let conv = crate::network::ConvLayer { kernel: vec![1.5], bias: None, spec };
        let net = Net::new(16, vec![Layer::Conv(conv)], DenseLayer::new(Matrix::zeros(2, 16), None).unwrap()).unwrap();
        let c = cfg(RegMode::RepSpectral, 0.7);
        let mut state = SpectralState::for_config(&net, &c, &mut Rng::new(2)).unwrap();
        state.converge(&net, 3).unwrap();
        let g = penalty_grads(&net, &c, &state).unwrap();
        assert!((g.0[0][0] - 1.5 * 0.7).abs() < 1e-12);
        assert!((penalty(&net, &c, &state).unwrap() - 0.35 * 2.25).abs() < 1e-12);
    }

    #[test]
    fn rep_spectral_leaves_readout_alone() {
        let mut rng = Rng::new(5);
        let net = Net::mlp(&[3, 6, 4, 3], Activation::Tanh, Init::FanIn, &mut rng).unwrap();
        let c = cfg(RegMode::RepSpectral, 0.5);
        let mut state = SpectralState::for_config(&net, &c, &mut rng).unwrap();
        state.converge(&net, 50).unwrap();
        let g = penalty_grads(&net, &c, &state).unwrap();
        let slot = net.weight_slot(LayerRef::Readout).unwrap();
        assert!(g.0[slot].iter().all(|&v| v == 0.0));
        assert!(g.0[0].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn fresh_state_matches_exact_svd() {
        let mut rng = Rng::new(9);
        let net = Net::mlp(&[5, 7, 6, 3], Activation::Gelu, Init::FanIn, &mut rng).unwrap();
        let c = cfg(RegMode::LlSpectral, 0.3);
        let mut state = SpectralState::for_config(&net, &c, &mut rng).unwrap();
        state.converge(&net, 500).unwrap();
        let mut exact = 0.0;
        for layer in net.weight_layers() {
            let w = layer_matrix(&net, layer).unwrap();
            exact += svd_top(w).unwrap().sigma.powi(2);
        }
        let p = penalty(&net, &c, &state).unwrap();
        assert!((p - 0.15 * exact).abs() <= 1e-6 * p);
    }

    #[test]
    fn refresh_respects_period() {
        let mut rng = Rng::new(4);
        let net = Net::mlp(&[4, 5, 2], Activation::Relu, Init::FanIn, &mut rng).unwrap();
        let c = cfg(RegMode::RepSpectral, 1.0);
        let mut state = SpectralState::for_config(&net, &c, &mut rng).unwrap();
        let v0 = state.entries[0].triple.v.clone();
        state.refresh(&net, 3, 1).unwrap();
        state.refresh(&net, 3, 1).unwrap();
        assert_eq!(state.entries[0].triple.age, 2);
        assert_eq!(state.entries[0].triple.v, v0);
        state.refresh(&net, 3, 1).unwrap();
        assert_eq!(state.entries[0].triple.age, 0);
        assert_ne!(state.entries[0].triple.v, v0);
    }

    #[test]
    fn frozen_weights_approach_exact_monotonically() {
        let mut rng = Rng::new(8);
        let net = Net::mlp(&[6, 8, 2], Activation::Relu, Init::FanIn, &mut rng).unwrap();
        let c = cfg(RegMode::RepSpectral, 1.0);
        let mut state = SpectralState::for_config(&net, &c, &mut rng).unwrap();
        let exact = svd_top(layer_matrix(&net, LayerRef::Feature(0)).unwrap()).unwrap().sigma.powi(2);
        let mut prev = state.entries[0].triple.sigma2;
        for _ in 0..100 {
            state.refresh(&net, 2, 1).unwrap();
            let cur = state.entries[0].triple.sigma2;
            assert!(cur >= prev - 1e-12 && cur <= exact * (1.0 + 1e-12));
            prev = cur;
        }
        assert!((exact - prev) / exact < 1e-6);
    }

    #[test]
    fn warmup_epoch_is_last_tenth_of_burn_in() {
        let mut c = cfg(RegMode::RepSpectral, 1.0);
        c.burn_in_epoch = 10500;
        assert_eq!(c.warmup_epoch(), 9450);
        c.burn_in_epoch = 0;
        assert_eq!(c.warmup_epoch(), 0);
        assert_eq!(c.gamma_at(0), 1.0);
        c.burn_in_epoch = 5;
        assert_eq!(c.gamma_at(4), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(RegMode::RepSpectral, -1.0);
        assert!(c.validate(10).is_err());
        c.gamma = 1.0;
        c.refresh_period = 0;
        assert!(c.validate(10).is_err());
        c.refresh_period = 1;
        c.burn_in_epoch = 11;
        assert!(c.validate(10).is_err());
        c.burn_in_epoch = 10;
        assert!(c.validate(10).is_ok());
    }
}
