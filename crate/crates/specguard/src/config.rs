//! Flat `section.key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use specguard_core::attack::AttackConfig;
use specguard_core::network::{Activation, Init};
use specguard_core::regularize::{RegConfig, RegMode};
use specguard_core::train::{ReadoutOptions, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Xor,
    XorNoisy,
    Mnist,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Xor => "xor",
            DataKind::XorNoisy => "xor-noisy",
            DataKind::Mnist => "mnist",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub kind: DataKind,
    pub points_per_cluster: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// `0` keeps the full split.
    pub train_size: usize,
    pub test_size: usize,
    pub stratified: bool,
    pub center: bool,
    /// Empty means `$SPECGUARD_DATA_DIR`.
    pub dir: String,
    pub cache: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub track_samples: Vec<usize>,
    pub eval_every: usize,
    /// Checkpoint cadence in epochs; `0` writes only the final checkpoint.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegSection {
    pub modes: Vec<RegMode>,
    pub gamma: f64,
    pub burn_in_fraction: f64,
    /// Overrides the fraction when set.
    pub burn_in_epoch: Option<usize>,
    pub refresh_period: usize,
    pub iters_per_refresh: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Trained,
    Retrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSection {
    /// Correctly classified samples attacked per run; `0` attacks all of them.
    pub samples: usize,
    pub split_test: bool,
    pub head: Head,
    pub seed: u64,
    pub params: AttackConfig,
    pub thresholds: Vec<f64>,
    /// Brute-force rays for 2D inputs; `0` skips the comparison.
    pub brute_force_rays: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySection {
    pub rect: [f64; 4],
    pub resolution: usize,
    pub ball_radius: f64,
    pub ball_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtfSection {
    pub classes: usize,
    pub dim: usize,
    pub init_std: Vec<f64>,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub reg: RegSection,
    pub attack: AttackSection,
    pub geometry: GeometrySection,
    pub readout: ReadoutOptions,
    pub etf: EtfSection,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Parallel seed workers; `0` lets rayon decide.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSection {
                kind: DataKind::Xor,
                points_per_cluster: 50,
                noise_std: 0.2,
                seed: 0,
                train_size: 0,
                test_size: 0,
                stratified: true,
                center: false,
                dir: String::new(),
                cache: true,
            },
            model: ModelSection { hidden: vec![8], activation: Activation::Gelu, init: Init::FanIn },
            train: TrainSection {
                epochs: 100,
                batch_size: 0,
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
                track_samples: Vec::new(),
                eval_every: 1,
                checkpoint_every: 0,
            },
            reg: RegSection {
                modes: vec![RegMode::None],
                gamma: 0.0,
                burn_in_fraction: 0.0,
                burn_in_epoch: None,
                refresh_period: 1,
                iters_per_refresh: 1,
            },
            attack: AttackSection {
                samples: 100,
                split_test: true,
                head: Head::Trained,
                seed: 0,
                params: AttackConfig::default(),
                thresholds: (0..=40).map(|i| i as f64 * 0.05).collect(),
                brute_force_rays: 0,
            },
            geometry: GeometrySection { rect: [-1.5, 1.5, -1.5, 1.5], resolution: 60, ball_radius: 0.0, ball_samples: 64 },
            readout: ReadoutOptions::default(),
            etf: EtfSection { classes: 3, dim: 2, init_std: vec![0.001, 0.1], lr: 0.01, steps: 5000, seed: 0 },
            output_dir: PathBuf::from("runs"),
            seeds: vec![0],
            workers: 0,
        }
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("xor-clean", include_str!("../presets/xor-clean.ini")),
    ("xor-noisy", include_str!("../presets/xor-noisy.ini")),
    ("mnist-mlp", include_str!("../presets/mnist-mlp.ini")),
    ("etf-demo", include_str!("../presets/etf-demo.ini")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

fn parse_err(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("{key} = {value:?}: expected {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> CliResult<T> {
    value.parse().map_err(|_| parse_err(key, value, what))
}

fn list<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> CliResult<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| num(key, s, what)).collect()
}

fn boolean(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(parse_err(key, value, "a boolean")),
    }
}

fn fmt_list<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Reads `path`, or a built-in preset when written as `preset:<name>`.
    pub fn load(path: &str) -> CliResult<Self> {
        if let Some(name) = path.strip_prefix("preset:") {
            let text = preset(name).ok_or_else(|| CliError::Config(format!("unknown preset {name:?}")))?;
            return Self::parse(text);
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `section.key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), lineno).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        match key {
            "data.kind" => {
                self.data.kind = match v {
                    "xor" => DataKind::Xor,
                    "xor-noisy" => DataKind::XorNoisy,
                    "mnist" => DataKind::Mnist,
                    _ => return Err(parse_err(key, v, "xor, xor-noisy or mnist")),
                }
            }
            "data.points_per_cluster" => self.data.points_per_cluster = num(key, v, "a count")?,
            "data.noise_std" => self.data.noise_std = num(key, v, "a number")?,
            "data.seed" => self.data.seed = num(key, v, "an integer")?,
            "data.train_size" => self.data.train_size = num(key, v, "a count")?,
            "data.test_size" => self.data.test_size = num(key, v, "a count")?,
            "data.stratified" => self.data.stratified = boolean(key, v)?,
            "data.center" => self.data.center = boolean(key, v)?,
            "data.dir" => self.data.dir = v.to_string(),
            "data.cache" => self.data.cache = boolean(key, v)?,
            "model.hidden" => self.model.hidden = list(key, v, "comma-separated widths")?,
            "model.activation" => {
                self.model.activation = Activation::parse(v).map_err(|_| parse_err(key, v, "gelu, relu, tanh or identity"))?
            }
            "model.init" => {
                let std = match self.model.init {
                    Init::Gaussian { std } => std,
                    _ => 0.01,
                };
                self.model.init = match v {
                    "fan-in" => Init::FanIn,
                    "uniform-fan-in" => Init::UniformFanIn,
                    "gaussian" => Init::Gaussian { std },
                    _ => return Err(parse_err(key, v, "fan-in, uniform-fan-in or gaussian")),
                }
            }
            "model.init_std" => {
                let std = num(key, v, "a number")?;
                self.model.init = Init::Gaussian { std };
            }
            "train.epochs" => self.train.epochs = num(key, v, "a count")?,
            "train.batch_size" => self.train.batch_size = num(key, v, "a count (0 = full batch)")?,
            "train.lr" => self.train.lr = num(key, v, "a number")?,
            "train.momentum" => self.train.momentum = num(key, v, "a number")?,
            "train.weight_decay" => self.train.weight_decay = num(key, v, "a number")?,
            "train.track_samples" => self.train.track_samples = list(key, v, "comma-separated indices")?,
            "train.eval_every" => self.train.eval_every = num(key, v, "a count")?,
            "train.checkpoint_every" => self.train.checkpoint_every = num(key, v, "a count")?,
            "reg.modes" => {
                self.reg.modes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| RegMode::parse(s).map_err(|_| parse_err(key, s, "none, ll-spectral or rep-spectral")))
                    .collect::<CliResult<_>>()?
            }
            "reg.gamma" => self.reg.gamma = num(key, v, "a number")?,
            "reg.burn_in_fraction" => self.reg.burn_in_fraction = num(key, v, "a fraction")?,
            "reg.burn_in_epoch" => self.reg.burn_in_epoch = Some(num(key, v, "an epoch")?),
            "reg.refresh_period" => self.reg.refresh_period = num(key, v, "a count")?,
            "reg.iters_per_refresh" => self.reg.iters_per_refresh = num(key, v, "a count")?,
            "attack.samples" => self.attack.samples = num(key, v, "a count")?,
            "attack.split" => {
                self.attack.split_test = match v {
                    "test" => true,
                    "train" => false,
                    _ => return Err(parse_err(key, v, "test or train")),
                }
            }
            "attack.head" => {
                self.attack.head = match v {
                    "trained" => Head::Trained,
                    "retrained" => Head::Retrained,
                    _ => return Err(parse_err(key, v, "trained or retrained")),
                }
            }
            "attack.seed" => self.attack.seed = num(key, v, "an integer")?,
            "attack.iterations" => self.attack.params.iterations = num(key, v, "a count")?,
            "attack.init_draws" => self.attack.params.init_draws = num(key, v, "a count")?,
            "attack.input_range" => self.attack.params.input_range = num(key, v, "a number")?,
            "attack.init_std" => {
                self.attack.params.init_std = if v == "auto" { None } else { Some(num(key, v, "a number or auto")?) }
            }
            "attack.normal_probes" => self.attack.params.normal_probes = num(key, v, "a count")?,
            "attack.probe_radius_factor" => self.attack.params.probe_radius_factor = num(key, v, "a number")?,
            "attack.hemisphere_factor" => self.attack.params.hemisphere_factor = num(key, v, "a number")?,
            "attack.max_halvings" => self.attack.params.max_halvings = num(key, v, "a count")?,
            "attack.bisect_tol" => self.attack.params.bisect_tol = num(key, v, "a number")?,
            "attack.thresholds" => self.attack.thresholds = list(key, v, "comma-separated numbers")?,
            "attack.brute_force_rays" => self.attack.brute_force_rays = num(key, v, "a count")?,
            "geometry.rect" => {
                let r: Vec<f64> = list(key, v, "x0,x1,y0,y1")?;
                self.geometry.rect = r.try_into().map_err(|_| parse_err(key, v, "four numbers x0,x1,y0,y1"))?;
            }
            "geometry.resolution" => self.geometry.resolution = num(key, v, "a count")?,
            "geometry.ball_radius" => self.geometry.ball_radius = num(key, v, "a number")?,
            "geometry.ball_samples" => self.geometry.ball_samples = num(key, v, "a count")?,
            "readout.l2" => self.readout.l2 = num(key, v, "a number")?,
            "readout.tol" => self.readout.tol = num(key, v, "a number")?,
            "readout.max_iters" => self.readout.max_iters = num(key, v, "a count")?,
            "readout.memory" => self.readout.memory = num(key, v, "a count")?,
            "etf.classes" => self.etf.classes = num(key, v, "a count")?,
            "etf.dim" => self.etf.dim = num(key, v, "a count")?,
            "etf.init_std" => self.etf.init_std = list(key, v, "comma-separated numbers")?,
            "etf.lr" => self.etf.lr = num(key, v, "a number")?,
            "etf.steps" => self.etf.steps = num(key, v, "a count")?,
            "etf.seed" => self.etf.seed = num(key, v, "an integer")?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "run.seeds" => self.seeds = list(key, v, "comma-separated seeds")?,
            "run.workers" => self.workers = num(key, v, "a count")?,
            _ => return Err(CliError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("run.seeds is empty".into());
        }
        if self.reg.modes.is_empty() {
            return bad("reg.modes is empty".into());
        }
        if self.model.hidden.contains(&0) {
            return bad("model.hidden widths must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.reg.burn_in_fraction) {
            return bad(format!("reg.burn_in_fraction = {} is outside [0, 1]", self.reg.burn_in_fraction));
        }
        for mode in &self.reg.modes {
            self.train_config(0, *mode).validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.attack.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let [x0, x1, y0, y1] = self.geometry.rect;
        if !(x0 < x1 && y0 < y1) || self.geometry.resolution == 0 {
            return bad("geometry.rect must satisfy x0 < x1, y0 < y1 with positive resolution".into());
        }
        if self.etf.classes < 2 || self.etf.dim + 1 < self.etf.classes {
            return bad(format!("etf needs 2 ≤ classes ≤ dim + 1, got {} in {}", self.etf.classes, self.etf.dim));
        }
        Ok(())
    }

    pub fn burn_in_epoch(&self) -> usize {
        self.reg
            .burn_in_epoch
            .unwrap_or_else(|| (self.reg.burn_in_fraction * self.train.epochs as f64).round() as usize)
    }

    pub fn reg_config(&self, mode: RegMode) -> RegConfig {
        RegConfig {
            mode,
            gamma: if mode == RegMode::None { 0.0 } else { self.reg.gamma },
            burn_in_epoch: self.burn_in_epoch(),
            refresh_period: self.reg.refresh_period,
            iters_per_refresh: self.reg.iters_per_refresh,
        }
    }

    pub fn train_config(&self, seed: u64, mode: RegMode) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            seed,
            reg: self.reg_config(mode),
            track_samples: self.train.track_samples.clone(),
            eval_every: self.train.eval_every,
        }
    }

    pub fn data_dir(&self) -> CliResult<PathBuf> {
        if !self.data.dir.is_empty() {
            return Ok(PathBuf::from(&self.data.dir));
        }
        std::env::var_os("SPECGUARD_DATA_DIR")
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Config("data.dir is unset and SPECGUARD_DATA_DIR is not defined".into()))
    }

    pub fn run_dir(&self, mode: RegMode, seed: u64) -> PathBuf {
        self.output_dir.join(mode.name()).join(format!("seed-{seed}"))
    }

    /// Every key with its resolved value, in `parse`-compatible form.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let d = &self.data;
        put("data.kind", d.kind.name().into());
        put("data.points_per_cluster", d.points_per_cluster.to_string());
        put("data.noise_std", d.noise_std.to_string());
        put("data.seed", d.seed.to_string());
        put("data.train_size", d.train_size.to_string());
        put("data.test_size", d.test_size.to_string());
        put("data.stratified", d.stratified.to_string());
        put("data.center", d.center.to_string());
        put("data.dir", d.dir.clone());
        put("data.cache", d.cache.to_string());
        put("model.hidden", fmt_list(&self.model.hidden));
        put("model.activation", self.model.activation.name().into());
        match self.model.init {
            Init::FanIn => put("model.init", "fan-in".into()),
            Init::UniformFanIn => put("model.init", "uniform-fan-in".into()),
            Init::Gaussian { std } => {
                put("model.init", "gaussian".into());
                put("model.init_std", std.to_string());
            }
        }
        let t = &self.train;
        put("train.epochs", t.epochs.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.lr", t.lr.to_string());
        put("train.momentum", t.momentum.to_string());
        put("train.weight_decay", t.weight_decay.to_string());
        put("train.track_samples", fmt_list(&t.track_samples));
        put("train.eval_every", t.eval_every.to_string());
        put("train.checkpoint_every", t.checkpoint_every.to_string());
        let r = &self.reg;
        put("reg.modes", r.modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(","));
        put("reg.gamma", r.gamma.to_string());
        put("reg.burn_in_fraction", r.burn_in_fraction.to_string());
        if let Some(e) = r.burn_in_epoch {
            put("reg.burn_in_epoch", e.to_string());
        }
        put("reg.refresh_period", r.refresh_period.to_string());
        put("reg.iters_per_refresh", r.iters_per_refresh.to_string());
        let a = &self.attack;
        put("attack.samples", a.samples.to_string());
        put("attack.split", if a.split_test { "test" } else { "train" }.into());
        put("attack.head", if a.head == Head::Trained { "trained" } else { "retrained" }.into());
        put("attack.seed", a.seed.to_string());
        put("attack.iterations", a.params.iterations.to_string());
        put("attack.init_draws", a.params.init_draws.to_string());
        put("attack.input_range", a.params.input_range.to_string());
        put("attack.init_std", a.params.init_std.map_or("auto".into(), |v| v.to_string()));
        put("attack.normal_probes", a.params.normal_probes.to_string());
        put("attack.probe_radius_factor", a.params.probe_radius_factor.to_string());
        put("attack.hemisphere_factor", a.params.hemisphere_factor.to_string());
        put("attack.max_halvings", a.params.max_halvings.to_string());
        put("attack.bisect_tol", a.params.bisect_tol.to_string());
        put("attack.thresholds", fmt_list(&a.thresholds));
        put("attack.brute_force_rays", a.brute_force_rays.to_string());
        let g = &self.geometry;
        put("geometry.rect", fmt_list(&g.rect));
        put("geometry.resolution", g.resolution.to_string());
        put("geometry.ball_radius", g.ball_radius.to_string());
        put("geometry.ball_samples", g.ball_samples.to_string());
        put("readout.l2", self.readout.l2.to_string());
        put("readout.tol", self.readout.tol.to_string());
        put("readout.max_iters", self.readout.max_iters.to_string());
        put("readout.memory", self.readout.memory.to_string());
        let e = &self.etf;
        put("etf.classes", e.classes.to_string());
        put("etf.dim", e.dim.to_string());
        put("etf.init_std", fmt_list(&e.init_std));
        put("etf.lr", e.lr.to_string());
        put("etf.steps", e.steps.to_string());
        put("etf.seed", e.seed.to_string());
        put("output.dir", self.output_dir.display().to_string());
        put("run.seeds", fmt_list(&self.seeds));
        put("run.workers", self.workers.to_string());
        s
    }

    pub fn write_echo(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.ini"), self.echo())?;
        Ok(())
    }
}
