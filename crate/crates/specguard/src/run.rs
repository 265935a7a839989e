//! Subcommand implementations. Every (mode, seed) run owns `output.dir/<mode>/seed-<n>/`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use specguard_core::attack::{
    brute_force_distance, robustness_report, tangent_attack, BruteForceOptions, Directions, NetOracle, RobustnessStats,
};
use specguard_core::data::{subset_sample, xor_dataset, Dataset};
use specguard_core::etf::{lastlayer_gd, lastlayer_grad, make_simplex_etf, theta_x_analytic};
use specguard_core::geometry::{certified_bound_all, feature_lipschitz, geometry_report, theta_from_features, volume_element_grid};
use specguard_core::network::{DenseLayer, Net};
use specguard_core::numerics::{cosine, Matrix, Rng};
use specguard_core::regularize::RegMode;
use specguard_core::train::{accuracy, retrain_net_readout, Trainer};

use crate::config::{DataKind, ExperimentConfig, Head};
use crate::error::{CliError, CliResult};
use crate::io::{self, AttackRow, Checkpoint, Table};
use crate::plot::{self, Series};

const TEST_STREAM: u64 = 0x7e57;
const GEOMETRY_STREAM: u64 = 0x6e0;

pub struct Data {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

fn cache_name(cfg: &ExperimentConfig, split: &str, size: usize) -> String {
    let d = &cfg.data;
    format!("mnist-{split}-n{size}-s{}-{}{}.sgdc", d.seed, if d.stratified { "strat" } else { "rand" }, if d.center { "-centered" } else { "" })
}

fn mnist_split(cfg: &ExperimentConfig, test: bool) -> CliResult<Dataset> {
    let size = if test { cfg.data.test_size } else { cfg.data.train_size };
    let split = if test { "test" } else { "train" };
    let cache = cfg.output_dir.join("cache").join(cache_name(cfg, split, size));
    if cfg.data.cache && cache.exists() {
        return io::read_dataset_cache(&cache);
    }
    let full = io::load_mnist_split(&cfg.data_dir()?, test)?;
    let mut rng = Rng::new(cfg.data.seed).fork(if test { TEST_STREAM } else { 0 });
    let ds = if size == 0 || size >= full.len() { full } else { subset_sample(&full, size, cfg.data.stratified, &mut rng)? };
    if cfg.data.cache {
        io::write_dataset_cache(&ds, &cache)?;
    }
    Ok(ds)
}

pub fn load_data(cfg: &ExperimentConfig) -> CliResult<Data> {
    match cfg.data.kind {
        DataKind::Xor => Ok(Data { train: xor_dataset(false, 1, 0.0, &mut Rng::new(cfg.data.seed))?, test: None }),
        DataKind::XorNoisy => {
            let mut rng = Rng::new(cfg.data.seed);
            let train = xor_dataset(true, cfg.data.points_per_cluster, cfg.data.noise_std, &mut rng)?;
            let test = xor_dataset(true, cfg.data.points_per_cluster, cfg.data.noise_std, &mut rng.fork(TEST_STREAM))?;
            Ok(Data { train, test: Some(test) })
        }
        DataKind::Mnist => {
            let mut train = mnist_split(cfg, false)?;
            let mut test = mnist_split(cfg, true)?;
            if cfg.data.center {
                let mean = train.feature_mean();
                train.center(&mean)?;
                test.center(&mean)?;
            }
            Ok(Data { train, test: Some(test) })
        }
    }
}

pub fn build_net(cfg: &ExperimentConfig, data: &Data, seed: u64) -> CliResult<Net> {
    let mut sizes = vec![data.train.dim()];
    sizes.extend(&cfg.model.hidden);
    sizes.push(data.train.classes);
    Ok(Net::mlp(&sizes, cfg.model.activation, cfg.model.init, &mut Rng::new(seed))?)
}

fn grid(cfg: &ExperimentConfig) -> Vec<(RegMode, u64)> {
    cfg.reg.modes.iter().flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s))).collect()
}

fn fan_out<T: Send>(cfg: &ExperimentConfig, job: impl Fn(RegMode, u64) -> CliResult<T> + Sync + Send) -> CliResult<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| CliError::Other(e.to_string()))?;
    pool.install(|| grid(cfg).into_par_iter().map(|(m, s)| job(m, s)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: RegMode,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub sigma: Vec<(String, f64)>,
}

/// Trains one run, resuming from its checkpoint when asked and present.
pub fn train_run(cfg: &ExperimentConfig, data: &Data, mode: RegMode, seed: u64, resume: bool) -> CliResult<TrainSummary> {
    let dir = cfg.run_dir(mode, seed);
    let tcfg = cfg.train_config(seed, mode);
    let mut trainer = if resume && io::checkpoint_path(&dir).exists() {
        let ckpt = io::load_checkpoint(&dir)?;
        if ckpt.mode != mode || ckpt.seed != seed || ckpt.trainer.cfg != tcfg {
            return Err(CliError::Config(format!("{}: checkpoint was written with a different configuration", dir.display())));
        }
        ckpt.trainer
    } else {
        Trainer::new(build_net(cfg, data, seed)?, tcfg, &data.train)?
    };
    let every = if cfg.train.checkpoint_every == 0 { cfg.train.epochs.max(1) } else { cfg.train.checkpoint_every };
    while !trainer.is_done() {
        let next = (trainer.epoch / every + 1) * every;
        trainer.run_until(&data.train, data.test.as_ref(), next)?;
        io::save_checkpoint(&dir, &Checkpoint { version: io::CHECKPOINT_VERSION, mode, seed, trainer: trainer.clone() })?;
    }
    if !io::checkpoint_path(&dir).exists() {
        io::save_checkpoint(&dir, &Checkpoint { version: io::CHECKPOINT_VERSION, mode, seed, trainer: trainer.clone() })?;
    }
    io::write_trainlog_csv(&dir.join("trainlog.csv"), &trainer.log)?;
    let last = trainer.log.records.last();
    let test_acc = match &data.test {
        Some(t) => Some(accuracy(&trainer.net, t)?),
        None => None,
    };
    let sigma = trainer
        .log
        .layers
        .iter()
        .zip(last.map_or(&trainer.log.initial_sigma2, |r| &r.sigma2))
        .map(|(l, s2)| (io::layer_name(*l), s2.sqrt()))
        .collect();
    let summary = TrainSummary {
        mode,
        seed,
        epochs: trainer.epoch,
        final_loss: last.map_or(f64::NAN, |r| r.loss),
        train_acc: accuracy(&trainer.net, &data.train)?,
        test_acc,
        sigma,
    };
    io::write_json(&dir.join("train_summary.json"), &summary)?;
    Ok(summary)
}

pub fn cmd_train(cfg: &ExperimentConfig, resume: bool) -> CliResult<Vec<TrainSummary>> {
    cfg.write_echo(&cfg.output_dir)?;
    let data = load_data(cfg)?;
    fan_out(cfg, |m, s| train_run(cfg, &data, m, s, resume))
}

fn load_net(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Net> {
    let mut net = io::load_checkpoint(dir)?.trainer.net;
    if cfg.attack.head == Head::Retrained {
        let path = io::readout_path(dir);
        if !path.exists() {
            return Err(CliError::Config(format!("{} is missing; run retrain-readout first", path.display())));
        }
        net.readout = io::load_readout(dir)?.readout;
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub mode: RegMode,
    pub seed: u64,
    pub head: String,
    /// Unit of the input scale the distances are measured in.
    pub unit: String,
    pub accuracy: f64,
    pub stats: RobustnessStats,
    pub mean_queries: f64,
    pub certificate_violations: usize,
}

/// First `n` correctly classified indices of `ds` (`n = 0` keeps all).
pub fn correct_indices(net: &Net, ds: &Dataset, n: usize) -> CliResult<Vec<usize>> {
    let preds = net.predict_batch(&ds.inputs)?;
    let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| preds[i] == ds.labels[i]).collect();
    if n > 0 {
        idx.truncate(n);
    }
    Ok(idx)
}

pub fn attack_rows(cfg: &ExperimentConfig, net: &Net, ds: &Dataset) -> CliResult<Vec<AttackRow>> {
    let lipschitz = feature_lipschitz(net)?;
    let idx = correct_indices(net, ds, cfg.attack.samples)?;
    idx.par_iter()
        .map(|&i| {
            let oracle = NetOracle::new(net);
            let (x, y) = (ds.sample(i), ds.labels[i]);
            let mut rng = Rng::new(cfg.attack.seed).fork(i as u64);
            let res = tangent_attack(&oracle, x, y, &cfg.attack.params, &mut rng)?;
            let brute_force = if cfg.attack.brute_force_rays > 0 && ds.dim() == 2 {
                let bf = NetOracle::new(net);
                brute_force_distance(&bf, x, y, &Directions::Circle(cfg.attack.brute_force_rays), &BruteForceOptions::default())?
            } else {
                None
            };
            Ok(AttackRow {
                sample: i,
                label: y,
                adv_label: res.adv_label,
                delta: res.delta,
                queries: res.queries,
                bound_certified: certified_bound_all(net, x, y, lipschitz)?,
                brute_force,
            })
        })
        .collect()
}

pub fn attack_run(cfg: &ExperimentConfig, data: &Data, mode: RegMode, seed: u64) -> CliResult<AttackSummary> {
    let dir = cfg.run_dir(mode, seed);
    let net = load_net(cfg, &dir)?;
    let ds = if cfg.attack.split_test { data.test.as_ref().unwrap_or(&data.train) } else { &data.train };
    let rows = attack_rows(cfg, &net, ds)?;
    let head = if cfg.attack.head == Head::Trained { "trained" } else { "retrained" };
    io::write_attack_csv(&dir.join(format!("attack-{head}.csv")), &rows)?;
    if rows.is_empty() {
        return Err(CliError::Other(format!("{}: no correctly classified samples to attack", dir.display())));
    }
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let summary = AttackSummary {
        mode,
        seed,
        head: head.into(),
        unit: ds.normalization.unit.clone(),
        accuracy: accuracy(&net, ds)?,
        stats: robustness_report(&deltas, &cfg.attack.thresholds)?,
        mean_queries: rows.iter().map(|r| r.queries as f64).sum::<f64>() / rows.len() as f64,
        certificate_violations: rows.iter().filter(|r| r.brute_force.is_some_and(|b| b < r.bound_certified)).count(),
    };
    io::write_json(&dir.join(format!("attack-{head}.json")), &summary)?;
    Ok(summary)
}

pub fn cmd_attack(cfg: &ExperimentConfig) -> CliResult<Vec<AttackSummary>> {
    cfg.write_echo(&cfg.output_dir)?;
    let data = load_data(cfg)?;
    let out = fan_out(cfg, |m, s| attack_run(cfg, &data, m, s))?;
    cmd_report(cfg)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutSummary {
    pub mode: RegMode,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

pub fn retrain_run(cfg: &ExperimentConfig, data: &Data, mode: RegMode, seed: u64) -> CliResult<ReadoutSummary> {
    let dir = cfg.run_dir(mode, seed);
    let net = io::load_checkpoint(&dir)?.trainer.net;
    let (fresh, fit) = retrain_net_readout(&net, &data.train, &cfg.readout)?;
    io::save_readout(&dir, &fit)?;
    let summary = ReadoutSummary {
        mode,
        seed,
        iterations: fit.iterations,
        converged: fit.converged,
        objective: fit.objective,
        train_acc: accuracy(&fresh, &data.train)?,
        test_acc: data.test.as_ref().map(|t| accuracy(&fresh, t)).transpose()?,
    };
    io::write_json(&dir.join("readout_summary.json"), &summary)?;
    Ok(summary)
}

pub fn cmd_retrain_readout(cfg: &ExperimentConfig) -> CliResult<Vec<ReadoutSummary>> {
    cfg.write_echo(&cfg.output_dir)?;
    let data = load_data(cfg)?;
    fan_out(cfg, |m, s| retrain_run(cfg, &data, m, s))
}

pub fn geometry_run(cfg: &ExperimentConfig, data: &Data, mode: RegMode, seed: u64) -> CliResult<PathBuf> {
    let dir = cfg.run_dir(mode, seed);
    let net = load_net(cfg, &dir)?;
    let ds = &data.train;
    let ball = (cfg.geometry.ball_radius > 0.0).then_some((cfg.geometry.ball_radius, cfg.geometry.ball_samples));
    let mut header: Vec<String> = ["sample", "class", "k", "theta_x", "feat_norm", "lambda_max_g", "bound_local", "bound_ball", "bound_certified"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for i in correct_indices(&net, ds, cfg.attack.samples)? {
        let mut rng = Rng::new(seed).fork(GEOMETRY_STREAM + i as u64);
        let r = geometry_report(&net, ds.sample(i), ds.labels[i], ball, &mut rng)?;
        rows.push(vec![
            i as f64,
            r.class as f64,
            r.k as f64,
            r.theta_x,
            r.feat_norm,
            r.lambda_max_g,
            r.bound_local,
            r.bound_ball.unwrap_or(f64::NAN),
            r.bound_certified,
        ]);
    }
    io::write_table(&dir.join("geometry.csv"), &Table { header: header.clone(), rows })?;
    if net.input_dim == 2 {
        let res = cfg.geometry.resolution;
        let vol = volume_element_grid(&net, cfg.geometry.rect, (res, res))?;
        header = (0..vol.cols).map(|j| format!("col{j}")).collect();
        let rows = (0..vol.rows).map(|r| vol.row(r).to_vec()).collect();
        let csv = dir.join("volume.csv");
        io::write_table(&csv, &Table { header, rows })?;
        plot_volume(&csv, cfg.geometry.rect, &dir.join("volume.svg"), &format!("√det g, {} seed {seed}", mode.name()))?;
    }
    Ok(dir)
}

pub fn plot_volume(csv: &Path, rect: [f64; 4], svg: &Path, title: &str) -> CliResult<()> {
    let t = io::read_table(csv)?;
    std::fs::write(svg, plot::heatmap(title, rect, &t.rows))?;
    Ok(())
}

pub fn cmd_geometry(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    cfg.write_echo(&cfg.output_dir)?;
    let data = load_data(cfg)?;
    fan_out(cfg, |m, s| geometry_run(cfg, &data, m, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtfSummary {
    pub init_std: f64,
    pub final_cosines: Vec<f64>,
    pub min_final_cosine: f64,
    /// Empirical `θ_x` per class against its first runner-up class.
    pub theta_empirical: Vec<f64>,
    pub theta_analytic: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtfReport {
    pub runs: Vec<EtfSummary>,
    /// `min_k cos(−∂L/∂W_k, z_k)` at a `std = 1e-6` head.
    pub first_step_alignment: f64,
}

pub fn cmd_etf(cfg: &ExperimentConfig) -> CliResult<EtfReport> {
    cfg.write_echo(&cfg.output_dir)?;
    let e = &cfg.etf;
    let dir = cfg.output_dir.join("etf");
    std::fs::create_dir_all(&dir)?;
    let frame = make_simplex_etf(e.classes, e.dim)?;
    let mut runs = Vec::new();
    let mut csvs = Vec::new();
    for (i, &std) in e.init_std.iter().enumerate() {
        let traj = lastlayer_gd(&frame, std, e.lr, e.steps, &mut Rng::new(e.seed).fork(i as u64))?;
        let mut header = vec!["step".to_string()];
        header.extend((0..e.classes).map(|k| format!("cos_{k}")));
        header.extend((0..e.classes).map(|k| format!("norm_{k}")));
        let rows = traj
            .cosines
            .iter()
            .zip(&traj.norms)
            .enumerate()
            .map(|(s, (c, n))| std::iter::once(s as f64).chain(c.iter().copied()).chain(n.iter().copied()).collect())
            .collect();
        let csv = dir.join(format!("trajectory-{i}.csv"));
        io::write_table(&csv, &Table { header, rows })?;
        csvs.push((format!("std {std}"), csv));
        let net = Net::new(e.dim, Vec::new(), DenseLayer::new(traj.w.clone(), None)?)?;
        let theta_empirical = (0..e.classes)
            .map(|c| {
                let k = (c + 1) % e.classes;
                Ok(theta_from_features(&net, frame.vector(c), c, k)?)
            })
            .collect::<CliResult<Vec<_>>>()?;
        let final_cosines = traj.cosines.last().cloned().unwrap_or_default();
        runs.push(EtfSummary {
            init_std: std,
            min_final_cosine: final_cosines.iter().copied().fold(f64::INFINITY, f64::min),
            final_cosines,
            theta_empirical,
            theta_analytic: theta_x_analytic(&frame, 0, 1)?,
            diverged: traj.diverged,
        });
    }
    let w = Matrix { rows: e.classes, cols: e.dim, data: Rng::new(e.seed).normal_vec(e.classes * e.dim, 0.0, 1e-6) };
    let g = lastlayer_grad(&w, &frame)?;
    let first_step_alignment = (0..e.classes)
        .map(|k| {
            let neg: Vec<f64> = g.row(k).iter().map(|v| -v).collect();
            cosine(&neg, frame.vector(k))
        })
        .fold(f64::INFINITY, f64::min);
    let report = EtfReport { runs, first_step_alignment };
    io::write_json(&dir.join("summary.json"), &report)?;
    plot_alignment(&csvs, e.classes, &dir.join("alignment.svg"))?;
    Ok(report)
}

pub fn plot_alignment(csvs: &[(String, PathBuf)], classes: usize, svg: &Path) -> CliResult<()> {
    let mut series = Vec::new();
    for (name, csv) in csvs {
        let t = io::read_table(csv)?;
        let steps = t.column("step").unwrap_or_default();
        for k in 0..classes {
            let c = t.column(&format!("cos_{k}")).unwrap_or_default();
            series.push(Series { name: format!("{name}, k={k}"), points: steps.iter().copied().zip(c).collect() });
        }
    }
    std::fs::write(svg, plot::line_chart("Alignment of W_k with z_k", "step", "cos(W_k, z_k)", &series))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: RegMode,
    pub head: String,
    pub seeds: Vec<u64>,
    pub per_seed_mean: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Aggregates attack CSVs across seeds and redraws every plot from the CSVs on disk.
pub fn cmd_report(cfg: &ExperimentConfig) -> CliResult<Vec<ModeAggregate>> {
    let out = cfg.output_dir.join("report");
    std::fs::create_dir_all(&out)?;
    let mut aggregates = Vec::new();
    for head in ["trained", "retrained"] {
        let mut groups = Vec::new();
        let mut curves = Vec::new();
        for &mode in &cfg.reg.modes {
            let mut seeds = Vec::new();
            let mut means = Vec::new();
            let mut all = Vec::new();
            for &seed in &cfg.seeds {
                let csv = cfg.run_dir(mode, seed).join(format!("attack-{head}.csv"));
                if !csv.exists() {
                    continue;
                }
                let d: Vec<f64> = io::read_attack_csv(&csv)?.iter().map(|r| r.delta).collect();
                if d.is_empty() {
                    continue;
                }
                seeds.push(seed);
                means.push(d.iter().sum::<f64>() / d.len() as f64);
                all.extend(d);
            }
            if seeds.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&means);
            groups.push((mode.name().to_string(), means.clone()));
            let stats = robustness_report(&all, &cfg.attack.thresholds)?;
            curves.push(Series { name: mode.name().into(), points: stats.proportions });
            aggregates.push(ModeAggregate { mode, head: head.into(), seeds, per_seed_mean: means, mean, std });
        }
        if !groups.is_empty() {
            std::fs::write(out.join(format!("delta-{head}.svg")), plot::box_plot(&format!("Mean Δ per seed ({head} head)"), "mean Δ", &groups))?;
            std::fs::write(
                out.join(format!("threshold-{head}.svg")),
                plot::line_chart(&format!("Fraction of samples with Δ ≥ τ ({head} head)"), "τ", "fraction", &curves),
            )?;
        }
    }
    for &seed in cfg.seeds.iter().take(1) {
        let mut by_layer: Vec<(String, Vec<Series>)> = Vec::new();
        for &mode in &cfg.reg.modes {
            let csv = cfg.run_dir(mode, seed).join("trainlog.csv");
            if !csv.exists() {
                continue;
            }
            let t = io::read_table(&csv)?;
            let epochs = t.column("epoch").unwrap_or_default();
            for h in t.header.iter().filter(|h| h.starts_with("sigma2_")) {
                let s: Vec<(f64, f64)> = epochs.iter().copied().zip(t.column(h).unwrap_or_default().into_iter().map(f64::sqrt)).collect();
                let name = h.trim_start_matches("sigma2_").to_string();
                match by_layer.iter_mut().find(|(n, _)| *n == name) {
                    Some((_, v)) => v.push(Series { name: mode.name().into(), points: s }),
                    None => by_layer.push((name, vec![Series { name: mode.name().into(), points: s }])),
                }
            }
        }
        for (layer, series) in by_layer {
            std::fs::write(out.join(format!("sigma-{layer}.svg")), plot::line_chart(&format!("σ_max of {layer}, seed {seed}"), "epoch", "σ_max", &series))?;
        }
    }
    io::write_json(&out.join("report.json"), &aggregates)?;
    Ok(aggregates)
}
