//! Acceptance run: one PASS/FAIL line per criterion, each at full strength.
//!
//! Known failures listed in `DOCUMENTED` print as such; every other criterion
//! must pass, and the documented ones must not regress past their analysed state.

use std::path::Path;
use std::time::{Duration, Instant};

use specguard::config::ExperimentConfig;
use specguard::io;
use specguard::run;
use specguard_core::attack::{brute_force_distance, DecisionOracle, tangent_attack, AttackConfig, BruteForceOptions, Directions, LinearOracle, NetOracle};
use specguard_core::geometry::{certified_bound_all, feature_lipschitz, metric_tensor};
use specguard_core::network::*;
use specguard_core::numerics::{singular_values, svd_top, Matrix, Rng};
use specguard_core::regularize::*;
use specguard_core::spectral::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e <= limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn conv_spectrum() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (co, ci, k) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
        let n = [4, 6, 8][rng.below(3)];
        let spec = ConvSpec::new(co, ci, k, 1 + rng.below(2), n, n).unwrap();
        let kern = rng.normal_vec(spec.kernel_len(), 0.0, 1.0);
        let fast = conv_top_sigma2(&kern, &spec).unwrap();
        let exact = svd_top(&conv_linearize(&kern, &spec).unwrap()).unwrap().sigma.powi(2);
        worst = worst.max(rel_diff(fast, exact));
    }
    let (ok_t, time) = within(t, Duration::from_secs(60));
    outcome(worst <= 1e-8 && ok_t, format!("200 kernels, worst rel {worst:.2e}, {time}"))
}

fn gapped_matrix(rng: &mut Rng) -> (Matrix, f64) {
    loop {
        let mut w = Matrix { rows: 64, cols: 64, data: rng.normal_vec(64 * 64, 0.0, 1.0 / 8.0) };
        let (u, v) = (rng.unit_vector(64), rng.unit_vector(64));
        let a = 2.0 + 3.0 * rng.uniform();
        for (row, ur) in w.data.chunks_mut(64).zip(&u) {
            for (e, vc) in row.iter_mut().zip(&v) {
                *e += a * ur * vc;
            }
        }
        let mut s = singular_values(&w).unwrap();
        s.sort_by(|a, b| b.total_cmp(a));
        let (s0, s1) = (s[0], s[1]);
        if (s0 - s1) / s0 >= 0.1 {
            return (w, s0 * s0);
        }
    }
}

fn power_iteration() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(2);
    let (mut cold, mut warm) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let (w, exact) = gapped_matrix(&mut rng);
        let tr = power_iter_sigma2(&w, &random_start(&mut rng, 64), 200).unwrap();
        cold = cold.max(rel_diff(tr.sigma2, exact));
        let mut dw = Matrix { rows: 64, cols: 64, data: rng.normal_vec(64 * 64, 0.0, 1.0) };
        let scale = 1e-3 * exact.sqrt() / svd_top(&dw).unwrap().sigma;
        dw = dw.scaled(scale);
        let moved = Matrix { rows: 64, cols: 64, data: w.data.iter().zip(&dw.data).map(|(a, b)| a + b).collect() };
        let exact2 = svd_top(&moved).unwrap().sigma.powi(2);
        let re = power_iter_sigma2(&moved, &tr.v, 3).unwrap();
        warm = warm.max(rel_diff(re.sigma2, exact2));
    }
    let (ok_t, time) = within(t, Duration::from_secs(10));
    outcome(cold <= 1e-6 && warm <= 1e-6 && ok_t, format!("20 matrices: 200 iters worst {cold:.2e}, 3-iter warm start worst {warm:.2e}, {time}"))
}

const H: f64 = 1e-4;

fn central(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Largest `|a − n| / max(|a|, |n|, ‖a‖∞)` over entries.
fn worst_rel(a: &[f64], n: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(n).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(scale).max(1e-300)).fold(0.0, f64::max)
}

fn dense_of(op: &dyn LinearOperator) -> Matrix {
    let (m, n) = (op.output_dim(), op.input_dim());
    let mut out = Matrix::zeros(m, n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        for (r, v) in op.apply(&e).into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    out
}

fn conv_mlp(rng: &mut Rng) -> Net {
    let spec = ConvSpec::new(2, 1, 3, 2, 4, 4).unwrap();
    let conv = init_conv(spec, Init::Gaussian { std: 0.4 }, rng).unwrap();
    let dense = DenseLayer::new(Matrix { rows: 4, cols: 8, data: rng.normal_vec(32, 0.0, 0.4) }, Some(rng.normal_vec(4, 0.0, 0.1))).unwrap();
    let readout = DenseLayer::new(Matrix { rows: 3, cols: 4, data: rng.normal_vec(12, 0.0, 0.5) }, Some(rng.normal_vec(3, 0.0, 0.1))).unwrap();
    let act = Activation::Gelu;
    Net::new(16, vec![Layer::Conv(conv), Layer::Activation { activation: act }, Layer::Dense(dense), Layer::Activation { activation: act }], readout).unwrap()
}

fn gradient_checks() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(3);
    let mut worst = [0.0f64; 4];
    for &(r, c) in &[(3, 5), (6, 4), (8, 8)] {
        let w = Matrix { rows: r, cols: c, data: rng.normal_vec(r * c, 0.0, 1.0) };
        let g = sigma2_grad(&w, &exact_triple(&w).unwrap()).unwrap();
        let fd = central(&w.data, |p| svd_top(&Matrix { rows: r, cols: c, data: p.to_vec() }).unwrap().sigma.powi(2));
        worst[0] = worst[0].max(worst_rel(&g.data, &fd));
    }
    for &(co, ci, k, s, n) in &[(2, 2, 3, 1, 4), (1, 3, 2, 2, 6), (3, 1, 3, 2, 4)] {
        let spec = ConvSpec::new(co, ci, k, s, n, n).unwrap();
        let kern = rng.normal_vec(spec.kernel_len(), 0.0, 1.0);
        let g = conv_sigma2_grad(&spec, &conv_power_triple(&kern, &spec, &mut rng, 3000).unwrap()).unwrap();
        let fd = central(&kern, |p| svd_top(&conv_linearize(p, &spec).unwrap()).unwrap().sigma.powi(2));
        worst[1] = worst[1].max(worst_rel(&g, &fd));
    }
    let nets = [conv_mlp(&mut rng), Net::mlp(&[3, 6, 5, 3], Activation::Tanh, Init::Gaussian { std: 0.7 }, &mut rng).unwrap()];
    for net in &nets {
        let x = Matrix { rows: 5, cols: net.input_dim, data: rng.normal_vec(5 * net.input_dim, 0.0, 1.0) };
        let labels = [0, 2, 1, 1, 0];
        let cache = net.forward_batch(&x).unwrap();
        let (_, dlogits, _) = cross_entropy(&cache.logits, &labels).unwrap();
        let (grads, _) = net.backward_full(&cache, &dlogits).unwrap();
        for (slot, g) in grads.0.iter().enumerate() {
            let mut probe = net.clone();
            let fd = central(net.params()[slot], |p| {
                probe.params_mut()[slot].copy_from_slice(p);
                cross_entropy(&probe.logits_batch(&x).unwrap(), &labels).unwrap().0
            });
            worst[2] = worst[2].max(worst_rel(g, &fd));
        }
        for mode in [RegMode::LlSpectral, RegMode::RepSpectral] {
            let cfg = RegConfig { mode, gamma: 0.3, ..RegConfig::default() };
            let mut state = SpectralState::for_config(net, &cfg, &mut rng).unwrap();
            state.converge(net, 4000).unwrap();
            let grads = penalty_grads(net, &cfg, &state).unwrap();
            for (slot, g) in grads.0.iter().enumerate() {
                let mut probe = net.clone();
                let fd = central(net.params()[slot], |p| {
                    probe.params_mut()[slot].copy_from_slice(p);
                    let sum: f64 = cfg
                        .layers(&probe)
                        .into_iter()
                        .map(|l| svd_top(&dense_of(layer_operator(&probe, l).unwrap().as_ref())).unwrap().sigma.powi(2))
                        .sum();
                    0.5 * cfg.gamma * sum
                });
                worst[3] = worst[3].max(worst_rel(g, &fd));
            }
        }
    }
    let (ok_t, time) = within(t, Duration::from_secs(60));
    outcome(
        worst.iter().all(|&w| w <= 1e-4) && ok_t,
        format!("worst rel: dense σ² {:.1e}, conv σ² {:.1e}, backprop {:.1e}, regularizers {:.1e}, {time}", worst[0], worst[1], worst[2], worst[3]),
    )
}

fn bound_chain() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(4);
    let mut violations = 0;
    let mut tightest = 0.0f64;
    for i in 0..100 {
        let act = [Activation::Tanh, Activation::Relu][i % 2];
        let depth = 1 + rng.below(3);
        let mut sizes = vec![2 + rng.below(6)];
        sizes.extend((0..depth).map(|_| 2 + rng.below(8)));
        sizes.push(2 + rng.below(4));
        let net = Net::mlp(&sizes, act, Init::Gaussian { std: 0.3 + rng.uniform() }, &mut rng).unwrap();
        let x = rng.normal_vec(sizes[0], 0.0, 1.0);
        let lam = metric_tensor(&net, &x).unwrap().lambda_max().unwrap();
        let product: f64 = (0..net.features.len())
            .filter(|&l| matches!(net.features[l], Layer::Dense(_)))
            .map(|l| layer_sigma2(&net, LayerRef::Feature(l), None, 0).unwrap().sigma2)
            .product();
        // equality cases (e.g. all ReLUs active) differ only by round-off
        if lam > product * (1.0 + 1e-12) {
            violations += 1;
        }
        tightest = tightest.max(lam / product);
    }
    let (ok_t, time) = within(t, Duration::from_secs(30));
    outcome(violations == 0 && ok_t, format!("100 nets, {violations} violations, max ratio {tightest:.15}, {time}"))
}

fn linear_certificate() -> f64 {
    let mut rng = Rng::new(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let w = Matrix { rows: 2, cols: 2, data: rng.normal_vec(4, 0.0, 1.0) };
        let b = rng.normal_vec(2, 0.0, 0.5);
        let net = Net::new(2, Vec::new(), DenseLayer::new(w.clone(), Some(b.clone())).unwrap()).unwrap();
        let x = rng.normal_vec(2, 0.0, 1.0);
        let c = net.predict(&x).unwrap();
        let k = 1 - c;
        let diff: Vec<f64> = (0..2).map(|j| w.get(c, j) - w.get(k, j)).collect();
        let margin = diff[0] * x[0] + diff[1] * x[1] + b[c] - b[k];
        let exact = margin / (diff[0].hypot(diff[1]));
        let cert = certified_bound_all(&net, &x, c, feature_lipschitz(&net).unwrap()).unwrap();
        worst = worst.max((cert - exact).abs() / exact);
    }
    worst
}

struct XorRuns {
    cfg: ExperimentConfig,
    wd: f64,
}

fn xor_runs(root: &Path, wd: f64) -> XorRuns {
    let mut cfg = ExperimentConfig::load("preset:xor-clean").unwrap();
    cfg.set("train.weight_decay", &wd.to_string()).unwrap();
    cfg.set("attack.brute_force_rays", "0").unwrap();
    cfg.output_dir = root.join(format!("xor-wd{wd}"));
    run::cmd_train(&cfg, false).unwrap();
    run::cmd_attack(&cfg).unwrap();
    XorRuns { cfg, wd }
}

fn load_net(cfg: &ExperimentConfig, mode: RegMode, seed: u64) -> Net {
    io::load_checkpoint(&cfg.run_dir(mode, seed)).unwrap().trainer.net
}

fn certificate(runs: &[XorRuns]) -> Outcome {
    let t = Instant::now();
    let (mut checked, mut violations, mut min_gap) = (0, 0, f64::INFINITY);
    for r in runs {
        let data = run::load_data(&r.cfg).unwrap();
        for &mode in &r.cfg.reg.modes {
            for &seed in &r.cfg.seeds {
                let net = load_net(&r.cfg, mode, seed);
                let lip = feature_lipschitz(&net).unwrap();
                let oracle = NetOracle::new(&net);
                for i in run::correct_indices(&net, &data.train, 0).unwrap() {
                    let (x, y) = (data.train.sample(i), data.train.labels[i]);
                    let cert = certified_bound_all(&net, x, y, lip).unwrap();
                    let bf = brute_force_distance(&oracle, x, y, &Directions::Circle(720), &BruteForceOptions::default()).unwrap();
                    let bf = bf.unwrap_or(f64::INFINITY);
                    checked += 1;
                    if bf < cert {
                        violations += 1;
                    }
                    min_gap = min_gap.min(bf - cert);
                }
            }
        }
    }
    let tight = linear_certificate();
    let (ok_t, time) = within(t, Duration::from_secs(300));
    outcome(
        violations == 0 && checked > 0 && tight <= 1e-6 && ok_t,
        format!("{checked} points, {violations} violations, min slack {min_gap:.3e}; linear tightness {tight:.1e}; {time}"),
    )
}

fn tangent_sanity() -> Outcome {
    let t = Instant::now();
    // samples and boundaries lie within a few units of the origin
    let cfg = AttackConfig { iterations: 40, input_range: 4.0, ..AttackConfig::default() };
    let mut parts = Vec::new();
    let mut pass = true;
    for dim in [2usize, 10] {
        let mut rng = Rng::new(6 + dim as u64);
        let mut hits = 0;
        for _ in 0..100 {
            let oracle = LinearOracle::new(rng.normal_vec(dim, 0.0, 1.0), 0.3 * rng.normal());
            let x = rng.normal_vec(dim, 0.0, 0.5);
            let exact = oracle.margin(&x).abs();
            if let Ok(res) = tangent_attack(&oracle, &x, oracle.label(&x), &cfg, &mut rng) {
                if (res.delta - exact).abs() <= 0.05 * exact {
                    hits += 1;
                }
            }
        }
        pass &= hits >= 95;
        parts.push(format!("R^{dim} {hits}/100"));
    }
    let (ok_t, time) = within(t, Duration::from_secs(120));
    outcome(pass && ok_t, format!("{}, {time}", parts.join(", ")))
}

fn mode_delta(cfg: &ExperimentConfig, mode: RegMode, head: &str) -> Vec<f64> {
    cfg.seeds
        .iter()
        .map(|&s| mean(&io::read_attack_csv(&cfg.run_dir(mode, s).join(format!("attack-{head}.csv"))).unwrap().iter().map(|r| r.delta).collect::<Vec<_>>()))
        .collect()
}

/// Per weight decay: (all runs 4/4, ordering holds, summary).
fn xor_ordering(r: &XorRuns) -> (bool, bool, String) {
    let mut all_fit = true;
    for &mode in &r.cfg.reg.modes {
        for &seed in &r.cfg.seeds {
            let s: run::TrainSummary = serde_json::from_slice(&std::fs::read(r.cfg.run_dir(mode, seed).join("train_summary.json")).unwrap()).unwrap();
            all_fit &= s.train_acc == 1.0;
        }
    }
    let none = mean(&mode_delta(&r.cfg, RegMode::None, "trained"));
    let ll = mean(&mode_delta(&r.cfg, RegMode::LlSpectral, "trained"));
    let rep = mean(&mode_delta(&r.cfg, RegMode::RepSpectral, "trained"));
    (all_fit, rep > ll && rep > none, format!("wd={}: none {none:.4} ll {ll:.4} rep {rep:.4}", r.wd))
}

fn xor_reproduction(runs: &[XorRuns], elapsed: Duration) -> (Outcome, bool) {
    let mut pass = true;
    let mut decayed_holds = false;
    let mut parts = Vec::new();
    for r in runs {
        let (fit, order, s) = xor_ordering(r);
        pass &= fit && order;
        if r.wd > 0.0 {
            decayed_holds = fit && order;
        }
        parts.push(format!("{s}{}", if fit { "" } else { " (not all 4/4)" }));
    }
    let ok_t = elapsed <= Duration::from_secs(1200);
    parts.push(format!("{:.0}s of 1200s", elapsed.as_secs_f64()));
    (outcome(pass && ok_t, parts.join("; ")), decayed_holds)
}

fn final_sigma(cfg: &ExperimentConfig, mode: RegMode, seed: u64, layer: &str) -> f64 {
    let t = io::read_table(&cfg.run_dir(mode, seed).join("trainlog.csv")).unwrap();
    t.column(&format!("sigma2_{layer}")).unwrap().last().unwrap().sqrt()
}

fn weight_norms(runs: &[XorRuns]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let (mut feat, mut read) = (0, 0);
        for &seed in &r.cfg.seeds {
            feat += (final_sigma(&r.cfg, RegMode::RepSpectral, seed, "f0") < final_sigma(&r.cfg, RegMode::LlSpectral, seed, "f0")) as usize;
            read += (final_sigma(&r.cfg, RegMode::LlSpectral, seed, "readout") < final_sigma(&r.cfg, RegMode::RepSpectral, seed, "readout")) as usize;
        }
        pass &= feat >= 4 && read >= 4;
        parts.push(format!("wd={}: feature rep<ll {feat}/5, readout ll<rep {read}/5", r.wd));
    }
    outcome(pass, parts.join("; "))
}

/// Returns the outcome and whether the accuracy-drop half holds.
fn mnist(root: &Path) -> (Outcome, bool) {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::load("preset:mnist-mlp").unwrap();
    cfg.output_dir = root.join("mnist");
    if let Err(e) = cfg.data_dir().and_then(|d| io::load_mnist_split(&d, true).map(|_| ())) {
        return (outcome(false, format!("MNIST files unavailable: {e}")), false);
    }
    let trained = run::cmd_train(&cfg, false).unwrap();
    run::cmd_attack(&cfg).unwrap();
    run::cmd_retrain_readout(&cfg).unwrap();
    cfg.set("attack.head", "retrained").unwrap();
    run::cmd_attack(&cfg).unwrap();
    let acc = |m: RegMode| trained.iter().find(|s| s.mode == m).unwrap().test_acc.unwrap();
    let d = |m: RegMode, h: &str| mean(&mode_delta(&cfg, m, h));
    let (none, ll, rep) = (d(RegMode::None, "trained"), d(RegMode::LlSpectral, "trained"), d(RegMode::RepSpectral, "trained"));
    let (rnone, rll, rrep) = (d(RegMode::None, "retrained"), d(RegMode::LlSpectral, "retrained"), d(RegMode::RepSpectral, "retrained"));
    let drop = acc(RegMode::None) - acc(RegMode::RepSpectral);
    let (ok_t, time) = within(t, Duration::from_secs(3600));
    let o = outcome(
        rep > none && drop <= 0.02 && rrep > rnone && rrep > rll && ok_t,
        format!(
            "trained Δ none {none:.4} ll {ll:.4} rep {rep:.4}, acc drop {:.1} pts; retrained Δ none {rnone:.4} ll {rll:.4} rep {rrep:.4}; {time}",
            100.0 * drop
        ),
    );
    (o, drop <= 0.02 && ok_t)
}

fn etf(root: &Path) -> Outcome {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::load("preset:etf-demo").unwrap();
    cfg.output_dir = root.join("etf");
    let r = run::cmd_etf(&cfg).unwrap();
    let target = 3f64.sqrt() / 2.0;
    let aligned = r.runs.iter().all(|s| s.min_final_cosine >= 0.99 && !s.diverged);
    let theta_err = r.runs.iter().flat_map(|s| s.theta_empirical.iter()).map(|th| (th - target).abs()).fold(0.0, f64::max);
    let cos: Vec<String> = r.runs.iter().map(|s| format!("std {} min cos {:.4}", s.init_std, s.min_final_cosine)).collect();
    let (ok_t, time) = within(t, Duration::from_secs(60));
    outcome(
        aligned && theta_err <= 1e-2 && r.first_step_alignment >= 0.999 && r.runs.len() == 2 && ok_t,
        format!("{}; θ err {theta_err:.1e}; first step cos {:.6}; {time}", cos.join(", "), r.first_step_alignment),
    )
}

fn expansion(root: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::load("preset:xor-clean").unwrap();
    for (k, v) in [
        ("model.hidden", "20"),
        ("model.init_std", "0.01"),
        ("train.lr", "0.1"),
        ("train.momentum", "0"),
        ("train.weight_decay", "0"),
        ("reg.modes", "none"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.output_dir = root.join("expansion");
    run::cmd_train(&cfg, false).unwrap();
    let mut good = 0;
    for &seed in &cfg.seeds {
        let log = io::load_checkpoint(&cfg.run_dir(RegMode::None, seed)).unwrap().trainer.log;
        let last = &log.records.last().unwrap().tracked;
        let grew = log.initial_tracked.iter().zip(last).all(|(a, b)| match (a.theta, b.theta) {
            (Some(t0), Some(t1)) => t1 > t0 && b.feat_norm > a.feat_norm,
            _ => false,
        });
        good += grew as usize;
    }
    outcome(good >= 4, format!("{good}/5 seeds with θ and ‖Φ‖ growing at all 4 points"))
}

fn determinism(root: &Path) -> Outcome {
    let mut bodies = Vec::new();
    for rep in 0..2 {
        let mut cfg = ExperimentConfig::load("preset:xor-noisy").unwrap();
        for (k, v) in [("train.epochs", "400"), ("train.checkpoint_every", "150"), ("attack.samples", "15"), ("attack.brute_force_rays", "0"), ("run.seeds", "3")] {
            cfg.set(k, v).unwrap();
        }
        cfg.output_dir = root.join(format!("determinism-{rep}"));
        run::cmd_train(&cfg, false).unwrap();
        run::cmd_attack(&cfg).unwrap();
        let mut files = Vec::new();
        for &mode in &cfg.reg.modes {
            for name in ["trainlog.csv", "attack-trained.csv"] {
                files.push(std::fs::read(cfg.run_dir(mode, 3).join(name)).unwrap());
            }
        }
        bodies.push(files);
    }
    let same = bodies[0] == bodies[1];
    outcome(same, format!("{} CSV pairs {}", bodies[0].len(), if same { "bit-identical" } else { "differ" }))
}

/// Criteria whose failure is analysed in the decisions ledger.
const DOCUMENTED: &[usize] = &[7, 9];

fn report(id: usize, name: &str, o: &Outcome, unexpected: &mut Vec<usize>) {
    let status = match (o.pass, DOCUMENTED.contains(&id)) {
        (true, _) => "PASS",
        (false, true) => "FAIL (documented in ledger)",
        (false, false) => "FAIL",
    };
    println!("criterion {id:>2} {name}: {status}: {}", o.detail);
    if !o.pass && !DOCUMENTED.contains(&id) {
        unexpected.push(id);
    }
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let mut unexpected = Vec::new();
    let u = &mut unexpected;
    report(1, "conv spectrum oracle", &conv_spectrum(), u);
    report(2, "power iteration", &power_iteration(), u);
    report(3, "gradient checks", &gradient_checks(), u);
    report(4, "metric bound chain", &bound_chain(), u);
    let t = Instant::now();
    let xor = [xor_runs(root, 0.0), xor_runs(root, 1e-4)];
    let xor_time = t.elapsed();
    report(5, "certificate vs brute force", &certificate(&xor), u);
    report(6, "tangent attack sanity", &tangent_sanity(), u);
    let (c7, decayed_holds) = xor_reproduction(&xor, xor_time);
    report(7, "XOR robustness ordering", &c7, u);
    report(8, "XOR weight-norm pattern", &weight_norms(&xor), u);
    let (c9, accuracy_holds) = mnist(root);
    report(9, "MNIST desk scale", &c9, u);
    report(10, "ETF alignment", &etf(root), u);
    report(11, "θ and ‖Φ‖ expansion", &expansion(root), u);
    report(12, "determinism", &determinism(root), u);

    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
    assert!(decayed_holds, "criterion 7 regressed: the weight-decayed ordering no longer holds");
    assert!(accuracy_holds, "criterion 9 regressed: regularized accuracy drop exceeds 2 points or the run overran");
}
