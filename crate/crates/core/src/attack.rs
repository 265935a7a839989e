//! Label-only adversarial search.
//!
//! [`tangent_attack`] walks a boundary point toward the clean sample: estimate
//! the boundary normal from random probes, step to the tangent point of a
//! hemisphere on the adversarial side, and bisect back toward the sample.
//! [`brute_force_distance`] scans rays in low dimension and serves as an
//! independent upper bound on the true adversarial distance.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::Net;
use crate::numerics::{axpy, dot, norm2, normalize, sub, Matrix, Rng};

/// Black-box classifier exposing labels only.
pub trait DecisionOracle {
    fn dim(&self) -> usize;
    /// Label of one input; counts one query.
    fn label(&self, x: &[f64]) -> usize;
    /// Labels of each row; counts one query per row.
    fn labels(&self, xs: &Matrix) -> Vec<usize> {
        (0..xs.rows).map(|r| self.label(xs.row(r))).collect()
    }
    fn queries(&self) -> u64;
}

/// Oracle backed by a network's argmax prediction.
pub struct NetOracle<'a> {
    net: &'a Net,
    count: AtomicU64,
}

impl<'a> NetOracle<'a> {
    pub fn new(net: &'a Net) -> Self {
        Self { net, count: AtomicU64::new(0) }
    }
}

impl DecisionOracle for NetOracle<'_> {
    fn dim(&self) -> usize {
        self.net.input_dim
    }
    fn label(&self, x: &[f64]) -> usize {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.net.predict(x).expect("oracle input has the network's dimension")
    }
    fn labels(&self, xs: &Matrix) -> Vec<usize> {
        self.count.fetch_add(xs.rows as u64, Ordering::Relaxed);
        self.net.predict_batch(xs).expect("oracle input has the network's dimension")
    }
    fn queries(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Two-class half-space oracle: label 1 iff `w·x + b > 0`.
pub struct LinearOracle {
    pub w: Vec<f64>,
    pub b: f64,
    count: AtomicU64,
}

impl LinearOracle {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        Self { w, b, count: AtomicU64::new(0) }
    }

    /// Exact distance from `x` to the boundary.
    pub fn margin(&self, x: &[f64]) -> f64 {
        (dot(&self.w, x) + self.b).abs() / norm2(&self.w)
    }
}

impl DecisionOracle for LinearOracle {
    fn dim(&self) -> usize {
        self.w.len()
    }
    fn label(&self, x: &[f64]) -> usize {
        self.count.fetch_add(1, Ordering::Relaxed);
        usize::from(dot(&self.w, x) + self.b > 0.0)
    }
    fn queries(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Oracle returning one class everywhere.
pub struct ConstantOracle {
    pub dim: usize,
    pub class: usize,
    count: AtomicU64,
}

impl ConstantOracle {
    pub fn new(dim: usize, class: usize) -> Self {
        Self { dim, class, count: AtomicU64::new(0) }
    }
}

impl DecisionOracle for ConstantOracle {
    fn dim(&self) -> usize {
        self.dim
    }
    fn label(&self, _x: &[f64]) -> usize {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.class
    }
    fn queries(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Boundary-update iterations `T`.
    pub iterations: usize,
    pub init_draws: usize,
    /// Width of the valid input interval; sets the default initial std and its ceiling.
    pub input_range: f64,
    /// Initial perturbation std; `None` means half the input range.
    pub init_std: Option<f64>,
    pub normal_probes: usize,
    /// Probe radius is this times `‖x_t − x‖ / √n`.
    pub probe_radius_factor: f64,
    /// Hemisphere radius is this times `‖x_t − x‖`.
    pub hemisphere_factor: f64,
    /// Halvings of the hemisphere radius tried before an iteration is skipped.
    pub max_halvings: usize,
    /// Bisection stops when the bracket is this fraction of the segment.
    pub bisect_tol: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            iterations: 40,
            init_draws: 200,
            input_range: 1.0,
            init_std: None,
            normal_probes: 100,
            probe_radius_factor: 1.0,
            hemisphere_factor: 0.3,
            max_halvings: 10,
            bisect_tol: 1e-4,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid!("attack needs at least one iteration"));
        }
        if self.init_draws == 0 {
            return Err(invalid!("attack needs at least one initial draw"));
        }
        if self.normal_probes == 0 {
            return Err(invalid!("attack needs at least one normal probe"));
        }
        let positive = [self.input_range, self.probe_radius_factor, self.hemisphere_factor, self.bisect_tol];
        if positive.iter().any(|v| !(*v > 0.0)) || self.init_std.is_some_and(|s| !(s > 0.0)) {
            return Err(invalid!("attack radii and tolerances must be positive"));
        }
        if self.hemisphere_factor >= 1.0 || self.bisect_tol >= 1.0 {
            return Err(invalid!("hemisphere factor and bisection tolerance must be below 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub x_adv: Vec<f64>,
    pub adv_label: usize,
    /// `‖x_adv − x‖₂`
    pub delta: f64,
    pub queries: u64,
    /// Distance after initialization, then after each iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectResult {
    /// Adversarial-side end of the final bracket.
    pub point: Vec<f64>,
    /// Queries spent inside the bisection loop.
    pub queries: u64,
}

/// Number of halvings needed to shrink a unit bracket to `tol`.
pub fn bisect_steps(tol: f64) -> u64 {
    let mut steps = 0;
    let mut width = 1.0;
    while width > tol {
        width *= 0.5;
        steps += 1;
    }
    steps
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

fn bisect_known<O: DecisionOracle + ?Sized>(oracle: &O, clean: &[f64], y: usize, adv: &[f64], tol: f64) -> BisectResult {
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut queries = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        queries += 1;
        if oracle.label(&lerp(clean, adv, mid)) != y {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    BisectResult { point: lerp(clean, adv, hi), queries }
}

/// Bisection on the segment from `x_clean` to `x_adv`, whose labels must differ.
/// The two endpoint checks are not included in the reported query count.
pub fn boundary_bisect<O: DecisionOracle + ?Sized>(oracle: &O, x_clean: &[f64], x_adv: &[f64], tol: f64) -> Result<BisectResult> {
    if x_clean.len() != oracle.dim() || x_adv.len() != oracle.dim() {
        return Err(invalid!("endpoint dimension does not match the oracle"));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(invalid!("bisection tolerance must lie in (0, 1)"));
    }
    let y = oracle.label(x_clean);
    if oracle.label(x_adv) == y {
        return Err(invalid!("segment endpoints share label {}", y));
    }
    Ok(bisect_known(oracle, x_clean, y, x_adv, tol))
}

/// Closest label-flipping draw among `draws` Gaussian perturbations of `x`,
/// bisected to the boundary. The std doubles on failure until it exceeds
/// `max_std`.
pub fn init_adversarial<O: DecisionOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    y: usize,
    draws: usize,
    std: f64,
    max_std: f64,
    tol: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(invalid!("initialization needs at least one draw"));
    }
    if !(std > 0.0) {
        return Err(invalid!("initial std must be positive"));
    }
    let n = x.len();
    let mut s = std;
    loop {
        let mut batch = Matrix::zeros(draws, n);
        for r in 0..draws {
            for (v, xi) in batch.row_mut(r).iter_mut().zip(x) {
                *v = xi + s * rng.normal();
            }
        }
        let labels = oracle.labels(&batch);
        let best = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != y)
            .map(|(r, _)| (r, norm2(&sub(batch.row(r), x))))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal));
        if let Some((r, _)) = best {
            return Ok(bisect_known(oracle, x, y, batch.row(r), tol).point);
        }
        if s >= max_std {
            return Err(Error::AttackFailed(alloc::format!(
                "no adversarial point among {} draws at std up to {}",
                draws,
                s
            )));
        }
        s = (2.0 * s).min(max_std);
    }
}

/// Unit estimate of the boundary normal at `x_t`, pointing to the side whose
/// label differs from `y`. Probe signs are centered by their mean before
/// averaging. Returns `None` if every retry saw one side only.
pub fn estimate_normal<O: DecisionOracle + ?Sized>(
    oracle: &O,
    x_t: &[f64],
    y: usize,
    probes: usize,
    radius: f64,
    rng: &mut Rng,
) -> Result<Option<Vec<f64>>> {
    if probes == 0 || !(radius > 0.0) {
        return Err(invalid!("normal estimation needs probes and a positive radius"));
    }
    let n = x_t.len();
    let mut r = radius;
    for _ in 0..5 {
        let dirs: Vec<Vec<f64>> = (0..probes).map(|_| rng.unit_vector(n)).collect();
        let mut batch = Matrix::zeros(probes, n);
        for (i, d) in dirs.iter().enumerate() {
            for ((v, xi), di) in batch.row_mut(i).iter_mut().zip(x_t).zip(d) {
                *v = xi + r * di;
            }
        }
        let signs: Vec<f64> = oracle.labels(&batch).iter().map(|&l| if l != y { 1.0 } else { -1.0 }).collect();
        let mean = signs.iter().sum::<f64>() / probes as f64;
        if probes > 1 && mean.abs() == 1.0 {
            r *= 0.5;
            continue;
        }
        let mut est = vec![0.0; n];
        for (d, s) in dirs.iter().zip(&signs) {
            let w = if probes > 1 { s - mean } else { *s };
            axpy(w, d, &mut est);
        }
        if normalize(&mut est) > 0.0 {
            return Ok(Some(est));
        }
        r *= 0.5;
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentPoint {
    pub point: Vec<f64>,
    /// Radius actually used.
    pub radius: f64,
    /// The normal was parallel to `x − x_t` and a random in-plane direction was used.
    pub degenerate: bool,
}

/// Tangent point from `x` to the sphere of radius `r` around `x_t`, in the
/// plane spanned by `x − x_t` and `normal`, on the normal's side.
pub fn tangent_point(x: &[f64], x_t: &[f64], normal: &[f64], r: f64, rng: &mut Rng) -> Result<TangentPoint> {
    if x.len() != x_t.len() || normal.len() != x.len() {
        return Err(invalid!("tangent point inputs have mismatched dimensions"));
    }
    let mut e1 = sub(x, x_t);
    let d = normalize(&mut e1);
    if d == 0.0 {
        return Err(invalid!("boundary point coincides with the sample"));
    }
    let r = if r >= d || !(r > 0.0) { 0.5 * d } else { r };
    let mut e2 = normal.to_vec();
    axpy(-dot(&e2, &e1), &e1, &mut e2);
    let mut degenerate = false;
    if normalize(&mut e2) <= 1e-12 * norm2(normal).max(1e-300) {
        degenerate = true;
        loop {
            let mut v = rng.unit_vector(x.len());
            axpy(-dot(&v, &e1), &e1, &mut v);
            if normalize(&mut v) > 1e-6 {
                e2 = v;
                break;
            }
            if x.len() < 2 {
                return Err(invalid!("no direction orthogonal to the segment in one dimension"));
            }
        }
    }
    let a = r * r / d;
    let b = r * libm::sqrt((1.0 - (r / d) * (r / d)).max(0.0));
    let point = x_t.iter().zip(&e1).zip(&e2).map(|((p, u), v)| p + a * u + b * v).collect();
    Ok(TangentPoint { point, radius: r, degenerate })
}

/// Untargeted decision-based attack on a sample the oracle labels `y`.
pub fn tangent_attack<O: DecisionOracle + ?Sized>(oracle: &O, x: &[f64], y: usize, cfg: &AttackConfig, rng: &mut Rng) -> Result<AttackResult> {
    cfg.validate()?;
    if x.len() != oracle.dim() {
        return Err(invalid!("sample has dimension {}, oracle expects {}", x.len(), oracle.dim()));
    }
    let start = oracle.queries();
    if oracle.label(x) != y {
        return Err(invalid!("sample is not labeled {} by the oracle", y));
    }
    let n = x.len() as f64;
    let std = cfg.init_std.unwrap_or(0.5 * cfg.input_range);
    let max_std = cfg.input_range.max(std);
    let mut x_t = init_adversarial(oracle, x, y, cfg.init_draws, std, max_std, cfg.bisect_tol, rng)?;
    let mut d = norm2(&sub(&x_t, x));
    let mut trace = vec![d];
    for _ in 0..cfg.iterations {
        let probe_radius = cfg.probe_radius_factor * d / libm::sqrt(n);
        if let Some(normal) = estimate_normal(oracle, &x_t, y, cfg.normal_probes, probe_radius, rng)? {
            let mut r = cfg.hemisphere_factor * d;
            for _ in 0..=cfg.max_halvings {
                let k = tangent_point(x, &x_t, &normal, r, rng)?;
                if oracle.label(&k.point) != y {
                    let next = bisect_known(oracle, x, y, &k.point, cfg.bisect_tol).point;
                    let dn = norm2(&sub(&next, x));
                    if dn <= d {
                        x_t = next;
                        d = dn;
                    }
                    break;
                }
                r *= 0.5;
            }
        }
        trace.push(d);
    }
    let adv_label = oracle.label(&x_t);
    if adv_label == y {
        return Err(Error::AttackFailed("final point is not adversarial".into()));
    }
    Ok(AttackResult { x_adv: x_t, adv_label, delta: d, queries: oracle.queries() - start, trace })
}

/// Ray families for [`brute_force_distance`].
#[derive(Debug, Clone, PartialEq)]
pub enum Directions {
    /// `count` evenly spaced angles in the plane, starting at angle 0; doubling
    /// `count` keeps every previous ray.
    Circle(usize),
    /// `count` near-uniform directions on the 2-sphere (Fibonacci lattice).
    Sphere(usize),
    Explicit(Vec<Vec<f64>>),
}

impl Directions {
    pub fn vectors(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            Directions::Circle(count) => {
                if *count == 0 {
                    return Err(invalid!("need at least one direction"));
                }
                Ok((0..*count)
                    .map(|i| {
                        let a = 2.0 * core::f64::consts::PI * i as f64 / *count as f64;
                        vec![libm::cos(a), libm::sin(a)]
                    })
                    .collect())
            }
            Directions::Sphere(count) => {
                if *count == 0 {
                    return Err(invalid!("need at least one direction"));
                }
                let golden = core::f64::consts::PI * (3.0 - libm::sqrt(5.0));
                Ok((0..*count)
                    .map(|i| {
                        let z = 1.0 - 2.0 * (i as f64 + 0.5) / *count as f64;
                        let rho = libm::sqrt(1.0 - z * z);
                        let phi = golden * i as f64;
                        vec![rho * libm::cos(phi), rho * libm::sin(phi), z]
                    })
                    .collect())
            }
            Directions::Explicit(dirs) => {
                let mut out = Vec::with_capacity(dirs.len());
                for d in dirs {
                    let mut u = d.clone();
                    if normalize(&mut u) == 0.0 {
                        return Err(invalid!("zero direction"));
                    }
                    out.push(u);
                }
                if out.is_empty() {
                    return Err(invalid!("need at least one direction"));
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BruteForceOptions {
    pub max_radius: f64,
    /// Uniform march steps along each ray up to `max_radius`.
    pub steps: usize,
    /// Absolute bisection tolerance on the crossing radius.
    pub tol: f64,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        Self { max_radius: 4.0, steps: 2000, tol: 1e-9 }
    }
}

/// Smallest radius along any ray at which the label leaves `y`; `None` when
/// no ray flips within `max_radius`. Each ray reports the first flip on its
/// march grid, refined by bisection, so the result is an upper bound on the
/// true adversarial distance.
pub fn brute_force_distance<O: DecisionOracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    y: usize,
    directions: &Directions,
    opts: &BruteForceOptions,
) -> Result<Option<f64>> {
    if x.len() != oracle.dim() {
        return Err(invalid!("sample dimension does not match the oracle"));
    }
    if opts.steps == 0 || !(opts.max_radius > 0.0) || !(opts.tol > 0.0) {
        return Err(invalid!("invalid brute-force options"));
    }
    let dirs = directions.vectors()?;
    if dirs.iter().any(|d| d.len() != x.len()) {
        return Err(invalid!("direction dimension does not match the sample"));
    }
    let at = |d: &[f64], t: f64| -> Vec<f64> { x.iter().zip(d).map(|(a, b)| a + t * b).collect() };
    let h = opts.max_radius / opts.steps as f64;
    let mut bracket: Vec<Option<(f64, f64)>> = vec![None; dirs.len()];
    let mut open: Vec<usize> = (0..dirs.len()).collect();
    for s in 1..=opts.steps {
        if open.is_empty() {
            break;
        }
        let t = s as f64 * h;
        let mut batch = Matrix::zeros(open.len(), x.len());
        for (row, &i) in open.iter().enumerate() {
            batch.row_mut(row).copy_from_slice(&at(&dirs[i], t));
        }
        let labels = oracle.labels(&batch);
        let mut still = Vec::with_capacity(open.len());
        for (&i, &l) in open.iter().zip(&labels) {
            if l != y {
                bracket[i] = Some((t - h, t));
            } else {
                still.push(i);
            }
        }
        open = still;
    }
    let mut best: Option<f64> = None;
    for (i, b) in bracket.iter().enumerate() {
        let Some((mut lo, mut hi)) = *b else { continue };
        if best.is_some_and(|v| lo >= v) {
            continue;
        }
        while hi - lo > opts.tol {
            let mid = 0.5 * (lo + hi);
            if oracle.label(&at(&dirs[i], mid)) != y {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        best = Some(best.map_or(hi, |v: f64| v.min(hi)));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// `(τ, fraction of distances ≥ τ)`
    pub proportions: Vec<(f64, f64)>,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn robustness_report(distances: &[f64], thresholds: &[f64]) -> Result<RobustnessStats> {
    if distances.is_empty() {
        return Err(invalid!("no distances"));
    }
    if distances.iter().any(|d| d.is_nan()) {
        return Err(invalid!("distances contain NaN"));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = sorted.len() as f64;
    let proportions = thresholds
        .iter()
        .map(|&t| (t, distances.iter().filter(|&&d| d >= t).count() as f64 / n))
        .collect();
    Ok(RobustnessStats {
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / n,
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        proportions,
    })
}
