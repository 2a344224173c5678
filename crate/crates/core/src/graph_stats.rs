//! Expansion events of regular digraphs, the deflated operator norm and a
//! seeded Monte-Carlo frequency engine.

use crate::graph::RegularMatrix;
use crate::rng::{trial_rng, Module};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CheckMode {
    Exhaustive,
    Sampled { samples: u64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Witness {
    Columns(Vec<usize>),
    Rows(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventReport {
    pub event: String,
    pub params: BTreeMap<String, f64>,
    pub holds: bool,
    /// Present iff `holds` is false.
    pub witness: Option<Witness>,
    pub mode: CheckMode,
    pub checked: u64,
}

impl EventReport {
    fn new(event: &str, params: &[(&str, f64)], mode: CheckMode) -> Self {
        EventReport {
            event: event.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            holds: true,
            witness: None,
            mode,
            checked: 0,
        }
    }

    fn fail(&mut self, w: Witness) {
        if self.holds {
            self.holds = false;
            self.witness = Some(w);
        }
    }
}

/// `|S_J|`: rows whose support meets `J`.
pub fn union_size(m: &RegularMatrix, j_set: &[usize], mark: &mut [u32], stamp: u32) -> usize {
    let mut cnt = 0;
    for &j in j_set {
        for &i in m.col(j) {
            if mark[i] != stamp {
                mark[i] = stamp;
                cnt += 1;
            }
        }
    }
    cnt
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmegaOptions {
    /// Largest `k` checked over all subsets.
    pub k_exhaustive: usize,
    pub samples: u64,
    pub seed: u64,
}

impl Default for OmegaOptions {
    fn default() -> Self {
        OmegaOptions { k_exhaustive: 2, samples: 10_000, seed: 0 }
    }
}

/// Every `J` with `|J| = k` has `|S_J| >= (1 - eps) d k`.
pub fn check_omega(m: &RegularMatrix, k: usize, eps: f64, opts: &OmegaOptions) -> Result<EventReport, StatsError> {
    let n = m.n();
    if k == 0 || k > n || !(eps > 0.0 && eps < 1.0) {
        return Err(StatsError::InvalidInput("need 1 <= k <= n and eps in (0, 1)".into()));
    }
    let need = (1.0 - eps) * (m.d() * k) as f64;
    let params = [("k", k as f64), ("eps", eps)];
    if k <= opts.k_exhaustive {
        let mut rep = EventReport::new("omega", &params, CheckMode::Exhaustive);
        if k == 1 {
            rep.checked = n as u64;
            if (m.d() as f64) < need {
                rep.fail(Witness::Columns(vec![0]));
            }
            return Ok(rep);
        }
        if k == 2 {
            // |S_{a,b}| = 2d - (rows containing both a and b)
            let mut co: FxHashMap<u64, u32> = FxHashMap::default();
            for i in 0..n {
                let r = m.row(i);
                for a in 0..r.len() {
                    for b in a + 1..r.len() {
                        *co.entry(((r[a] as u64) << 32) | r[b] as u64).or_default() += 1;
                    }
                }
            }
            rep.checked = (n * (n - 1) / 2) as u64;
            let worst = co.iter().max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0)));
            if let Some((&key, &c)) = worst {
                if ((2 * m.d()) as f64 - c as f64) < need {
                    rep.fail(Witness::Columns(vec![(key >> 32) as usize, (key & 0xffff_ffff) as usize]));
                }
            } else if ((2 * m.d()) as f64) < need {
                rep.fail(Witness::Columns(vec![0, 1]));
            }
            return Ok(rep);
        }
        let mut mark = vec![0u32; n];
        let mut stamp = 0u32;
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            stamp = stamp.wrapping_add(1);
            if stamp == 0 {
                mark.iter_mut().for_each(|v| *v = 0);
                stamp = 1;
            }
            rep.checked += 1;
            if (union_size(m, &idx, &mut mark, stamp) as f64) < need {
                rep.fail(Witness::Columns(idx.clone()));
                return Ok(rep);
            }
            // next combination
            let mut t = k;
            while t > 0 && idx[t - 1] == n - k + t - 1 {
                t -= 1;
            }
            if t == 0 {
                return Ok(rep);
            }
            idx[t - 1] += 1;
            for u in t..k {
                idx[u] = idx[u - 1] + 1;
            }
        }
    }
    let mut rep = EventReport::new("omega", &params, CheckMode::Sampled { samples: opts.samples, seed: opts.seed });
    let mut rng = trial_rng(opts.seed, k as u64, Module::Stats);
    let mut mark = vec![0u32; n];
    for s in 0..opts.samples {
        let j_set = sample(&mut rng, n, k).into_vec();
        rep.checked += 1;
        if (union_size(m, &j_set, &mut mark, s as u32 + 1) as f64) < need {
            let mut w = j_set;
            w.sort_unstable();
            rep.fail(Witness::Columns(w));
            break;
        }
    }
    Ok(rep)
}

/// `|supp R_i ∩ J|` for every row.
pub fn row_hits(m: &RegularMatrix, j_set: &[usize]) -> Vec<usize> {
    let mut hits = vec![0usize; m.n()];
    for &j in j_set {
        for &i in m.col(j) {
            hits[i] += 1;
        }
    }
    hits
}

pub fn alpha_k(n: usize, d: usize, k: usize) -> f64 {
    d as f64 * (k as f64 - d as f64) / (8.0 * std::f64::consts::E * n as f64) - 1.0
}

pub fn beta_k(n: usize, d: usize, k: usize) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    let a = alpha_k(n, d, k);
    let e = std::f64::consts::E;
    (e * nf * (-a / 2.0).exp()).max(4.0 * kf * (e * nf / kf).ln() / a)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowHitsOptions {
    pub sizes: Vec<usize>,
    pub samples_per_size: u64,
    pub seed: u64,
}

/// For sampled `J` with `|J| = k >= l0`: at most `beta_k` rows meet `J`
/// in fewer than `alpha_k` columns.
pub fn check_row_hits(m: &RegularMatrix, l0: usize, opts: &RowHitsOptions) -> Result<EventReport, StatsError> {
    let (n, d) = (m.n(), m.d());
    if (l0 as f64) < d as f64 + 24.0 * std::f64::consts::E * n as f64 / d as f64 {
        return Err(StatsError::InvalidInput(format!("l0 = {l0} below d + 24 e n / d")));
    }
    let mut rep = EventReport::new("row_hits", &[("l0", l0 as f64)], CheckMode::Sampled { samples: opts.samples_per_size, seed: opts.seed });
    for &k in &opts.sizes {
        if k < l0 || k > n {
            return Err(StatsError::InvalidInput(format!("size {k} outside [l0, n]")));
        }
        let (a, b) = (alpha_k(n, d, k), beta_k(n, d, k));
        let mut rng = trial_rng(opts.seed, k as u64, Module::Stats);
        for _ in 0..opts.samples_per_size {
            let j_set = if k == n { (0..n).collect() } else { sample(&mut rng, n, k).into_vec() };
            rep.checked += 1;
            let bad = bad_rows(&row_hits(m, &j_set), |h| (h as f64) < a);
            if bad.len() as f64 > b {
                let mut w = j_set;
                w.sort_unstable();
                rep.fail(Witness::Columns(w));
            }
        }
    }
    Ok(rep)
}

fn bad_rows(hits: &[usize], bad: impl Fn(usize) -> bool) -> Vec<usize> {
    (0..hits.len()).filter(|&i| bad(hits[i])).collect()
}

/// For each `J` in `sets` with `|J| >= n / sqrt(d)`: at most `n / sqrt(d)`
/// rows meet `J` in fewer than `c d |J| / n` columns.
pub fn check_large_set_hits(m: &RegularMatrix, c: f64, sets: &[Vec<usize>], mode: CheckMode) -> EventReport {
    let (n, d) = (m.n() as f64, m.d() as f64);
    let mut rep = EventReport::new("large_set_hits", &[("c", c)], mode);
    for j_set in sets {
        let k = j_set.len() as f64;
        if k * k * d < n * n {
            continue;
        }
        rep.checked += 1;
        let bad = bad_rows(&row_hits(m, j_set), |h| (h as f64) < c * d * k / n);
        if (bad.len() as f64) * (bad.len() as f64) * d > n * n {
            rep.fail(Witness::Columns(j_set.clone()));
        }
    }
    rep
}

/// For each `J`: at least `c min(d|J|, d|J^c|, n)` rows meet `J` in at least
/// `c d |J| / n` and `J^c` in at least `c d |J^c| / n` columns.
pub fn check_two_sided_hits(m: &RegularMatrix, c: f64, sets: &[Vec<usize>], mode: CheckMode) -> EventReport {
    let (n, d) = (m.n(), m.d() as f64);
    let nf = n as f64;
    let mut rep = EventReport::new("two_sided_hits", &[("c", c)], mode);
    for j_set in sets {
        let k = j_set.len() as f64;
        let kc = nf - k;
        rep.checked += 1;
        let hits = row_hits(m, j_set);
        let good = hits.iter().filter(|&&h| h as f64 >= c * d * k / nf && (m.d() - h) as f64 >= c * d * kc / nf).count();
        if (good as f64) < c * (d * k).min(d * kc).min(nf) {
            rep.fail(Witness::Columns(j_set.clone()));
        }
    }
    rep
}

/// Random subsets with sizes drawn log-uniformly from `[1, n - 1]`.
pub fn sample_sets(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = trial_rng(seed, 0, Module::Stats);
    (0..count)
        .map(|_| {
            let k = ((n as f64 - 1.0).ln() * rng.random::<f64>()).exp().round().clamp(1.0, (n - 1) as f64) as usize;
            let mut s = sample(&mut rng, n, k).into_vec();
            s.sort_unstable();
            s
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeftRight {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// `|S_{Jl ∪ Jr}|`.
    pub union_support: usize,
    /// `|S_J| >= (1 - eps) d |J|` for `J = Jl ∪ Jr`.
    pub expansion_holds: bool,
    /// When expansion holds: `|I^l| >= d|Jl| - 2 eps d |J|`, the same for
    /// `I^r`, and both at most `d|Jl|`, `d|Jr|`.
    pub bounds_hold: Option<bool>,
}

/// Rows with exactly one neighbor in `Jl` and none in `Jr`, and the mirror.
pub fn left_right_split(m: &RegularMatrix, jl: &[usize], jr: &[usize], eps: f64) -> Result<LeftRight, StatsError> {
    let n = m.n();
    let mut side = vec![0u8; n];
    for &j in jl {
        if j >= n {
            return Err(StatsError::InvalidInput(format!("column {j} out of range")));
        }
        side[j] = 1;
    }
    for &j in jr {
        if j >= n {
            return Err(StatsError::InvalidInput(format!("column {j} out of range")));
        }
        if side[j] == 1 {
            return Err(StatsError::InvalidInput(format!("column {j} in both sets")));
        }
        side[j] = 2;
    }
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let mut union_support = 0;
    for i in 0..n {
        let (mut a, mut b) = (0, 0);
        for &j in m.row(i) {
            match side[j] {
                1 => a += 1,
                2 => b += 1,
                _ => {}
            }
        }
        if a + b > 0 {
            union_support += 1;
        }
        if a == 1 && b == 0 {
            left.push(i);
        }
        if a == 0 && b == 1 {
            right.push(i);
        }
    }
    let d = m.d() as f64;
    let total = (jl.len() + jr.len()) as f64;
    let expansion_holds = union_support as f64 >= (1.0 - eps) * d * total;
    let bounds_hold = expansion_holds.then(|| {
        let lo = |s: usize| d * s as f64 - 2.0 * eps * d * total;
        left.len() as f64 >= lo(jl.len())
            && right.len() as f64 >= lo(jr.len())
            && left.len() <= m.d() * jl.len()
            && right.len() <= m.d() * jr.len()
    });
    Ok(LeftRight { left, right, union_support, expansion_holds, bounds_hold })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormReport {
    pub estimate: f64,
    /// Certain: `||B v||` for a unit `v`.
    pub lower: f64,
    /// Holds with probability at least `1 - confidence_gap` over the random
    /// start, capped by the deterministic bound `d`.
    pub upper: f64,
    pub confidence_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub confidence_gap: f64,
}

impl Default for NormOptions {
    fn default() -> Self {
        NormOptions { tol: 1e-6, max_iter: 2000, seed: 0, confidence_gap: 1e-6 }
    }
}

fn project_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Smallest `eps` such that a Rayleigh quotient after `k` power steps on a
/// PSD operator of dimension `dim` falls below `(1 - eps) lambda_max` with
/// probability at most `gap` (uniform start): needs
/// `sqrt(dim (1 - eps)^{2k+1} / ((2k+1) eps)) <= gap`.
pub fn power_method_slack(k: usize, dim: usize, gap: f64) -> f64 {
    let f = |eps: f64| {
        let e = (2 * k + 1) as f64;
        0.5 * ((dim as f64).ln() + e * (1.0 - eps).ln() - e.ln() - eps.ln()) <= gap.ln()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if !f(hi - 1e-15) {
        return 1.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `||M - (d/n) 1 1^t||` by power iteration on `B^t B` over the complement
/// of the constant vector (`B 1 = 0` and `1^t B = 0`).
pub fn deflated_norm(m: &RegularMatrix, opts: &NormOptions) -> NormReport {
    let n = m.n();
    let d = m.d() as f64;
    if n <= 1 {
        return NormReport { estimate: 0.0, lower: 0.0, upper: 0.0, confidence_gap: 0.0, iterations: 0, converged: true };
    }
    let mut rng = trial_rng(opts.seed, 0, Module::Stats);
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    project_mean(&mut v);
    let nv = norm2(&v);
    if nv == 0.0 {
        return NormReport { estimate: 0.0, lower: 0.0, upper: 0.0, confidence_gap: 0.0, iterations: 0, converged: true };
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut bv = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut sigma = 0.0;
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        // bv = M v (mean already removed, so B v = M v - mean(M v) = M v)
        for i in 0..n {
            bv[i] = m.row(i).iter().map(|&j| v[j]).sum();
        }
        project_mean(&mut bv);
        let s = norm2(&bv);
        // w = M^t bv
        w.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            for &j in m.row(i) {
                w[j] += bv[i];
            }
        }
        project_mean(&mut w);
        let nw = norm2(&w);
        let prev = sigma;
        sigma = s;
        if nw == 0.0 {
            converged = true;
            break;
        }
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / nw;
        }
        if it > 1 && (sigma - prev).abs() <= opts.tol * sigma.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    // final Rayleigh value for the current v
    for i in 0..n {
        bv[i] = m.row(i).iter().map(|&j| v[j]).sum();
    }
    project_mean(&mut bv);
    let lower = norm2(&bv).max(sigma).min(d);
    let eps = power_method_slack(it, n - 1, opts.confidence_gap);
    let upper = if eps >= 1.0 { d } else { (lower / (1.0 - eps).sqrt()).min(d) };
    assert!(lower <= d * (1.0 + 1e-12), "deflated norm exceeds the row-sum bound");
    NormReport { estimate: lower, lower, upper: upper.max(lower), confidence_gap: opts.confidence_gap, iterations: it, converged }
}

/// Dense cross-check by singular values.
pub fn deflated_norm_dense(m: &RegularMatrix) -> f64 {
    use ndarray::Array2;
    use ndarray_linalg::SVD;
    let n = m.n();
    let c = m.d() as f64 / n as f64;
    let mut b = Array2::<f64>::from_elem((n, n), -c);
    for i in 0..n {
        for &j in m.row(i) {
            b[[i, j]] += 1.0;
        }
    }
    let (_, s, _) = b.svd(false, false).expect("svd");
    s.iter().cloned().fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Frequency {
    pub successes: u64,
    pub trials: u64,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

/// Wilson score interval at two-sided level `level`.
pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(0.5 + level / 2.0);
    let (s, t) = (successes as f64, trials as f64);
    let p = s / t;
    let den = 1.0 + z * z / t;
    let center = (p + z * z / (2.0 * t)) / den;
    let half = z * (p * (1.0 - p) / t + z * z / (4.0 * t * t)).sqrt() / den;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Runs `event(trial, rng)` for every trial with an independent stream and
/// reports the frequency with a 95% Wilson interval. Deterministic for a
/// fixed seed regardless of thread count.
pub fn event_frequency<F>(trials: u64, seed: u64, module: Module, event: F) -> Frequency
where
    F: Fn(u64, &mut ChaCha8Rng) -> bool + Sync,
{
    let successes = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = trial_rng(seed, t, module);
            event(t, &mut rng)
        })
        .count() as u64;
    let (lo, hi) = wilson_interval(successes, trials, 0.95);
    Frequency { successes, trials, frequency: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 }, ci_low: lo, ci_high: hi, seed }
}
