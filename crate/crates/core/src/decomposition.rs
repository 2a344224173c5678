//! Spread-mass and tall-part classes of gradual vectors, the cover of the
//! gradual set by them, and the deterministic separation, height and halving
//! lemmas behind the cover.

use crate::ball::max_ball_bracket;
use crate::ell::{decompose, EllDecomposition, EllError, KVector, Lat, PartKind, ValueGroups};
use crate::estimators::truncated_weight;
use crate::taxonomy::{classify_with, TaxVerdict, TaxonomyError, TaxonomyParams, XStar};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompError {
    #[error("vector is not normalized gradual: {0}")]
    NotInS(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no cover witness: {0}")]
    CoverFailure(String),
    #[error(transparent)]
    Ell(#[from] EllError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Thresholds of the spread-mass and tall-part classes. Defaults are read
/// off the proofs, not the theorem statements.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CoverConstants {
    pub c_k: f64,
    pub c_p: f64,
    /// Spread-mass constant used by the halving trichotomy; its proof closes
    /// only for `c_k <= 1/(36 * 144)`.
    pub c_k_halving: f64,
}

impl Default for CoverConstants {
    fn default() -> Self {
        CoverConstants { c_k: 1.0 / 128.0, c_p: 1.0 / 12800.0, c_k_halving: 1.0 / 5184.0 }
    }
}

/// `d^u` as a lattice resolution.
pub fn resolution(d: usize, u: u32) -> Result<u128, DecompError> {
    (d as u128).checked_pow(u).ok_or_else(|| DecompError::InvalidInput(format!("d^{u} overflows")))
}

/// Classifies `x` and requires it to be gradual with `x*_{n3} = 1`.
pub fn require_in_s(x: &[Complex64], params: &TaxonomyParams) -> Result<TaxVerdict, DecompError> {
    if x.len() != params.n {
        return Err(DecompError::InvalidInput(format!("length {} != n = {}", x.len(), params.n)));
    }
    let xs = XStar::for_params(x, params);
    let v = classify_with(x, &xs, params)?;
    if !v.gradual {
        return Err(DecompError::NotInS(format!("class {:?}, almost constant {}, undecided {}", v.steep_class, v.almost_constant, v.ac_undecided)));
    }
    if !v.normalized {
        return Err(DecompError::NotInS(format!("x*_n3 = {}", v.xstar_n3)));
    }
    Ok(v)
}

/// Divides by `x*_{n3}`; `None` when that order statistic vanishes.
pub fn normalize(x: &[Complex64], params: &TaxonomyParams) -> Option<Vec<Complex64>> {
    let s = XStar::partial(x, 0, &[params.n3]).get(params.n3);
    if s == 0.0 || !s.is_finite() {
        return None;
    }
    let mut y: Vec<Complex64> = x.iter().map(|c| c / s).collect();
    // the n3-th modulus must come out at exactly one
    let s2 = XStar::partial(&y, 0, &[params.n3]).get(params.n3);
    if s2 != 1.0 {
        y.iter_mut().for_each(|c| *c /= s2);
    }
    Some(y)
}

/// Parts of `decomp` selected by a predicate, with their total cardinality.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub u: u32,
    pub parts: Vec<usize>,
    pub total: usize,
    pub threshold: f64,
}

impl Certificate {
    pub fn meets(&self) -> bool {
        self.total as f64 >= self.threshold
    }
}

fn collect(decomp: &EllDecomposition, u: u32, threshold: f64, keep: impl Fn(&crate::ell::EllPart) -> bool) -> Certificate {
    let parts: Vec<usize> = (0..decomp.num_parts()).filter(|&q| keep(&decomp.parts()[q])).collect();
    let total = parts.iter().map(|&q| decomp.parts()[q].len()).sum();
    Certificate { u, parts, total, threshold }
}

/// Spread parts of a decomposition against `c_k n3`.
pub fn spread_certificate(decomp: &EllDecomposition, u: u32, c_k: f64, n3: usize) -> Certificate {
    collect(decomp, u, c_k * n3 as f64, |p| p.kind == PartKind::Spread)
}

/// Height threshold `c_p 2^{c_p (v-4) a3} a3` of the tall-part class.
pub fn tall_height_threshold(v: u32, c_p: f64, a3: f64) -> f64 {
    c_p * (c_p * (v as f64 - 4.0) * a3).exp2() * a3
}

/// Parts of height at least the tall threshold against `c_p n3`.
pub fn tall_certificate(decomp: &EllDecomposition, v: u32, c_p: f64, a3: f64, n3: usize) -> Certificate {
    let h = tall_height_threshold(v, c_p, a3);
    collect(decomp, v, c_p * n3 as f64, |p| p.height() as f64 >= h)
}

fn decompose_at(x: &[Complex64], d: usize, u: u32) -> Result<EllDecomposition, DecompError> {
    let y = KVector::approx(x, resolution(d, u)?)?;
    Ok(decompose(&y, d)?)
}

/// Spread-mass class membership without the gradual-set precondition.
pub fn in_ku_unchecked(x: &[Complex64], u: u32, c_k: f64, d: usize, n3: usize) -> Result<Certificate, DecompError> {
    Ok(spread_certificate(&decompose_at(x, d, u)?, u, c_k, n3))
}

/// Spread-mass class: the spread parts of the `d^u`-approximation cover at
/// least `c_k n3` coordinates.
pub fn in_ku(x: &[Complex64], u: u32, c_k: f64, params: &TaxonomyParams) -> Result<(bool, Certificate), DecompError> {
    require_in_s(x, params)?;
    let c = in_ku_unchecked(x, u, c_k, params.d, params.n3)?;
    Ok((c.meets(), c))
}

pub fn in_pv_unchecked(x: &[Complex64], v: u32, c_p: f64, a3: f64, d: usize, n3: usize) -> Result<Certificate, DecompError> {
    Ok(tall_certificate(&decompose_at(x, d, v)?, v, c_p, a3, n3))
}

/// Tall-part class: parts of the `d^v`-approximation with height at least
/// `c_p 2^{c_p (v-4) a3} a3` cover at least `c_p n3` coordinates. When that
/// height threshold is at most one the class is the whole gradual set.
pub fn in_pv(x: &[Complex64], v: u32, c_p: f64, a3: f64, params: &TaxonomyParams) -> Result<(bool, Certificate), DecompError> {
    if v < 5 {
        return Err(DecompError::InvalidInput("v must be at least 5".into()));
    }
    require_in_s(x, params)?;
    let c = in_pv_unchecked(x, v, c_p, a3, params.d, params.n3)?;
    Ok((c.meets(), c))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BallMembership {
    Yes { lambda: Complex64, count: usize },
    No { upper: usize },
    /// Point-centred balls of radius `rho` fall short while radius `2 rho`
    /// reaches `delta n`.
    Undecided { lower: usize, upper: usize },
}

/// Some disk of radius `rho` holds at least `delta n` coordinates.
pub fn rho_delta_ball(x: &[Complex64], rho: f64, delta: f64) -> BallMembership {
    let need = delta * x.len() as f64;
    if delta > 1.0 {
        return BallMembership::No { upper: x.len() };
    }
    let (lo, c) = crate::ball::max_ball_at_points(x, rho);
    if lo as f64 >= need {
        return BallMembership::Yes { lambda: c, count: lo };
    }
    let (_, hi) = max_ball_bracket(x, rho);
    if (hi as f64) < need {
        BallMembership::No { upper: hi }
    } else {
        BallMembership::Undecided { lower: lo, upper: hi }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RhoDelta {
    pub tall: Certificate,
    pub ball: BallMembership,
    /// `rho <= d^{-v}`, the range where the w-set property applies.
    pub rho_in_range: bool,
}

impl RhoDelta {
    /// `Some(true)` / `Some(false)` when decided.
    pub fn holds(&self) -> Option<bool> {
        if !self.tall.meets() {
            return Some(false);
        }
        match self.ball {
            BallMembership::Yes { .. } => Some(true),
            BallMembership::No { .. } => Some(false),
            BallMembership::Undecided { .. } => None,
        }
    }
}

pub fn in_pv_rho_delta(x: &[Complex64], v: u32, rho: f64, delta: f64, consts: &CoverConstants, params: &TaxonomyParams) -> Result<RhoDelta, DecompError> {
    let (_, tall) = in_pv(x, v, consts.c_p, params.consts.a3, params)?;
    let rho_in_range = rho * (params.d as f64).powi(v as i32) <= 1.0;
    Ok(RhoDelta { tall, ball: rho_delta_ball(x, rho, delta), rho_in_range })
}

/// Largest w-set of order at most `log2(72 sqrt(d) / delta)` in the
/// decomposition of the `d^v`-approximation, against `delta n / 36`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WSetProbe {
    pub order_bound: f64,
    pub best_order: Option<i64>,
    pub best_size: usize,
    pub holds: bool,
}

pub fn small_order_wset(decomp: &EllDecomposition, delta: f64) -> WSetProbe {
    let (n, d) = (decomp.n(), decomp.d());
    let order_bound = (72.0 * (d as f64).sqrt() / delta).log2();
    let mut by_bucket: BTreeMap<i64, usize> = BTreeMap::new();
    for p in decomp.parts() {
        let w = truncated_weight(p.kind, p.height(), p.len(), n, d);
        *by_bucket.entry(w.bucket).or_default() += p.len();
    }
    let best = by_bucket.iter().filter(|(&b, _)| b as f64 <= order_bound).max_by_key(|(&b, &s)| (s, -b));
    let (best_order, best_size) = best.map(|(&b, &s)| (Some(b), s)).unwrap_or((None, 0));
    WSetProbe { order_bound, best_order, best_size, holds: 36.0 * best_size as f64 >= delta * n as f64 }
}

/// Two coordinate blocks of the lattice vector separated along an integer
/// direction `(p, q)`: `I = {s <= cut}`, `J = {s >= cut + gap}` with
/// `s = p Re + q Im` in lattice units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Separation {
    pub direction: (i64, i64),
    pub cut: i128,
    pub gap: i128,
    pub size_i: usize,
    pub size_j: usize,
}

impl Separation {
    pub fn members(&self, y: &KVector) -> (Vec<usize>, Vec<usize>) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, c) in y.coords().iter().enumerate() {
            let s = project(*c, self.direction);
            if s <= self.cut {
                a.push(i);
            } else if s >= self.cut + self.gap {
                b.push(i);
            }
        }
        (a, b)
    }
}

const DIRECTIONS: [(i64, i64); 8] = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)];

fn project(c: Lat, dir: (i64, i64)) -> i128 {
    dir.0 as i128 * c.0 + dir.1 as i128 * c.1
}

/// Smallest integer `g` with `g >= t sqrt(p^2 + q^2)`, rounded up once more
/// so the gap certifies Euclidean distance `>= t` despite float rounding.
fn lattice_gap(t: f64, dir: (i64, i64)) -> i128 {
    let norm = ((dir.0 * dir.0 + dir.1 * dir.1) as f64).sqrt();
    (t * norm).ceil() as i128 + 1
}

/// Finds blocks `I`, `J` of size at least `m` whose values are pairwise at
/// least `dist` apart (`dist` in lattice units of `y`).
pub fn find_separation(y: &KVector, m: usize, dist: f64) -> Option<Separation> {
    let n = y.len();
    if m == 0 || 2 * m > n {
        return None;
    }
    let mut keys: Vec<i128> = Vec::with_capacity(n);
    for dir in DIRECTIONS {
        keys.clear();
        keys.extend(y.coords().iter().map(|&c| project(c, dir)));
        let (_, &mut cut, _) = keys.select_nth_unstable(m - 1);
        let gap = lattice_gap(dist, dir);
        let size_j = keys.iter().filter(|&&s| s >= cut + gap).count();
        if size_j >= m {
            let size_i = keys.iter().filter(|&&s| s <= cut).count();
            return Some(Separation { direction: dir, cut, gap, size_i, size_j });
        }
    }
    None
}

/// Separation at `theta0 / 2` with blocks of size `n3 / 4` in the
/// `k`-approximation, `k >= 5 / theta0`.
pub fn separation_check(y: &KVector, params: &TaxonomyParams) -> Result<Option<Separation>, DecompError> {
    let k = y.k() as f64;
    if k * params.theta0 < 5.0 * (1.0 - 1e-12) {
        return Err(DecompError::InvalidInput(format!("k = {k} below 5 / theta0")));
    }
    Ok(find_separation(y, params.n3.div_ceil(4), k * params.theta0 / 2.0))
}

/// Orders with cumulative spread-plus-regular height at least ten cover
/// `n3 / 8` coordinates, or spread parts cover `n3 / 120`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeightDichotomy {
    pub tall_orders_cardinality: usize,
    pub spread_cardinality: usize,
    pub tall_branch: bool,
    pub spread_branch: bool,
}

impl HeightDichotomy {
    pub fn holds(&self) -> bool {
        self.tall_branch || self.spread_branch
    }
}

pub fn height_dichotomy(decomp: &EllDecomposition, n3: usize) -> HeightDichotomy {
    let mut by_order: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for p in decomp.parts() {
        let e = by_order.entry(p.order).or_default();
        e.0 += p.height();
        e.1 += p.len();
    }
    let tall = by_order.values().filter(|(h, _)| *h >= 10).map(|(_, c)| c).sum::<usize>();
    let spread = decomp.spread_cardinality();
    HeightDichotomy { tall_orders_cardinality: tall, spread_cardinality: spread, tall_branch: 8 * tall >= n3, spread_branch: 120 * spread >= n3 }
}

/// `|{i : 2 |J^{u+1}(i)| <= |J^u(i)|}|` where `J^u(i)` is the level of `i`
/// in the `d^u`-approximation.
pub fn halving_count(coarse: &KVector, fine: &KVector) -> usize {
    let n = coarse.len();
    let a = ValueGroups::new(coarse.coords()).group_sizes(n);
    let b = ValueGroups::new(fine.coords()).group_sizes(n);
    (0..n).filter(|&i| 2 * b[i] <= a[i]).count()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Halving {
    pub u: u32,
    pub spread_u: usize,
    pub spread_u1: usize,
    pub count: usize,
    pub holds: bool,
}

/// Spread mass at `u` or `u + 1`, or many halving coordinates.
pub fn halving_trichotomy(x: &[Complex64], u: u32, c_k: f64, d: usize, n3: usize) -> Result<Halving, DecompError> {
    if u < 4 {
        return Err(DecompError::InvalidInput("u must be at least 4".into()));
    }
    let ya = KVector::approx(x, resolution(d, u)?)?;
    let yb = KVector::approx(x, resolution(d, u + 1)?)?;
    let sa = decompose(&ya, d)?.spread_cardinality();
    let sb = decompose(&yb, d)?.spread_cardinality();
    let count = halving_count(&ya, &yb);
    let thr = c_k * n3 as f64;
    let holds = sa as f64 >= thr || sb as f64 >= thr || 192 * count >= n3;
    Ok(Halving { u, spread_u: sa, spread_u1: sb, count, holds })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "branch")]
pub enum CoverBranch {
    Ku { u: u32 },
    Pv,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverWitness {
    pub branch: CoverBranch,
    pub certificate: Certificate,
    /// Spread cardinality at each `u` examined before the witness was found.
    pub spread_by_u: Vec<(u32, usize)>,
}

/// Everything computed for one gradual vector: the cover witness and the
/// separation and height lemmas at `k = d^4`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverAnalysis {
    pub witness: CoverWitness,
    pub separation: Option<Separation>,
    pub dichotomy: HeightDichotomy,
}

impl CoverAnalysis {
    pub fn all_hold(&self) -> bool {
        self.separation.is_some() && self.dichotomy.holds()
    }
}

fn witness_search(x: &[Complex64], v: u32, consts: &CoverConstants, params: &TaxonomyParams, first: EllDecomposition) -> Result<CoverWitness, DecompError> {
    let mut spread_by_u = Vec::new();
    let mut decomp = first;
    for u in 4..=v {
        if u > 4 {
            decomp = decompose_at(x, params.d, u)?;
        }
        let c = spread_certificate(&decomp, u, consts.c_k, params.n3);
        spread_by_u.push((u, c.total));
        if c.meets() {
            return Ok(CoverWitness { branch: CoverBranch::Ku { u }, certificate: c, spread_by_u });
        }
    }
    let c = tall_certificate(&decomp, v, consts.c_p, params.consts.a3, params.n3);
    if c.meets() {
        return Ok(CoverWitness { branch: CoverBranch::Pv, certificate: c, spread_by_u });
    }
    Err(DecompError::CoverFailure(format!("spread by u {spread_by_u:?}, tall total {} < {}", c.total, c.threshold)))
}

/// Searches `u = 4..=v` for spread mass, else certifies the tall-part class
/// at `v`.
pub fn cover_witness(x: &[Complex64], v: u32, consts: &CoverConstants, params: &TaxonomyParams) -> Result<CoverWitness, DecompError> {
    if v < 5 {
        return Err(DecompError::InvalidInput("v must be at least 5".into()));
    }
    require_in_s(x, params)?;
    witness_search(x, v, consts, params, decompose_at(x, params.d, 4)?)
}

/// Cover witness plus the separation and height lemmas, sharing the
/// `d^4` decomposition.
pub fn cover_analysis(x: &[Complex64], v: u32, consts: &CoverConstants, params: &TaxonomyParams) -> Result<CoverAnalysis, DecompError> {
    require_in_s(x, params)?;
    cover_analysis_prechecked(x, v, consts, params)
}

/// `cover_analysis` for a vector the caller has already placed in the
/// normalized gradual set (as `synthetic_gradual` does).
pub fn cover_analysis_prechecked(x: &[Complex64], v: u32, consts: &CoverConstants, params: &TaxonomyParams) -> Result<CoverAnalysis, DecompError> {
    if v < 5 {
        return Err(DecompError::InvalidInput("v must be at least 5".into()));
    }
    let y = KVector::approx(x, resolution(params.d, 4)?)?;
    let separation = separation_check(&y, params)?;
    let decomp = decompose(&y, params.d)?;
    let dichotomy = height_dichotomy(&decomp, params.n3);
    let witness = witness_search(x, v, consts, params, decomp)?;
    Ok(CoverAnalysis { witness, separation, dichotomy })
}

/// Candidate vectors for the gradual corpus, drawn from several shapes:
/// Gaussian, uniform square, equi-spaced with jitter, finite mixtures with
/// optional noise, power profiles with random phases, and coarse lattice
/// values. Not every candidate is gradual.
pub fn synthetic_candidate<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Complex64> {
    let c = Complex64::new;
    match rng.random_range(0..6) {
        0 => (0..n).map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect(),
        1 => (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        2 => {
            let jitter = 10f64.powf(rng.random_range(-9.0..-2.0));
            (0..n).map(|i| c(i as f64 / n as f64, jitter * rng.random_range(-1.0..1.0))).collect()
        }
        3 => {
            let m = rng.random_range(3..30);
            let centers: Vec<Complex64> = (0..m).map(|_| c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
            let noise = if rng.random_bool(0.5) { 0.0 } else { 10f64.powf(rng.random_range(-8.0..-1.0)) };
            (0..n).map(|_| centers[rng.random_range(0..m)] + c(noise * rng.random_range(-1.0..1.0), noise * rng.random_range(-1.0..1.0))).collect()
        }
        4 => {
            let e: f64 = rng.random_range(0.1..0.6);
            (0..n).map(|i| Complex64::from_polar(((i + 1) as f64 / n as f64).powf(-e), rng.random_range(0.0..std::f64::consts::TAU))).collect()
        }
        _ => {
            let side = rng.random_range(2..200i64);
            let scale = 1.0 / side as f64;
            (0..n).map(|_| c(rng.random_range(-side..=side) as f64 * scale, rng.random_range(-side..=side) as f64 * scale)).collect()
        }
    }
}

/// First gradual, normalized candidate within `max_tries`, with the number
/// of candidates drawn.
pub fn synthetic_gradual<R: Rng + ?Sized>(params: &TaxonomyParams, rng: &mut R, max_tries: usize) -> Option<(Vec<Complex64>, usize)> {
    for t in 1..=max_tries {
        if let Some(x) = normalize(&synthetic_candidate(params.n, rng), params) {
            if require_in_s(&x, params).is_ok() {
                return Some((x, t));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::taxonomy::{derive_params, TaxonomyConstants};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn params(n: usize, a3: f64) -> TaxonomyParams {
        let consts = TaxonomyConstants { p_scale: 1.0, a3, ..Default::default() };
        derive_params(n, 20, 1, &consts, false).unwrap()
    }

    fn gaussian(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = rng_from(seed, 0);
        (0..n).map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect()
    }

    fn candidate(n: usize, seed: u64) -> Vec<Complex64> {
        synthetic_candidate(n, &mut rng_from(seed, 1))
    }

    fn gradual(n: usize, seed: u64, p: &TaxonomyParams) -> Option<Vec<Complex64>> {
        let x = normalize(&candidate(n, seed), p)?;
        require_in_s(&x, p).ok().map(|_| x)
    }

    #[test]
    fn normalize_hits_one() {
        let p = params(2000, 0.05);
        let x = normalize(&gaussian(2000, 3), &p).unwrap();
        assert_eq!(XStar::partial(&x, 0, &[p.n3]).get(p.n3), 1.0);
        assert!(require_in_s(&x, &p).is_ok());
        assert!(matches!(require_in_s(&gaussian(2000, 3).iter().map(|v| v * 2.0).collect::<Vec<_>>(), &p), Err(DecompError::NotInS(_))));
    }

    #[test]
    fn ku_examples() {
        // blocks whose values all sit within d / d^u: no spread parts
        let k = 20f64.powi(4);
        let x: Vec<Complex64> = (0..400).map(|i| c(((i % 4) as f64) * 4.0 / k, 0.0)).collect();
        let cert = in_ku_unchecked(&x, 4, 1.0 / 128.0, 20, 100).unwrap();
        assert_eq!(cert.total, 0);
        assert!(!cert.meets());
        // 40 coordinates pairwise 1/4096 > 1/d^3 apart plus a constant bulk
        let x: Vec<Complex64> = (0..400).map(|i| if i < 40 { c(i as f64 / 4096.0 + 0.5, 0.0) } else { c(0.0, 0.0) }).collect();
        let cert = in_ku_unchecked(&x, 4, 0.1, 20, 400).unwrap();
        assert!(cert.total >= 40 && cert.meets());
        // c_k = 0 is met at threshold zero
        let cert = in_ku_unchecked(&x, 4, 0.0, 20, 400).unwrap();
        assert!(cert.meets());
    }

    #[test]
    fn pv_examples() {
        // threshold far below one: every gradual vector qualifies
        let p = params(2000, 0.05);
        assert!(tall_height_threshold(8, 1.0 / 12800.0, 1.0 / 1200.0) < 1.0);
        let x = normalize(&gaussian(2000, 5), &p).unwrap();
        let (ok, cert) = in_pv(&x, 8, 1.0 / 12800.0, p.consts.a3, &p).unwrap();
        assert!(ok && cert.total == 2000);
        assert!(in_pv(&x, 4, 0.5, 0.5, &p).is_err());
        // a single level: every part has height one; threshold 2 excludes all
        let x = vec![c(1.0, 0.0); 64];
        let cert = in_pv_unchecked(&x, 5, 1.0, 2.0, 20, 10).unwrap();
        assert!(tall_height_threshold(5, 1.0, 2.0) > 1.0);
        assert_eq!(cert.total, 0);
        // equi-spaced values: the order-0 parts are tall
        let x: Vec<Complex64> = (0..512).map(|i| c(i as f64 / 512.0, 0.0)).collect();
        let cert = in_pv_unchecked(&x, 5, 0.5, 8.0, 20, 100).unwrap();
        assert!(cert.meets());
    }

    #[test]
    fn rho_delta_examples() {
        let mut x = gaussian(1000, 9);
        for v in x.iter_mut().take(300) {
            *v = c(0.25, -0.5);
        }
        assert!(matches!(rho_delta_ball(&x, 1e-12, 0.3), BallMembership::Yes { count, .. } if count >= 300));
        assert!(matches!(rho_delta_ball(&x, 1e-12, 1.5), BallMembership::No { .. }));
        let p = params(1000, 0.05);
        let x = normalize(&x, &p).unwrap();
        let r = in_pv_rho_delta(&x, 5, 1e-9, 0.3, &CoverConstants::default(), &p).unwrap();
        assert_eq!(r.holds(), Some(true));
        assert!(r.rho_in_range);
        let dec = decompose_at(&x, 20, 5).unwrap();
        assert!(small_order_wset(&dec, 0.3).holds);
    }

    #[test]
    fn separation_examples() {
        let p = params(2000, 0.05);
        let x = normalize(&gaussian(2000, 11), &p).unwrap();
        let y = KVector::approx(&x, 20u128.pow(4)).unwrap();
        let s = separation_check(&y, &p).unwrap().expect("separated");
        let (a, b) = s.members(&y);
        assert!(a.len() >= p.n3.div_ceil(4) && b.len() >= p.n3.div_ceil(4));
        // brute-force distance check on a subsample
        let t = 20f64.powi(4) * p.theta0 / 2.0;
        for &i in a.iter().step_by(7) {
            for &j in b.iter().step_by(7) {
                let (yi, yj) = (y.coords()[i], y.coords()[j]);
                let (dx, dy) = ((yi.0 - yj.0) as f64, (yi.1 - yj.1) as f64);
                assert!((dx * dx + dy * dy).sqrt() >= t);
            }
        }
        assert!(separation_check(&KVector::approx(&x, 100).unwrap(), &p).is_err());
        // a constant vector has no separation
        let y = KVector::approx(&vec![c(1.0, 0.0); 100], 8000).unwrap();
        assert!(find_separation(&y, 10, 5.0).is_none());
    }

    #[test]
    fn halving_count_examples() {
        // coarse: one level of size 4; fine: two levels of size 2
        let coarse = KVector::new(1, vec![(0, 0); 4]).unwrap();
        let fine = KVector::new(1, vec![(0, 0), (0, 0), (1, 0), (1, 0)]).unwrap();
        assert_eq!(halving_count(&coarse, &fine), 4);
        let fine = KVector::new(1, vec![(0, 0), (0, 0), (0, 0), (1, 0)]).unwrap();
        assert_eq!(halving_count(&coarse, &fine), 1);
    }

    #[test]
    fn cover_on_gradual_vectors() {
        let p = params(3000, 0.05);
        let mut seen = 0;
        for seed in 0..12 {
            if let Some(x) = gradual(3000, seed, &p) {
                seen += 1;
                let a = cover_analysis(&x, 8, &CoverConstants::default(), &p).unwrap();
                assert!(a.all_hold(), "seed {seed}: {a:?}");
                assert_eq!(a.witness, cover_witness(&x, 8, &CoverConstants::default(), &p).unwrap());
            }
        }
        assert!(seen >= 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn deterministic_lemmas_hold(seed in any::<u64>(), n in 400usize..2000) {
            let p = params(n, 0.05);
            if let Some(x) = gradual(n, seed, &p) {
                let a = cover_analysis(&x, 6, &CoverConstants::default(), &p).unwrap();
                prop_assert!(a.separation.is_some());
                prop_assert!(a.dichotomy.holds());
                for u in 4..6 {
                    let h = halving_trichotomy(&x, u, CoverConstants::default().c_k_halving, 20, p.n3).unwrap();
                    prop_assert!(h.holds, "{:?}", h);
                }
            }
        }

        #[test]
        fn rho_set_has_small_order_wset(seed in any::<u64>(), frac in 0.05f64..0.5) {
            let n = 1000;
            let p = params(n, 0.05);
            let mut x = gaussian(n, seed);
            let cnt = (frac * n as f64).ceil() as usize;
            for v in x.iter_mut().take(cnt) {
                *v = c(0.3, 0.1);
            }
            if let Some(x) = normalize(&x, &p) {
                if require_in_s(&x, &p).is_ok() {
                    let v = 5;
                    let r = in_pv_rho_delta(&x, v, 1e-9, frac, &CoverConstants::default(), &p).unwrap();
                    if r.holds() == Some(true) && r.rho_in_range {
                        let dec = decompose_at(&x, 20, v).unwrap();
                        prop_assert!(small_order_wset(&dec, frac).holds);
                    }
                }
            }
        }
    }
}
