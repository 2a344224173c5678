//! Derived scale parameters and the steep / almost-constant / gradual
//! classification of complex vectors, with the deterministic decay, norm,
//! lower-bound and splitting checks that go with it.

use crate::ball::{count_within, max_ball_bracket};
use crate::graph::{ComplexShift, RegularMatrix, RowMask};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaxonomyError {
    #[error("invalid parameter window: {0}")]
    InvalidWindow(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("zero vector")]
    ZeroVector,
    #[error("postcondition failed: {0}")]
    Postcondition(String),
}

/// Hard-coded constants of the class definitions; all overridable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaxonomyConstants {
    pub a3: f64,
    /// `p = floor(p_scale * sqrt(d / ln d))`.
    pub p_scale: f64,
    /// Jump factor `J / d` in the `T0` classes.
    pub jump: f64,
    /// Exponent of `d` in the `T1` and `T2` jumps.
    pub steep_exp: f64,
    pub very_steep: f64,
    /// Shift bound `|c| <= w*_{n1} / shift_ratio`.
    pub shift_ratio: f64,
    /// `theta0 = theta_scale / d^3`.
    pub theta_scale: f64,
}

impl Default for TaxonomyConstants {
    fn default() -> Self {
        TaxonomyConstants { a3: 1.0 / 1200.0, p_scale: 0.2, jump: 4.0, steep_exp: 1.5, very_steep: 0.9, shift_ratio: 10.0, theta_scale: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaxonomyParams {
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub eps0: f64,
    pub p: usize,
    pub r: u32,
    pub r0: u32,
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub theta0: f64,
    pub consts: TaxonomyConstants,
    /// `n0 < n1 < n2 < n3 < n`.
    pub ordered: bool,
    /// Departures from the nominal window that were accepted.
    pub notes: Vec<String>,
}

/// Smallest `a` with `a^num * den_base >= n^num`-style tests are done on
/// integers: returns the largest `v` with `pred(v)` true, `pred` monotone
/// decreasing, starting from a float guess.
fn adjust_largest(guess: f64, pred: impl Fn(u128) -> bool) -> u128 {
    let mut v = guess.max(0.0).floor() as u128;
    while v > 0 && !pred(v) {
        v -= 1;
    }
    while pred(v + 1) {
        v += 1;
    }
    v
}

fn sat_pow(p: usize, e: u32) -> usize {
    p.checked_pow(e).unwrap_or(usize::MAX)
}

/// Derived parameters. Outside the nominal window (`n < d^3` or
/// `L > n / d^3`) a note is recorded unless `strict` is set, in which case
/// it is an error. `p < 2` and `d < 3` are always errors.
pub fn derive_params(n: usize, d: usize, l: usize, consts: &TaxonomyConstants, strict: bool) -> Result<TaxonomyParams, TaxonomyError> {
    if d < 3 {
        return Err(TaxonomyError::InvalidWindow(format!("d = {d} < 3")));
    }
    if n == 0 || l == 0 {
        return Err(TaxonomyError::InvalidWindow("n and L must be positive".into()));
    }
    let (n128, d128, l128) = (n as u128, d as u128, l as u128);
    let mut notes = Vec::new();
    let d3 = d128 * d128 * d128;
    if n128 < d3 {
        if strict {
            return Err(TaxonomyError::InvalidWindow(format!("n = {n} < d^3 = {d3}")));
        }
        notes.push(format!("n = {n} below d^3 = {d3}"));
    }
    if l128 * d3 > n128 {
        if strict {
            return Err(TaxonomyError::InvalidWindow(format!("L = {l} > n / d^3")));
        }
        notes.push(format!("L = {l} above n / d^3"));
    }
    let df = d as f64;
    let eps0 = (df.ln() / df).sqrt();
    let p = (consts.p_scale * (df / df.ln()).sqrt()).floor() as usize;
    if p < 2 {
        return Err(TaxonomyError::InvalidWindow(format!("p = {p} < 2")));
    }
    let n0 = n / (16 * d);
    // n1 = ceil(n / d^{3/2}): smallest v with v^2 d^3 >= n^2
    let n1 = {
        let largest_below = adjust_largest(n as f64 / df.powf(1.5), |v| v * v * d3 < n128 * n128);
        (largest_below + 1) as usize
    };
    // n2 = floor(n / d^{2/3}): largest v with v^3 d^2 <= n^3
    let n2 = adjust_largest(n as f64 / df.powf(2.0 / 3.0), |v| v * v * v * d128 * d128 <= n128 * n128 * n128) as usize;
    let n3 = {
        let mut v = (n as f64 * consts.a3).floor();
        if (v + 1.0) / n as f64 <= consts.a3 {
            v += 1.0;
        }
        v as usize
    };
    // r: largest with p^r < n1; r0: smallest with p^{r0} d >= 20 L
    let mut r = 0u32;
    while sat_pow(p, r + 1) < n1 {
        r += 1;
    }
    if n1 <= 1 {
        notes.push("n1 <= 1: r set to 0".into());
    }
    let mut r0 = 0u32;
    while (sat_pow(p, r0) as u128).saturating_mul(d128) < 20 * l128 {
        r0 += 1;
    }
    if r0 >= r {
        if strict {
            return Err(TaxonomyError::InvalidWindow(format!("r0 = {r0} >= r = {r}")));
        }
        notes.push(format!("r0 = {r0} not below r = {r}"));
    }
    let ordered = n0 < n1 && n1 < n2 && n2 < n3 && n3 < n;
    Ok(TaxonomyParams {
        n,
        d,
        l,
        eps0,
        p,
        r,
        r0,
        n0,
        n1,
        n2,
        n3,
        theta0: consts.theta_scale / (df * df * df),
        consts: consts.clone(),
        ordered,
        notes,
    })
}

impl TaxonomyParams {
    pub fn p_pow(&self, e: u32) -> usize {
        sat_pow(self.p, e)
    }

    pub fn jump_factor(&self) -> f64 {
        self.consts.jump * self.d as f64
    }

    pub fn steep_factor(&self) -> f64 {
        (self.d as f64).powf(self.consts.steep_exp)
    }

    /// Sufficient conditions under which every vector outside the steep
    /// classes satisfies the three decay families (the chain of `T0` jumps
    /// must fit under the polynomial envelopes).
    pub fn decay_window_holds(&self) -> bool {
        if self.r0 >= self.r || self.n1 < 2 {
            return false;
        }
        let (n, d) = (self.n as f64, self.d as f64);
        let lj = self.jump_factor().ln();
        let ld = d.ln();
        let le = self.steep_factor().ln();
        // x*_{p^r} <= J x*_{n1} <= J d^{2e} x*_{n3}
        let base = |j: u32| (self.r - j + 1) as f64 * lj + 2.0 * le;
        let cube = |m: usize| 3.0 * (n / m as f64).ln();
        let fam_a = base(self.r0) <= cube(self.p_pow(self.r0));
        let fam_b = (self.r0..self.r).all(|j| base(j) - ld <= cube(self.p_pow(j + 1)));
        let tail = lj + 2.0 * le - ld <= cube(self.n1);
        fam_a && fam_b && tail && 2.0 * le <= 3.0 * ld + 1e-12
    }

    /// Sufficient condition for the norm comparison on vectors outside `T3`.
    pub fn norm_window_holds(&self) -> bool {
        if self.r0 > self.r {
            return false;
        }
        let (n, d, l) = (self.n as f64, self.d as f64, self.l as f64);
        let e = (self.r - self.r0 + 1) as f64;
        let lhs = 0.5 * (1.0174 * n.powi(6) + n).ln() + e * self.jump_factor().ln() + 100f64.ln() + 3.0 * l.ln() + 1.5 * d.ln();
        lhs <= 6.0 * n.ln()
    }
}

/// Non-increasing rearrangement of moduli, lexicographic rearrangement and
/// the permutation realizing the latter (`xsharp[i] = x[perm[i]]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Rearrangement {
    pub xstar: Vec<f64>,
    pub xsharp: Vec<Complex64>,
    pub perm: Vec<usize>,
}

fn lex_desc(a: &Complex64, b: &Complex64) -> Ordering {
    b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im))
}

pub fn rearrangement(x: &[Complex64]) -> Rearrangement {
    let mut xstar: Vec<f64> = x.iter().map(|v| v.norm()).collect();
    xstar.sort_by(|a, b| b.total_cmp(a));
    let mut perm: Vec<usize> = (0..x.len()).collect();
    perm.sort_by(|&a, &b| lex_desc(&x[a], &x[b]));
    let xsharp = perm.iter().map(|&i| x[i]).collect();
    Rearrangement { xstar, xsharp, perm }
}

/// Selected order statistics of `(|x_i|)`: a sorted prefix plus isolated
/// ranks. Ranks are 1-based and clamped to `[1, n]`.
#[derive(Clone, Debug)]
pub struct XStar {
    n: usize,
    prefix: Vec<f64>,
    picks: Vec<(usize, f64)>,
}

impl XStar {
    pub fn full(x: &[Complex64]) -> Self {
        XStar::partial(x, x.len(), &[])
    }

    pub fn from_moduli_sorted(v: Vec<f64>) -> Self {
        XStar { n: v.len(), prefix: v, picks: Vec::new() }
    }

    /// Sorted prefix of length `prefix` plus the given ranks, by repeated
    /// selection.
    pub fn partial(x: &[Complex64], prefix: usize, ranks: &[usize]) -> Self {
        let n = x.len();
        // squared moduli order the same way and avoid hypot; fall back when
        // squaring could lose range
        let safe = x.iter().all(|c| {
            let m = c.re.abs().max(c.im.abs());
            m == 0.0 || (1e-150..1e150).contains(&m)
        });
        let mut v: Vec<f64> = if safe { x.iter().map(|c| c.norm_sqr()).collect() } else { x.iter().map(|c| c.norm()).collect() };
        let finish = |a: f64| if safe { a.sqrt() } else { a };
        let desc = |a: &f64, b: &f64| b.total_cmp(a);
        let p = prefix.min(n);
        if p == n {
            v.sort_unstable_by(desc);
            return XStar { n, prefix: v.into_iter().map(finish).collect(), picks: Vec::new() };
        }
        if p > 0 {
            v.select_nth_unstable_by(p - 1, desc);
        }
        let mut head = v[..p].to_vec();
        head.sort_unstable_by(desc);
        let mut ranks: Vec<usize> = ranks.iter().map(|&r| r.clamp(1, n.max(1))).filter(|&r| r > p).collect();
        ranks.sort_unstable();
        ranks.dedup();
        let mut picks = Vec::with_capacity(ranks.len());
        let mut lo = p;
        for r in ranks {
            let (_, val, _) = v[lo..].select_nth_unstable_by(r - 1 - lo, desc);
            picks.push((r, finish(*val)));
            lo = r;
        }
        XStar { n, prefix: head.into_iter().map(finish).collect(), picks }
    }

    /// Everything `classify` and the decay checks need.
    pub fn for_params(x: &[Complex64], params: &TaxonomyParams) -> Self {
        let top = params.p_pow(params.r0).max(params.n1).max(params.n1.div_ceil(params.p)).min(x.len());
        let mut ranks = vec![params.n0, params.n1, params.n2, params.n3];
        for i in 0..=params.r + 1 {
            ranks.push(params.p_pow(i).min(x.len()));
        }
        XStar::partial(x, top, &ranks)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix.len()
    }

    /// `x*_i` with `i` clamped to `[1, n]`.
    pub fn get(&self, i: usize) -> f64 {
        let i = i.clamp(1, self.n.max(1));
        if i <= self.prefix.len() {
            return self.prefix[i - 1];
        }
        match self.picks.binary_search_by_key(&i, |p| p.0) {
            Ok(k) => self.picks[k].1,
            Err(_) => panic!("order statistic {i} was not computed"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SteepClass {
    T3,
    T0(u32),
    T1,
    T2,
    None,
}

/// Steep subclass by the definitional precedence: `T3`, then `T0,i` for
/// increasing `i`, then `T1`, then `T2`.
pub fn steep_class(xs: &XStar, params: &TaxonomyParams) -> SteepClass {
    let n = params.n as f64;
    let top = params.p_pow(params.r0).min(params.n);
    let anchor = xs.get(top);
    for i in 1..=top {
        let f = (n / i as f64).powi(3);
        if xs.get(i) > f * anchor {
            return SteepClass::T3;
        }
    }
    let jf = params.jump_factor();
    for i in params.r0..params.r {
        if xs.get(params.p_pow(i)) > jf * xs.get(params.p_pow(i + 1)) {
            return SteepClass::T0(i);
        }
    }
    if params.r0 <= params.r && xs.get(params.n1.div_ceil(params.p)) > jf * xs.get(params.n1) {
        return SteepClass::T0(params.r);
    }
    let sf = params.steep_factor();
    if xs.get(params.n1) > sf * xs.get(params.n2) {
        return SteepClass::T1;
    }
    if xs.get(params.n2) > sf * xs.get(params.n3) {
        return SteepClass::T2;
    }
    SteepClass::None
}

/// `n^{-3} sup_{i <= m} i^3 x*_i`; zero for `m = 0`.
pub fn weak13_norm(x: &[Complex64], m: usize) -> f64 {
    let xs = XStar::partial(x, m.min(x.len()), &[]);
    weak13_norm_sorted(&xs, m)
}

pub fn weak13_norm_sorted(xs: &XStar, m: usize) -> f64 {
    let n = xs.n() as f64;
    (1..=m.min(xs.n())).map(|i| (i as f64).powi(3) * xs.get(i) / n.powi(3)).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AcWitness {
    pub lambda: Complex64,
    pub radius: f64,
    /// Indices within `radius` of `lambda`.
    pub j1: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlmostConstant {
    Witness(AcWitness),
    Absent,
    /// Some center certifies at radius `radius (1 + sqrt(2)/8)` but none at
    /// `radius`.
    Undecided { best_count: usize },
}

impl AlmostConstant {
    pub fn witness(&self) -> Option<&AcWitness> {
        match self {
            AlmostConstant::Witness(w) => Some(w),
            _ => None,
        }
    }
}

const GRID_STEPS_MAX: usize = 41;

/// Searches for `lambda` with more than `n - n3` coordinates within
/// `theta x*_{n3}`. The center must lie in the box cut out by the order
/// statistics of the real and imaginary parts; a grid of pitch `R/4` over
/// that box finds every witness that exists at radius `0.82 R` and certifies
/// absence when no grid center reaches the count at radius `1.18 R`.
pub fn almost_constant_witness(x: &[Complex64], theta: f64, xn3: f64, n3: usize) -> Result<AlmostConstant, TaxonomyError> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(TaxonomyError::InvalidInput("theta must be positive".into()));
    }
    let n = x.len();
    if n == 0 || n3 == 0 || n3 > n {
        return Ok(AlmostConstant::Absent);
    }
    let need = n - n3 + 1;
    let radius = theta * xn3;
    let finish = |lambda: Complex64| -> AlmostConstant {
        let r2 = radius * radius;
        let j1: Vec<usize> = (0..n).filter(|&i| (x[i] - lambda).norm_sqr() <= r2).collect();
        if xn3 > 0.0 {
            let m = lambda.norm();
            let slack = 1e-9 * xn3;
            assert!(
                m >= (1.0 - theta) * xn3 - slack && m <= (1.0 + theta) * xn3 + slack,
                "almost-constant center violates the modulus bracket"
            );
        }
        AlmostConstant::Witness(AcWitness { lambda, radius, j1 })
    };
    if radius == 0.0 {
        let mut v: Vec<(u64, u64)> = x.iter().map(|c| (c.re.to_bits(), c.im.to_bits())).collect();
        v.sort_unstable();
        let (mut best, mut at, mut run) = (0usize, 0usize, 0usize);
        for i in 0..v.len() {
            run = if i > 0 && v[i] == v[i - 1] { run + 1 } else { 1 };
            if run > best {
                best = run;
                at = i;
            }
        }
        if best >= need {
            let lambda = Complex64::new(f64::from_bits(v[at].0), f64::from_bits(v[at].1));
            return Ok(finish(lambda));
        }
        return Ok(AlmostConstant::Absent);
    }
    let bounds = |f: &dyn Fn(&Complex64) -> f64| -> (f64, f64) {
        let mut v: Vec<f64> = x.iter().map(f).collect();
        let (_, hi_w, _) = v.select_nth_unstable_by(need - 1, |a, b| a.total_cmp(b));
        let hi_w = *hi_w;
        let (_, lo_n3, _) = v.select_nth_unstable_by(n3 - 1, |a, b| a.total_cmp(b));
        (hi_w - radius, *lo_n3 + radius)
    };
    let (re_lo, re_hi) = bounds(&|c| c.re);
    let (im_lo, im_hi) = bounds(&|c| c.im);
    if re_lo > re_hi || im_lo > im_hi {
        return Ok(AlmostConstant::Absent);
    }
    let mid = Complex64::new(0.5 * (re_lo + re_hi), 0.5 * (im_lo + im_hi));
    if count_within(x, mid, radius) >= need {
        return Ok(finish(mid));
    }
    let pitch = radius / 4.0;
    let steps = |lo: f64, hi: f64| ((hi - lo) / pitch).ceil() as usize + 1;
    let (sr, si) = (steps(re_lo, re_hi), steps(im_lo, im_hi));
    if sr > GRID_STEPS_MAX || si > GRID_STEPS_MAX {
        return Ok(AlmostConstant::Undecided { best_count: 0 });
    }
    let outer = radius * (1.0 + std::f64::consts::SQRT_2 / 8.0);
    let (mut best, mut best_c, mut best_outer) = (0usize, mid, 0usize);
    for a in 0..sr {
        for b in 0..si {
            let c = Complex64::new((re_lo + a as f64 * pitch).min(re_hi), (im_lo + b as f64 * pitch).min(im_hi));
            let cnt = count_within(x, c, radius);
            if cnt > best {
                best = cnt;
                best_c = c;
            }
            best_outer = best_outer.max(count_within(x, c, outer));
        }
    }
    if best >= need {
        return Ok(finish(best_c));
    }
    if best_outer < need {
        return Ok(AlmostConstant::Absent);
    }
    Ok(AlmostConstant::Undecided { best_count: best })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaxVerdict {
    pub steep_class: SteepClass,
    pub almost_constant: bool,
    pub lambda0: Option<Complex64>,
    /// The almost-constant search could not decide.
    pub ac_undecided: bool,
    pub gradual: bool,
    /// `x*_{n3} = 1` (membership in the normalized gradual set).
    pub normalized: bool,
    /// `x*_{n3} = 0`; the steep class is then forced to `T3`.
    pub degenerate: bool,
    pub xstar_n3: f64,
}

pub fn classify(x: &[Complex64], params: &TaxonomyParams) -> Result<TaxVerdict, TaxonomyError> {
    if x.len() != params.n {
        return Err(TaxonomyError::InvalidInput(format!("length {} != n = {}", x.len(), params.n)));
    }
    if x.iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
        return Err(TaxonomyError::ZeroVector);
    }
    let xs = XStar::for_params(x, params);
    classify_with(x, &xs, params)
}

pub fn classify_with(x: &[Complex64], xs: &XStar, params: &TaxonomyParams) -> Result<TaxVerdict, TaxonomyError> {
    let xn3 = xs.get(params.n3);
    let degenerate = xn3 == 0.0;
    let mut steep = steep_class(xs, params);
    if degenerate && steep == SteepClass::None {
        steep = SteepClass::T3;
    }
    let ac = almost_constant_witness(x, params.theta0, xn3, params.n3)?;
    let lambda0 = ac.witness().map(|w| w.lambda);
    let almost_constant = lambda0.is_some();
    let ac_undecided = matches!(ac, AlmostConstant::Undecided { .. });
    Ok(TaxVerdict {
        steep_class: steep,
        almost_constant,
        lambda0,
        ac_undecided,
        gradual: steep == SteepClass::None && !almost_constant && !ac_undecided,
        normalized: (xn3 - 1.0).abs() <= 1e-12,
        degenerate,
        xstar_n3: xn3,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayFamily {
    /// `x*_m <= (n/m)^6 x*_{n3}`, `m <= p^{r0}`.
    Head,
    /// `x*_m <= d (n/m)^3 x*_{n3}`, `p^{r0} <= m <= n1`.
    Middle,
    /// `x*_{n1} <= d^3 x*_{n3}`.
    Tail,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayViolation {
    pub family: DecayFamily,
    pub m: usize,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn decay_check(xs: &XStar, params: &TaxonomyParams) -> Vec<DecayViolation> {
    let n = params.n as f64;
    let d = params.d as f64;
    let xn3 = xs.get(params.n3);
    let top = params.p_pow(params.r0).min(params.n);
    let mut out = Vec::new();
    for m in 1..=top {
        let rhs = (n / m as f64).powi(6) * xn3;
        if xs.get(m) > rhs {
            out.push(DecayViolation { family: DecayFamily::Head, m, lhs: xs.get(m), rhs });
        }
    }
    for m in top..=params.n1.min(params.n) {
        let rhs = d * (n / m as f64).powi(3) * xn3;
        if xs.get(m) > rhs {
            out.push(DecayViolation { family: DecayFamily::Middle, m, lhs: xs.get(m), rhs });
        }
    }
    let rhs = d.powi(3) * xn3;
    if xs.get(params.n1) > rhs {
        out.push(DecayViolation { family: DecayFamily::Tail, m: params.n1, lhs: xs.get(params.n1), rhs });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormBound {
    pub m: usize,
    pub norm: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `||x||_2 <= n^6 / (100 L^3 d^{3/2}) x*_m` for `x` outside `T3`, with
/// `m = p^i` on `T0,i` and `m = n1` otherwise. `None` on `T3`.
pub fn norm_bound_check(x: &[Complex64], xs: &XStar, params: &TaxonomyParams) -> Option<NormBound> {
    let m = match steep_class(xs, params) {
        SteepClass::T3 => return None,
        SteepClass::T0(i) => params.p_pow(i).min(params.n),
        _ => params.n1,
    };
    let norm = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let (n, d, l) = (params.n as f64, params.d as f64, params.l as f64);
    let bound = n.powi(6) / (100.0 * l.powi(3) * d.powf(1.5)) * xs.get(m);
    Some(NormBound { m, norm, bound, holds: norm <= bound })
}

/// `x*_{n0} <= t x*_{n3}` with `x*_{n0} > 0`.
pub fn in_s(xs: &XStar, params: &TaxonomyParams, t: f64) -> bool {
    let a = xs.get(params.n0);
    a > 0.0 && a <= t * xs.get(params.n3)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBound {
    pub norm: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `||(M - z)^K x||_2 >= d sqrt(n) / (2 sqrt 2) x*_{n3}`.
pub fn ac_lower_bound(m: &RegularMatrix, z: Complex64, k: &RowMask, x: &[Complex64], xn3: f64) -> Result<LowerBound, TaxonomyError> {
    let y = m.shifted_apply(ComplexShift(z), k, x).map_err(|e| TaxonomyError::InvalidInput(e.to_string()))?;
    let norm = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let bound = m.d() as f64 * (m.n() as f64).sqrt() / (2.0 * std::f64::consts::SQRT_2) * xn3;
    Ok(LowerBound { norm, bound, holds: norm >= bound })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Split {
    pub w: Vec<Complex64>,
    pub c: Complex64,
    pub steep: SteepClass,
    /// `|c| <= w*_{n1} / 10`. Implied by the asserted `w*_{n0}` bound only
    /// when `n1 <= n0`; reported, not asserted.
    pub n1_bound_holds: bool,
}

/// Writes an almost-constant `x` outside `S(t)` as `w + c 1` with `w`
/// steep and `|c| <= w*_{n0} / 10`. `None` when `x` lies in `S(t)`.
pub fn split_shifted(x: &[Complex64], theta: f64, t: f64, params: &TaxonomyParams) -> Result<Option<Split>, TaxonomyError> {
    if !(theta > 0.0 && theta <= params.theta0 * (1.0 + 1e-12)) {
        return Err(TaxonomyError::InvalidInput(format!("theta must lie in (0, {}]", params.theta0)));
    }
    if t < 12.0 || params.consts.a3 * t > 0.01 + 1e-15 {
        return Err(TaxonomyError::InvalidInput("need t >= 12 and a3 t <= 1/100".into()));
    }
    if x.len() != params.n {
        return Err(TaxonomyError::InvalidInput("length mismatch".into()));
    }
    let xs = XStar::for_params(x, params);
    let xn3 = xs.get(params.n3);
    if xn3 == 0.0 {
        return Err(TaxonomyError::InvalidInput("x*_{n3} = 0".into()));
    }
    let lambda = match almost_constant_witness(x, theta, xn3, params.n3)? {
        AlmostConstant::Witness(w) => w.lambda,
        _ => return Err(TaxonomyError::InvalidInput("x is not almost constant".into())),
    };
    if xs.get(params.n0) <= t * xn3 {
        return Ok(None);
    }
    let w: Vec<Complex64> = x.iter().map(|v| v - lambda).collect();
    let ws = XStar::for_params(&w, params);
    let steep = steep_class(&ws, params);
    if steep == SteepClass::None {
        return Err(TaxonomyError::Postcondition("shifted vector is not steep".into()));
    }
    if lambda.norm() > ws.get(params.n0.max(1)) / params.consts.shift_ratio {
        return Err(TaxonomyError::Postcondition("shift exceeds w*_{n0} / 10".into()));
    }
    let n1_bound_holds = lambda.norm() <= ws.get(params.n1) / params.consts.shift_ratio;
    Ok(Some(Split { w, c: lambda, steep, n1_bound_holds }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BallCheck {
    /// Lower and upper brackets for the maximal ball count.
    pub lower: usize,
    pub upper: usize,
    pub limit: f64,
    pub radius: f64,
}

impl BallCheck {
    pub fn certified_ok(&self) -> bool {
        self.upper as f64 <= self.limit
    }

    pub fn certified_violation(&self) -> bool {
        self.lower as f64 > self.limit
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dichotomy {
    pub decay_ok: bool,
    pub ball: BallCheck,
    pub very_steep: bool,
}

impl Dichotomy {
    /// Gradual with many levels, using the certified ball bound.
    pub fn gradual(&self) -> bool {
        self.decay_ok && self.ball.certified_ok()
    }

    pub fn in_some_branch(&self) -> bool {
        self.gradual() || self.very_steep
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DichotomyVerdict {
    /// Decay indexed by `q` and `c' n = n3`.
    pub simple: Dichotomy,
    /// Decay indexed by `p^{r0}`, `n1`, `n3`.
    pub general: Dichotomy,
}

pub fn many_levels_verdict(x: &[Complex64], rho: f64, delta: f64, q: usize, params: &TaxonomyParams) -> Result<DichotomyVerdict, TaxonomyError> {
    if !(rho > 0.0 && delta > 0.0) {
        return Err(TaxonomyError::InvalidInput("rho and delta must be positive".into()));
    }
    let n = params.n;
    if x.len() != n || q == 0 || q > n {
        return Err(TaxonomyError::InvalidInput("need 1 <= q <= n = len(x)".into()));
    }
    let xs = XStar::full(x);
    let nf = n as f64;
    let d = params.d as f64;
    let cube = |i: usize| (nf / i as f64).powi(3);
    let c_n = params.n3.max(1);
    let xc = xs.get(c_n);
    let (lower, upper) = max_ball_bracket(x, rho * xc);
    let ball = BallCheck { lower, upper, limit: delta * nf, radius: rho * xc };
    let vs = params.consts.very_steep;

    let head = (1..=q).all(|i| xs.get(i) <= cube(i) * xs.get(q));
    let tail = (q..=c_n).all(|i| xs.get(i) <= d.powi(3) * cube(i) * cube(i) * xc);
    let very_steep = (1..=q).any(|i| xs.get(i) > vs * cube(i) * xs.get(q));
    let simple = Dichotomy { decay_ok: head && tail, ball, very_steep };

    let top = params.p_pow(params.r0).min(n);
    let g_head = (1..=top).all(|i| xs.get(i) <= cube(i) * xs.get(top));
    let g_mid = (top..=params.n1.min(n)).all(|i| xs.get(i) <= d * cube(i) * xc);
    let g_tail = (params.n1.min(n)..=c_n).all(|i| xs.get(i) <= d.powi(3) * xc);
    let g_steep = (1..=top).any(|i| xs.get(i) > vs * cube(i) * xs.get(top));
    let general = Dichotomy { decay_ok: g_head && g_mid && g_tail, ball, very_steep: g_steep };
    Ok(DichotomyVerdict { simple, general })
}

/// Test vector from one of four shapes: uniform square, Pareto-like real
/// profile, a few huge coordinates over a flat floor, power decay with a
/// small imaginary jitter. Covers steep and non-steep classes.
pub fn fuzz_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Complex64> {
    match rng.random_range(0..4) {
        0 => (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        1 => {
            let s: f64 = rng.random_range(0.5..8.0);
            (0..n).map(|_| Complex64::new(rng.random::<f64>().powf(-1.0 / s), 0.0)).collect()
        }
        2 => {
            let k = rng.random_range(1..40);
            let big: f64 = 10f64.powf(rng.random_range(0.0..12.0));
            (0..n).map(|i| if i < k { Complex64::new(big, 0.0) } else { Complex64::new(rng.random_range(0.5..1.5), 0.0) }).collect()
        }
        _ => {
            let e: f64 = rng.random_range(0.5..6.0);
            (0..n).map(|i| Complex64::new(((i + 1) as f64).powf(-e), rng.random_range(-0.01..0.01))).collect()
        }
    }
}
